#include "panelmdp/config.hpp"

#include <fstream>
#include <set>

namespace panelmdp::harness {

namespace {

// Rejects keys the schema does not know, reporting them by dotted path.
void check_keys(const nlohmann::json& node, const std::string& prefix,
                const std::set<std::string>& allowed) {
    if (!node.is_object()) {
        throw ConfigError("config node " + (prefix.empty() ? "<root>" : prefix) +
                          " must be an object");
    }
    for (const auto& [key, value] : node.items()) {
        (void)value;
        if (!allowed.contains(key)) {
            throw ConfigError("unknown config key: " +
                              (prefix.empty() ? key : prefix + "." + key));
        }
    }
}

template <typename T>
void read_field(const nlohmann::json& node, const char* key, const std::string& prefix,
                T& out) {
    if (!node.contains(key)) return;
    try {
        out = node.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config field " + prefix + key + " has the wrong type");
    }
}

}  // namespace

std::string task_name(Task task) {
    return task == Task::ReOrg ? "re_org" : "select_re_org";
}

Task task_from_name(const std::string& name) {
    if (name == "re_org") return Task::ReOrg;
    if (name == "select_re_org") return Task::SelectReOrg;
    throw ConfigError("task must be re_org or select_re_org, got \"" + name + "\"");
}

namespace {

// Task-dependent defaults before resolution; epsilon.decay_episodes == 0
// means "half of the training episodes", filled in by resolve().
ExperimentConfig raw_defaults(Task task) {
    ExperimentConfig config;
    config.task = task;
    config.panel.rows = 2;
    config.panel.cols = 3;
    config.panel.null_penalty = 0.1;
    config.sim.catalog_size = 100;
    config.sim.dim = 16;
    config.sim.K = task == Task::ReOrg ? 6 : 16;
    config.sim.rho = 0.8;
    config.sim.mu = 0.8;
    config.sim.noise = 0.05;
    config.train_episodes = task == Task::ReOrg ? 10000 : 6000;
    config.eval_episodes = 1000;
    config.agent.epsilon.decay_episodes = 0;
    return config;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults(Task task) {
    ExperimentConfig config = raw_defaults(task);
    config.resolve();
    return config;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& doc) {
    check_keys(doc, "", {"task", "seed", "episodes", "out", "panel", "sim", "agent",
                         "reward_mode", "eval"});

    Task task = Task::ReOrg;
    if (doc.contains("task")) {
        task = task_from_name(doc.at("task").get<std::string>());
    }
    ExperimentConfig config = raw_defaults(task);

    read_field(doc, "seed", "", config.seed);
    read_field(doc, "out", "", config.out_dir);

    if (doc.contains("episodes")) {
        const auto& node = doc.at("episodes");
        check_keys(node, "episodes", {"train", "eval"});
        read_field(node, "train", "episodes.", config.train_episodes);
        read_field(node, "eval", "episodes.", config.eval_episodes);
    }
    if (doc.contains("panel")) {
        const auto& node = doc.at("panel");
        check_keys(node, "panel", {"rows", "cols", "null_penalty"});
        read_field(node, "rows", "panel.", config.panel.rows);
        read_field(node, "cols", "panel.", config.panel.cols);
        read_field(node, "null_penalty", "panel.", config.panel.null_penalty);
    }
    if (doc.contains("sim")) {
        const auto& node = doc.at("sim");
        check_keys(node, "sim",
                   {"catalog_size", "dim", "K", "rho", "mu", "noise", "seed"});
        read_field(node, "catalog_size", "sim.", config.sim.catalog_size);
        read_field(node, "dim", "sim.", config.sim.dim);
        read_field(node, "K", "sim.", config.sim.K);
        read_field(node, "rho", "sim.", config.sim.rho);
        read_field(node, "mu", "sim.", config.sim.mu);
        read_field(node, "noise", "sim.", config.sim.noise);
        read_field(node, "seed", "sim.", config.sim.seed);
    }
    if (doc.contains("agent")) {
        const auto& node = doc.at("agent");
        check_keys(node, "agent",
                   {"gamma", "epsilon", "learning_rate", "batch_size",
                    "target_sync_period", "replay_capacity", "warmup_records",
                    "time_dim", "action_dim", "gru_hidden", "attention_heads",
                    "mlp_hidden"});
        read_field(node, "gamma", "agent.", config.agent.gamma);
        read_field(node, "learning_rate", "agent.", config.agent.learning_rate);
        read_field(node, "batch_size", "agent.", config.agent.batch_size);
        read_field(node, "target_sync_period", "agent.",
                   config.agent.target_sync_period);
        read_field(node, "replay_capacity", "agent.", config.agent.replay_capacity);
        read_field(node, "warmup_records", "agent.", config.agent.warmup_records);
        read_field(node, "time_dim", "agent.", config.agent.time_dim);
        read_field(node, "action_dim", "agent.", config.agent.action_dim);
        read_field(node, "gru_hidden", "agent.", config.agent.gru_hidden);
        read_field(node, "attention_heads", "agent.", config.agent.attention_heads);
        read_field(node, "mlp_hidden", "agent.", config.agent.mlp_hidden);
        if (node.contains("epsilon")) {
            const auto& eps = node.at("epsilon");
            check_keys(eps, "agent.epsilon", {"start", "end", "decay_episodes"});
            read_field(eps, "start", "agent.epsilon.", config.agent.epsilon.start);
            read_field(eps, "end", "agent.epsilon.", config.agent.epsilon.end);
            read_field(eps, "decay_episodes", "agent.epsilon.",
                       config.agent.epsilon.decay_episodes);
        }
    }
    if (doc.contains("reward_mode")) {
        const std::string mode = doc.at("reward_mode").get<std::string>();
        if (mode == "expected") {
            config.reward_mode = agent::RewardMode::Expected;
        } else if (mode == "sampled") {
            config.reward_mode = agent::RewardMode::Sampled;
        } else {
            throw ConfigError("reward_mode must be expected or sampled, got \"" +
                              mode + "\"");
        }
    }
    if (doc.contains("eval")) {
        const auto& node = doc.at("eval");
        check_keys(node, "eval", {"period", "episodes"});
        read_field(node, "period", "eval.", config.eval_period);
        read_field(node, "episodes", "eval.", config.eval_curve_episodes);
    }
    config.resolve();
    return config;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError(path + ": invalid JSON");
    return from_json(doc);
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json doc;
    doc["task"] = task_name(task);
    doc["seed"] = seed;
    doc["episodes"] = {{"train", train_episodes}, {"eval", eval_episodes}};
    doc["out"] = out_dir;
    doc["panel"] = {{"rows", panel.rows},
                    {"cols", panel.cols},
                    {"null_penalty", panel.null_penalty}};
    doc["sim"] = {{"catalog_size", sim.catalog_size}, {"dim", sim.dim},
                  {"K", sim.K},                       {"rho", sim.rho},
                  {"mu", sim.mu},                     {"noise", sim.noise},
                  {"seed", sim.seed}};
    doc["agent"] = {{"gamma", agent.gamma},
                    {"learning_rate", agent.learning_rate},
                    {"batch_size", agent.batch_size},
                    {"target_sync_period", agent.target_sync_period},
                    {"replay_capacity", agent.replay_capacity},
                    {"warmup_records", agent.warmup_records},
                    {"time_dim", agent.time_dim},
                    {"action_dim", agent.action_dim},
                    {"gru_hidden", agent.gru_hidden},
                    {"attention_heads", agent.attention_heads},
                    {"mlp_hidden", agent.mlp_hidden},
                    {"epsilon",
                     {{"start", agent.epsilon.start},
                      {"end", agent.epsilon.end},
                      {"decay_episodes", agent.epsilon.decay_episodes}}}};
    doc["reward_mode"] =
        reward_mode == agent::RewardMode::Expected ? "expected" : "sampled";
    doc["eval"] = {{"period", eval_period}, {"episodes", eval_curve_episodes}};
    return doc;
}

void ExperimentConfig::resolve() {
    panel.allow_null = task == Task::SelectReOrg;
    if (agent.epsilon.decay_episodes == 0) {
        agent.epsilon.decay_episodes = std::max<std::uint64_t>(1, train_episodes / 2);
    }
    agent.seed = seed;
    if (sim.seed == 0) sim.seed = util::derive_seed(seed, "catalog");

    panel.validate();
    sim.validate(panel.rows, panel.cols);
    agent.validate();
    if (sim.dim % agent.attention_heads != 0) {
        throw ConfigError("sim.dim must be divisible by agent.attention_heads");
    }
    if (task == Task::ReOrg && sim.K != panel.rows * panel.cols) {
        throw ConfigError("sim.K must equal rows*cols for the re_org task");
    }
    if (task == Task::SelectReOrg && sim.K <= panel.rows * panel.cols) {
        throw ConfigError("sim.K must exceed rows*cols for the select_re_org task");
    }
}

}  // namespace panelmdp::harness
