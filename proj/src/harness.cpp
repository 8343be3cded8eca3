#include "panelmdp/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "panelmdp/checkpoint.hpp"

namespace panelmdp::harness {

namespace {

// Shortest decimal representation that parses back to the same double.
std::string format_double(double value) {
    for (int precision = 15; precision <= 17; ++precision) {
        std::ostringstream out;
        out << std::setprecision(precision) << value;
        if (std::stod(out.str()) == value) return out.str();
    }
    std::ostringstream out;
    out << std::setprecision(17) << value;
    return out.str();
}

double parse_double_field(const std::string& text, const std::string& path, int line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(line) +
                        ": cannot parse number \"" + text + "\"");
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::ofstream open_for_write(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    return out;
}

}  // namespace

// ------------------------------------------------------------------- metrics

void write_metrics_csv(const std::string& path,
                       const std::vector<agent::MetricsRow>& rows) {
    std::ofstream out = open_for_write(path);
    out << "episode,total_reward,loss,epsilon,wall_ms\n";
    for (const agent::MetricsRow& row : rows) {
        out << row.episode << ',' << format_double(row.total_reward) << ','
            << format_double(row.loss) << ',' << format_double(row.epsilon) << ','
            << format_double(row.wall_ms) << '\n';
    }
}

std::vector<agent::MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path);
    std::string line;
    if (!std::getline(in, line) || line != "episode,total_reward,loss,epsilon,wall_ms") {
        throw DataError(path + ":1: bad metrics header");
    }
    std::vector<agent::MetricsRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 5) {
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": expected 5 fields, got " + std::to_string(fields.size()));
        }
        agent::MetricsRow row;
        try {
            row.episode = std::stoull(fields[0]);
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": cannot parse episode \"" + fields[0] + "\"");
        }
        row.total_reward = parse_double_field(fields[1], path, lineno);
        row.loss = parse_double_field(fields[2], path, lineno);
        row.epsilon = parse_double_field(fields[3], path, lineno);
        row.wall_ms = parse_double_field(fields[4], path, lineno);
        if (row.episode != rows.size()) {
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": episode indices must be contiguous from 0");
        }
        rows.push_back(row);
    }
    return rows;
}

void write_eval_curve_csv(const std::string& path,
                          const std::vector<agent::EvalPoint>& points) {
    std::ofstream out = open_for_write(path);
    out << "episode,expected_reward\n";
    for (const agent::EvalPoint& point : points) {
        out << point.episode << ',' << format_double(point.expected_reward) << '\n';
    }
}

std::vector<agent::EvalPoint> read_eval_curve_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path);
    std::string line;
    if (!std::getline(in, line) || line != "episode,expected_reward") {
        throw DataError(path + ":1: bad eval curve header");
    }
    std::vector<agent::EvalPoint> points;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 2) {
            throw DataError(path + ":" + std::to_string(lineno) + ": expected 2 fields");
        }
        agent::EvalPoint point;
        try {
            point.episode = std::stoull(fields[0]);
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": cannot parse episode \"" + fields[0] + "\"");
        }
        point.expected_reward = parse_double_field(fields[1], path, lineno);
        points.push_back(point);
    }
    return points;
}

std::vector<CurveRow> export_curves(const std::string& metrics_path,
                                    std::uint64_t bucket_width) {
    if (bucket_width == 0) throw ConfigError("curves bucket width must be positive");
    const auto rows = read_metrics_csv(metrics_path);
    std::vector<CurveRow> out;
    for (std::size_t start = 0; start < rows.size(); start += bucket_width) {
        const std::size_t stop = std::min(rows.size(), start + bucket_width);
        CurveRow bucket;
        bucket.bucket = start;
        for (std::size_t i = start; i < stop; ++i) {
            bucket.mean_reward += rows[i].total_reward;
            bucket.mean_loss += rows[i].loss;
        }
        const double count = static_cast<double>(stop - start);
        bucket.mean_reward /= count;
        bucket.mean_loss /= count;
        out.push_back(bucket);
    }
    return out;
}

void write_curves_csv(const std::string& path, const std::vector<CurveRow>& rows) {
    std::ofstream out = open_for_write(path);
    out << "bucket,mean_reward,mean_loss\n";
    for (const CurveRow& row : rows) {
        out << row.bucket << ',' << format_double(row.mean_reward) << ','
            << format_double(row.mean_loss) << '\n';
    }
}

// ----------------------------------------------------------------------- AUC

double compute_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw ContractError("AUC needs matching, non-empty scores and labels");
    }
    std::size_t positives = 0;
    for (int label : labels) {
        if (label != 0 && label != 1) throw DataError("AUC labels must be 0 or 1");
        positives += static_cast<std::size_t>(label);
    }
    const std::size_t negatives = labels.size() - positives;
    if (positives == 0 || negatives == 0) {
        throw DataError("AUC undefined: labels contain a single class");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] < scores[b];
    });

    double positive_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) positive_rank_sum += midrank;
        }
        i = j;
    }
    const double n_pos = static_cast<double>(positives);
    const double n_neg = static_cast<double>(negatives);
    return (positive_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

// ------------------------------------------------------------------ episodes

EpisodeStream::EpisodeStream(const ExperimentConfig& config, sim::Catalog catalog)
    : config_(config),
      catalog_(std::move(catalog)),
      grid_(sim::examination_weights(config.panel.rows, config.panel.cols,
                                     config.sim.rho, config.sim.mu)) {}

EpisodeStream::EpisodeContext EpisodeStream::make_episode_with_user(
    util::Rng& rng) const {
    EpisodeContext ctx;
    ctx.user = sim::generate_user(config_.sim, rng);
    auto list = std::make_shared<const core::RankingList>(sim::initial_ranking(
        ctx.user, catalog_, config_.sim.K, config_.sim.noise, rng));

    const double xi = config_.panel.null_penalty;
    const sim::ExaminationGrid& grid = grid_;
    const sim::SyntheticUser user = ctx.user;
    const core::PanelSpec spec = config_.panel;

    ctx.model.list = list;
    ctx.model.expected_reward = [user, grid, xi](
                                    const std::vector<core::StepRecord>& trajectory,
                                    const core::Panel& panel) {
        return sim::expected_episode_reward(user, panel, grid, trajectory, xi);
    };
    if (config_.reward_mode == agent::RewardMode::Expected) {
        ctx.model.finalize_rewards =
            [user, grid, xi, spec](const std::vector<core::StepRecord>& trajectory,
                                   const core::Panel& panel, util::Rng&) {
                const std::vector<double> rewards =
                    sim::expected_step_rewards(user, panel, grid, trajectory, xi);
                std::vector<core::StepRecord> out = trajectory;
                for (std::size_t i = 0; i < out.size(); ++i) {
                    out[i].reward = rewards[i];
                }
                return out;
            };
    } else {
        ctx.model.finalize_rewards =
            [user, grid, xi, spec](const std::vector<core::StepRecord>& trajectory,
                                   const core::Panel& panel, util::Rng& reward_rng) {
                const auto purchased =
                    sim::sample_feedback(user, panel, grid, reward_rng);
                core::RewardSpec rewards;
                rewards.null_penalty = xi;
                return core::assign_rewards(trajectory, purchased, rewards, spec);
            };
    }
    return ctx;
}

agent::EpisodeModel EpisodeStream::make_episode(util::Rng& rng) const {
    return make_episode_with_user(rng).model;
}

agent::EpisodeFactory EpisodeStream::factory() const {
    return [this](util::Rng& rng) { return make_episode(rng); };
}

// --------------------------------------------------------------- checkpoints

void save_network_checkpoint(const agent::QNetwork& net,
                             const ExperimentConfig& config, std::uint64_t train_steps,
                             double final_epsilon, const std::string& stem) {
    nn::TensorStore store;
    store.seed = config.seed;
    for (nn::ParamTensor* p : const_cast<agent::QNetwork&>(net).params()) {
        store.add(p->name, p->shape, p->value);
    }
    // The output directory is a run location, not model state; dropping it
    // keeps checkpoints byte-identical across runs of the same config+seed.
    nlohmann::json embedded = config.to_json();
    embedded["out"] = "";
    store.extra["config"] = embedded;
    store.extra["train_steps"] = train_steps;
    store.extra["epsilon"] = final_epsilon;
    store.save(stem);
}

agent::QNetwork load_network_checkpoint(const ExperimentConfig& config,
                                        const std::string& stem) {
    const nn::TensorStore store = nn::TensorStore::load(stem);
    if (!store.extra.contains("config")) {
        throw ConfigError("checkpoint " + stem + " carries no config section");
    }
    ExperimentConfig stored = ExperimentConfig::from_json(store.extra.at("config"));
    if (stored.sim.dim != config.sim.dim || stored.sim.K != config.sim.K ||
        stored.panel.rows != config.panel.rows ||
        stored.panel.cols != config.panel.cols) {
        throw ConfigError("checkpoint " + stem + " does not match the config: "
                          "panel/list dimensions differ");
    }
    util::Rng dummy(0);
    agent::QNetwork net(config.sim.dim, config.sim.K, config.panel, stored.agent,
                        dummy);
    for (nn::ParamTensor* p : net.params()) {
        if (!store.has(p->name)) {
            throw ConfigError("checkpoint " + stem + " is missing tensor " + p->name);
        }
        if (store.shape(p->name) != p->shape) {
            throw ConfigError("checkpoint " + stem + ": tensor " + p->name +
                              " has the wrong shape");
        }
        p->value = store.values(p->name);
    }
    return net;
}

// ------------------------------------------------------------------ training

TrainArtifacts run_training(const ExperimentConfig& config) {
    if (config.out_dir.empty()) {
        throw ConfigError("out directory is required for training runs");
    }
    std::filesystem::create_directories(config.out_dir);

    util::Rng catalog_rng(config.sim.seed);
    EpisodeStream stream(config, sim::generate_catalog(config.sim, catalog_rng));

    agent::TrainOptions options;
    options.episodes = config.train_episodes;
    options.eval_period = config.eval_period;
    options.eval_episodes = config.eval_curve_episodes;

    agent::TrainResult result =
        agent::train(config.agent, config.panel, config.sim.dim, config.sim.K,
                     stream.factory(), options);

    TrainArtifacts artifacts;
    const std::filesystem::path out(config.out_dir);
    artifacts.checkpoint_stem = (out / "checkpoint").string();
    artifacts.metrics_path = (out / "metrics.csv").string();
    artifacts.eval_curve_path = (out / "eval_curve.csv").string();
    artifacts.config_path = (out / "config.json").string();
    artifacts.manifest_path = (out / "manifest.json").string();
    artifacts.train_steps = result.train_steps;
    artifacts.final_epsilon = result.final_epsilon;

    save_network_checkpoint(*result.net, config, result.train_steps,
                            result.final_epsilon, artifacts.checkpoint_stem);
    write_metrics_csv(artifacts.metrics_path, result.metrics);
    write_eval_curve_csv(artifacts.eval_curve_path, result.eval_curve);
    {
        std::ofstream out_config = open_for_write(artifacts.config_path);
        out_config << config.to_json().dump(2) << '\n';
    }
    write_run_manifest(config.out_dir,
                       {"checkpoint.json", "checkpoint.bin", "metrics.csv",
                        "eval_curve.csv", "config.json"});
    return artifacts;
}

// ---------------------------------------------------------------- evaluation

nlohmann::json EvalReport::to_json() const {
    nlohmann::json doc;
    doc["episodes"] = episodes;
    doc["avg_realized_reward"] = avg_realized_reward;
    doc["avg_expected_reward"] = avg_expected_reward;
    if (auc.has_value()) doc["auc"] = *auc;
    return doc;
}

namespace {

struct EvalAccumulator {
    double realized_sum = 0.0;
    double expected_sum = 0.0;
    std::vector<double> auc_scores;
    std::vector<int> auc_labels;
    std::string trajectories;
};

// Labels for the AUC definition: 1 iff the processed item is among the top
// M*N of the K candidates by true simulator affinity.
std::vector<std::int64_t> top_affinity_ids(const sim::SyntheticUser& user,
                                           const core::RankingList& list,
                                           int top_count) {
    std::vector<std::pair<double, std::int64_t>> scored;
    scored.reserve(static_cast<std::size_t>(list.size()));
    for (const core::Item& item : list.items()) {
        scored.emplace_back(sim::affinity(user, item), item.id);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<std::int64_t> ids;
    const int keep = std::min<int>(top_count, list.size());
    ids.reserve(static_cast<std::size_t>(keep));
    for (int i = 0; i < keep; ++i) ids.push_back(scored[static_cast<std::size_t>(i)].second);
    std::sort(ids.begin(), ids.end());
    return ids;
}

void accumulate_episode(EvalAccumulator& acc, const ExperimentConfig& config,
                        const EpisodeStream& stream,
                        const EpisodeStream::EpisodeContext& ctx,
                        const core::RolloutResult& rollout, util::Rng& feedback_rng,
                        const std::function<double(const core::StepRecord&)>& scorer,
                        bool want_trajectories) {
    acc.expected_sum += ctx.model.expected_reward(rollout.trajectory, rollout.panel);

    const auto purchased =
        sim::sample_feedback(ctx.user, rollout.panel, stream.grid(), feedback_rng);
    core::RewardSpec rewards;
    rewards.null_penalty = config.panel.null_penalty;
    const auto rewarded =
        core::assign_rewards(rollout.trajectory, purchased, rewards, config.panel);
    for (const core::StepRecord& record : rewarded) acc.realized_sum += record.reward;

    if (config.task == Task::SelectReOrg && scorer) {
        const auto positives = top_affinity_ids(ctx.user, *ctx.model.list,
                                                config.panel.num_slots());
        for (const core::StepRecord& record : rollout.trajectory) {
            const std::int64_t id =
                record.state.list->item_at_rank(record.state.t + 1).id;
            acc.auc_scores.push_back(scorer(record));
            acc.auc_labels.push_back(
                std::binary_search(positives.begin(), positives.end(), id) ? 1 : 0);
        }
    }
    if (want_trajectories) {
        acc.trajectories += core::trajectory_to_jsonl(rewarded, config.panel);
    }
}

EvalReport finish_report(EvalAccumulator& acc, const ExperimentConfig& config,
                         std::uint64_t episodes, bool has_auc,
                         const std::string& trajectories_path) {
    EvalReport report;
    report.episodes = episodes;
    report.avg_realized_reward = acc.realized_sum / static_cast<double>(episodes);
    report.avg_expected_reward = acc.expected_sum / static_cast<double>(episodes);
    if (config.task == Task::SelectReOrg && has_auc) {
        report.auc = compute_auc(acc.auc_scores, acc.auc_labels);
    }
    if (!trajectories_path.empty()) {
        std::ofstream out = open_for_write(trajectories_path);
        out << acc.trajectories;
    }
    return report;
}

}  // namespace

EvalReport evaluate_network(const agent::QNetwork& net, const ExperimentConfig& config,
                            std::uint64_t episodes,
                            const std::string& trajectories_path) {
    if (episodes == 0) throw ConfigError("evaluation needs at least one episode");
    util::Rng catalog_rng(config.sim.seed);
    EpisodeStream stream(config, sim::generate_catalog(config.sim, catalog_rng));

    EvalAccumulator acc;
    for (std::uint64_t i = 0; i < episodes; ++i) {
        util::Rng episode_rng(util::derive_seed(config.seed, "eval", i));
        util::Rng feedback_rng(util::derive_seed(config.seed, "eval_feedback", i));
        const auto ctx = stream.make_episode_with_user(episode_rng);
        const core::RolloutResult rollout =
            agent::greedy_rollout(net, ctx.model, config.panel);

        const agent::QNetwork::ListEncoding enc = net.encode_list(*ctx.model.list);
        auto scorer = [&](const core::StepRecord& record) {
            const nn::Vec q = net.q_values(enc, record.state);
            const auto legal = core::legal_actions(record.state, config.panel);
            double best_slot = -1e300;
            for (const core::SlotAction& action : legal) {
                if (action.is_null()) continue;
                best_slot = std::max(
                    best_slot, q[static_cast<std::size_t>(action.code(config.panel))]);
            }
            return best_slot - q[static_cast<std::size_t>(config.panel.null_code())];
        };
        accumulate_episode(acc, config, stream, ctx, rollout, feedback_rng, scorer,
                           !trajectories_path.empty());
    }
    return finish_report(acc, config, episodes, true, trajectories_path);
}

EvalReport run_eval_checkpoint(const ExperimentConfig& config,
                               const std::string& checkpoint_stem,
                               std::uint64_t episodes,
                               const std::string& trajectories_path) {
    const agent::QNetwork net = load_network_checkpoint(config, checkpoint_stem);
    return evaluate_network(net, config, episodes, trajectories_path);
}

EvalReport run_eval_baseline(const ExperimentConfig& config,
                             baselines::PolicyKind kind, std::uint64_t episodes) {
    if (episodes == 0) throw ConfigError("evaluation needs at least one episode");
    if (kind == baselines::PolicyKind::LearnedQ) {
        throw ConfigError("the learned policy needs a checkpoint; use run_eval_checkpoint");
    }
    util::Rng catalog_rng(config.sim.seed);
    EpisodeStream stream(config, sim::generate_catalog(config.sim, catalog_rng));

    EvalAccumulator acc;
    bool has_auc = kind == baselines::PolicyKind::Random;
    for (std::uint64_t i = 0; i < episodes; ++i) {
        util::Rng episode_rng(util::derive_seed(config.seed, "eval", i));
        util::Rng feedback_rng(util::derive_seed(config.seed, "eval_feedback", i));
        util::Rng policy_rng(util::derive_seed(config.seed, "eval_policy", i));
        const auto ctx = stream.make_episode_with_user(episode_rng);

        core::RolloutResult rollout{core::Panel(config.panel), {}};
        switch (kind) {
            case baselines::PolicyKind::RowMajor:
                rollout = core::rollout_placement(
                    baselines::plan_policy(
                        baselines::row_major_plan(*ctx.model.list, config.panel)),
                    ctx.model.list, config.panel);
                break;
            case baselines::PolicyKind::Random:
                rollout = core::rollout_placement(
                    baselines::plan_policy(baselines::random_plan(
                        *ctx.model.list, config.panel, policy_rng)),
                    ctx.model.list, config.panel);
                break;
            case baselines::PolicyKind::BruteForceOracle: {
                baselines::OracleResult oracle = baselines::brute_force_optimal(
                    ctx.user, *ctx.model.list, config.panel, stream.grid(),
                    config.panel.null_penalty);
                rollout.panel = std::move(oracle.panel);
                rollout.trajectory = std::move(oracle.trajectory);
                break;
            }
            case baselines::PolicyKind::LearnedQ:
                break;  // unreachable
        }

        // The random baseline has no value scores; uniform draws give its
        // AUC the chance-level reference the comparison needs.
        auto scorer = [&policy_rng](const core::StepRecord&) {
            return policy_rng.uniform();
        };
        accumulate_episode(acc, config, stream, ctx, rollout, feedback_rng,
                           has_auc ? std::function<double(const core::StepRecord&)>(scorer)
                                   : nullptr,
                           false);
    }
    return finish_report(acc, config, episodes, has_auc, "");
}

std::map<std::string, EvalReport> run_compare(const ExperimentConfig& config,
                                              std::uint64_t episodes,
                                              const std::string& checkpoint_stem) {
    std::map<std::string, EvalReport> reports;
    reports["row_major"] =
        run_eval_baseline(config, baselines::PolicyKind::RowMajor, episodes);
    reports["random"] =
        run_eval_baseline(config, baselines::PolicyKind::Random, episodes);
    try {
        reports["oracle"] =
            run_eval_baseline(config, baselines::PolicyKind::BruteForceOracle, episodes);
    } catch (const ContractError&) {
        // enumeration cap exceeded; omit the oracle entry
    }
    if (!checkpoint_stem.empty()) {
        reports["learned"] = run_eval_checkpoint(config, checkpoint_stem, episodes);
    }
    return reports;
}

void write_run_manifest(const std::string& out_dir,
                        const std::vector<std::string>& files) {
    nlohmann::json manifest;
    manifest["files"] = nlohmann::json::object();
    for (const std::string& name : files) {
        const std::string path = (std::filesystem::path(out_dir) / name).string();
        manifest["files"][name] = {
            {"sha256", util::sha256_file_hex(path)},
            {"bytes", std::filesystem::file_size(path)},
        };
    }
    std::ofstream out =
        open_for_write((std::filesystem::path(out_dir) / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

}  // namespace panelmdp::harness
