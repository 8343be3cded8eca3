#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "panelmdp/harness.hpp"

namespace {

using panelmdp::harness::ExperimentConfig;

ExperimentConfig load_config(const std::string& path, std::uint64_t seed_override,
                             bool has_seed, const std::string& out_override,
                             std::uint64_t episodes_override, bool has_episodes) {
    std::ifstream in(path);
    if (!in) throw panelmdp::ConfigError("cannot read config file " + path);
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw panelmdp::ConfigError(path + ": invalid JSON");
    const bool sim_seed_pinned = doc.contains("sim") && doc["sim"].contains("seed");

    ExperimentConfig config = ExperimentConfig::from_json(doc);
    if (has_seed) {
        config.seed = seed_override;
        // catalogs follow the root seed unless the file pinned one explicitly
        if (!sim_seed_pinned) config.sim.seed = 0;
    }
    if (!out_override.empty()) config.out_dir = out_override;
    if (has_episodes) config.train_episodes = episodes_override;
    config.resolve();
    return config;
}

panelmdp::baselines::PolicyKind parse_policy(const std::string& name) {
    if (name == "learned") return panelmdp::baselines::PolicyKind::LearnedQ;
    if (name == "row_major") return panelmdp::baselines::PolicyKind::RowMajor;
    if (name == "random") return panelmdp::baselines::PolicyKind::Random;
    if (name == "oracle") return panelmdp::baselines::PolicyKind::BruteForceOracle;
    throw panelmdp::ConfigError("unknown policy \"" + name + "\"");
}

void write_report(const std::string& out_dir, const std::string& name,
                  const nlohmann::json& doc) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    std::ofstream out(std::filesystem::path(out_dir) / name);
    out << doc.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Grid-panel re-ranking lab: dueling Q-learning over slot placement"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, policy = "learned", metrics_path,
                curves_out;
    std::uint64_t seed = 0, episodes = 0, bucket = 100;
    bool has_seed = false, has_episodes = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config JSON")->required();
        cmd->add_option("--seed", seed, "override the config seed")
            ->each([&](const std::string&) { has_seed = true; });
        cmd->add_option("--out", out_dir, "output directory");
    };

    CLI::App* train = app.add_subcommand("train", "train an agent and write artifacts");
    add_common(train);
    train->add_option("--episodes", episodes, "override training episode count")
        ->each([&](const std::string&) { has_episodes = true; });

    CLI::App* eval = app.add_subcommand("eval", "greedy evaluation of a policy");
    add_common(eval);
    eval->add_option("--checkpoint", checkpoint, "checkpoint stem (no extension)");
    eval->add_option("--policy", policy,
                     "policy: learned, row_major, random or oracle");
    eval->add_option("--episodes", episodes, "evaluation episode count")
        ->each([&](const std::string&) { has_episodes = true; });

    CLI::App* compare = app.add_subcommand("compare", "evaluate all policies side by side");
    add_common(compare);
    compare->add_option("--checkpoint", checkpoint, "checkpoint stem to include");
    compare->add_option("--episodes", episodes, "evaluation episode count")
        ->each([&](const std::string&) { has_episodes = true; });

    CLI::App* curves = app.add_subcommand("curves", "bucketed learning-curve export");
    curves->add_option("--metrics", metrics_path, "metrics.csv from a training run")
        ->required();
    curves->add_option("--bucket", bucket, "episodes per bucket (default 100)");
    curves->add_option("--out", curves_out, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(train)) {
            ExperimentConfig config = load_config(config_path, seed, has_seed, out_dir,
                                                  episodes, has_episodes);
            const auto artifacts = panelmdp::harness::run_training(config);
            nlohmann::json summary;
            summary["checkpoint"] = artifacts.checkpoint_stem;
            summary["metrics"] = artifacts.metrics_path;
            summary["train_steps"] = artifacts.train_steps;
            summary["final_epsilon"] = artifacts.final_epsilon;
            std::cout << summary.dump(2) << '\n';
        } else if (app.got_subcommand(eval)) {
            ExperimentConfig config =
                load_config(config_path, seed, has_seed, "", 0, false);
            const std::uint64_t n = has_episodes ? episodes : config.eval_episodes;
            const auto kind = parse_policy(policy);
            panelmdp::harness::EvalReport report;
            std::string trajectories;
            if (!out_dir.empty()) {
                std::filesystem::create_directories(out_dir);
                trajectories =
                    (std::filesystem::path(out_dir) / "trajectories.jsonl").string();
            }
            if (kind == panelmdp::baselines::PolicyKind::LearnedQ) {
                if (checkpoint.empty()) {
                    throw panelmdp::ConfigError(
                        "--policy learned requires --checkpoint");
                }
                report = panelmdp::harness::run_eval_checkpoint(config, checkpoint, n,
                                                                trajectories);
            } else {
                report = panelmdp::harness::run_eval_baseline(config, kind, n);
            }
            write_report(out_dir, "report.json", report.to_json());
            if (!out_dir.empty()) {
                std::vector<std::string> files = {"report.json"};
                if (kind == panelmdp::baselines::PolicyKind::LearnedQ &&
                    !trajectories.empty()) {
                    files.push_back("trajectories.jsonl");
                }
                panelmdp::harness::write_run_manifest(out_dir, files);
            }
            std::cout << report.to_json().dump(2) << '\n';
        } else if (app.got_subcommand(compare)) {
            ExperimentConfig config =
                load_config(config_path, seed, has_seed, "", 0, false);
            const std::uint64_t n = has_episodes ? episodes : config.eval_episodes;
            const auto reports = panelmdp::harness::run_compare(config, n, checkpoint);
            nlohmann::json doc;
            for (const auto& [name, report] : reports) doc[name] = report.to_json();
            write_report(out_dir, "compare.json", doc);
            if (!out_dir.empty()) {
                panelmdp::harness::write_run_manifest(out_dir, {"compare.json"});
            }
            std::cout << doc.dump(2) << '\n';
        } else if (app.got_subcommand(curves)) {
            const auto rows = panelmdp::harness::export_curves(metrics_path, bucket);
            if (!curves_out.empty()) {
                panelmdp::harness::write_curves_csv(curves_out, rows);
            } else {
                std::cout << "bucket,mean_reward,mean_loss\n";
                for (const auto& row : rows) {
                    std::cout << row.bucket << ',' << row.mean_reward << ','
                              << row.mean_loss << '\n';
                }
            }
        }
    } catch (const panelmdp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
