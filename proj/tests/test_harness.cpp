#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "panelmdp/checkpoint.hpp"
#include "panelmdp/harness.hpp"

using namespace panelmdp;
using harness::ExperimentConfig;
using harness::Task;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
    const auto dir = std::filesystem::temp_directory_path() / ("panelmdp_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

// Small, fast configuration for end-to-end harness tests.
ExperimentConfig tiny_config(Task task, const std::string& out_dir) {
    nlohmann::json doc;
    doc["task"] = harness::task_name(task);
    doc["seed"] = 7;
    doc["episodes"] = {{"train", 25}, {"eval", 50}};
    doc["out"] = out_dir;
    doc["panel"] = {{"rows", 2}, {"cols", 2}, {"null_penalty", 0.1}};
    doc["sim"] = {{"catalog_size", 20}, {"dim", 4},
                  {"K", task == Task::ReOrg ? 4 : 7}, {"rho", 0.8},
                  {"mu", 0.8}, {"noise", 0.1}};
    doc["agent"] = {{"time_dim", 3}, {"action_dim", 3}, {"gru_hidden", 4},
                    {"attention_heads", 2}, {"mlp_hidden", {8}},
                    {"batch_size", 4}, {"warmup_records", 8},
                    {"replay_capacity", 256}};
    doc["eval"] = {{"period", 10}, {"episodes", 5}};
    return ExperimentConfig::from_json(doc);
}

}  // namespace

TEST_CASE("mann-whitney auc handles separation, ties and inversion") {
    CHECK(harness::compute_auc({0.9, 0.1}, {1, 0}) == doctest::Approx(1.0));
    CHECK(harness::compute_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) ==
          doctest::Approx(0.5));
    CHECK(harness::compute_auc({0.1, 0.9}, {1, 0}) == doctest::Approx(0.0));
    CHECK(harness::compute_auc({3.0, 2.0, 2.0, 1.0}, {1, 1, 0, 0}) ==
          doctest::Approx(0.875));

    CHECK_THROWS_AS(harness::compute_auc({0.1, 0.9}, {1, 1}), DataError);
    CHECK_THROWS_AS(harness::compute_auc({0.1, 0.9}, {1, 2}), DataError);
    CHECK_THROWS_AS(harness::compute_auc({0.1}, {1, 0}), ContractError);
}

TEST_CASE("scoring by true affinity separates the top items perfectly") {
    sim::SimulatorConfig config;
    config.catalog_size = 40;
    config.dim = 8;
    config.K = 16;
    util::Rng rng(60);
    const auto catalog = sim::generate_catalog(config, rng);
    const auto user = sim::generate_user(config, rng);
    const auto list = sim::initial_ranking(user, catalog, 16, 0.3, rng);

    std::vector<double> scores;
    for (int k = 1; k <= list.size(); ++k) {
        scores.push_back(sim::affinity(user, list.item_at_rank(k)));
    }
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const double cut = sorted[5];
    std::vector<int> labels;
    for (double s : scores) labels.push_back(s >= cut ? 1 : 0);

    CHECK(harness::compute_auc(scores, labels) == doctest::Approx(1.0));
}

TEST_CASE("metrics csv round-trips exactly and reports parse errors by line") {
    const auto dir = temp_dir("metrics");
    const std::string path = (dir / "metrics.csv").string();

    std::vector<agent::MetricsRow> rows;
    util::Rng rng(61);
    for (int i = 0; i < 57; ++i) {
        agent::MetricsRow row;
        row.episode = static_cast<std::uint64_t>(i);
        row.total_reward = rng.normal();
        row.loss = std::abs(rng.normal()) * 0.01;
        row.epsilon = rng.uniform();
        row.wall_ms = rng.uniform() * 12.0;
        rows.push_back(row);
    }
    harness::write_metrics_csv(path, rows);

    const std::string text = read_file(path);
    CHECK(text.rfind("episode,total_reward,loss,epsilon,wall_ms\n", 0) == 0);
    CHECK(text.find('\r') == std::string::npos);

    const auto back = harness::read_metrics_csv(path);
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].episode == rows[i].episode);
        CHECK(back[i].total_reward == rows[i].total_reward);
        CHECK(back[i].loss == rows[i].loss);
        CHECK(back[i].epsilon == rows[i].epsilon);
        CHECK(back[i].wall_ms == rows[i].wall_ms);
    }

    {
        std::ofstream out(path, std::ios::app);
        out << "57,broken,0,0,0\n";
    }
    try {
        harness::read_metrics_csv(path);
        FAIL("expected a parse error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(":59") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("curve export buckets episodes with exact means") {
    const auto dir = temp_dir("curves");
    const std::string path = (dir / "metrics.csv").string();

    std::vector<agent::MetricsRow> rows;
    for (int i = 0; i < 1000; ++i) {
        agent::MetricsRow row;
        row.episode = static_cast<std::uint64_t>(i);
        row.total_reward = 1.0;
        row.loss = static_cast<double>(i);
        rows.push_back(row);
    }
    harness::write_metrics_csv(path, rows);

    const auto curve = harness::export_curves(path, 100);
    REQUIRE(curve.size() == 10);
    for (std::size_t b = 0; b < curve.size(); ++b) {
        CHECK(curve[b].bucket == b * 100);
        CHECK(curve[b].mean_reward == doctest::Approx(1.0));
        // independent recompute of the loss mean
        double expected = 0.0;
        for (int i = 0; i < 100; ++i) expected += static_cast<double>(b * 100 + i);
        CHECK(curve[b].mean_loss == doctest::Approx(expected / 100.0));
    }

    // uneven tail bucket
    const auto coarse = harness::export_curves(path, 300);
    REQUIRE(coarse.size() == 4);
    CHECK(coarse[3].bucket == 900);
    std::filesystem::remove_all(dir);
}

TEST_CASE("experiment config enforces task rules and rejects unknown keys") {
    const ExperimentConfig reorg = ExperimentConfig::defaults(Task::ReOrg);
    CHECK_FALSE(reorg.panel.allow_null);
    CHECK(reorg.sim.K == reorg.panel.rows * reorg.panel.cols);

    const ExperimentConfig select = ExperimentConfig::defaults(Task::SelectReOrg);
    CHECK(select.panel.allow_null);
    CHECK(select.sim.K > select.panel.rows * select.panel.cols);

    nlohmann::json doc;
    doc["task"] = "re_org";
    doc["sim"] = {{"K", 5}};
    CHECK_THROWS_AS(ExperimentConfig::from_json(doc), ConfigError);

    nlohmann::json select_bad;
    select_bad["task"] = "select_re_org";
    select_bad["sim"] = {{"K", 6}};
    CHECK_THROWS_AS(ExperimentConfig::from_json(select_bad), ConfigError);

    nlohmann::json unknown;
    unknown["agent"] = {{"learning_rat", 0.1}};
    try {
        ExperimentConfig::from_json(unknown);
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("agent.learning_rat") != std::string::npos);
    }

    CHECK_THROWS_AS(harness::task_from_name("reorg"), ConfigError);

    // round trip through json keeps every field
    const auto doc_out = select.to_json();
    const ExperimentConfig back = ExperimentConfig::from_json(doc_out);
    CHECK(back.to_json() == doc_out);
}

TEST_CASE("tensor store round-trips bit-exactly") {
    const auto dir = temp_dir("store");
    const std::string stem = (dir / "tensors").string();

    nn::TensorStore store;
    store.seed = 1234567890123456789ull;
    util::Rng rng(62);
    nn::Vec a(12), b(5);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal() * 1e-300;  // subnormal-adjacent values
    store.add("block.a", {3, 4}, a);
    store.add("block.b", {5}, b);
    store.extra["note"] = "round trip";
    store.save(stem);

    const auto loaded = nn::TensorStore::load(stem);
    CHECK(loaded.seed == store.seed);
    CHECK(loaded.extra.at("note") == "round trip");
    CHECK(loaded.values("block.a") == a);
    CHECK(loaded.values("block.b") == b);
    CHECK(loaded.shape("block.a") == std::vector<std::size_t>{3, 4});

    // re-saving the loaded store reproduces identical bytes
    const std::string stem2 = (dir / "tensors2").string();
    loaded.save(stem2);
    CHECK(read_file(stem + ".json") == read_file(stem2 + ".json"));
    CHECK(read_file(stem + ".bin") == read_file(stem2 + ".bin"));

    CHECK_THROWS_AS(nn::TensorStore::load((dir / "missing").string()), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("training runs are reproducible byte-for-byte") {
    const auto dir_a = temp_dir("train_a");
    const auto dir_b = temp_dir("train_b");

    const auto artifacts_a = harness::run_training(tiny_config(Task::ReOrg, dir_a.string()));
    const auto artifacts_b = harness::run_training(tiny_config(Task::ReOrg, dir_b.string()));

    CHECK(read_file(artifacts_a.checkpoint_stem + ".bin") ==
          read_file(artifacts_b.checkpoint_stem + ".bin"));
    CHECK(read_file(artifacts_a.checkpoint_stem + ".json") ==
          read_file(artifacts_b.checkpoint_stem + ".json"));

    const auto metrics = harness::read_metrics_csv(artifacts_a.metrics_path);
    CHECK(metrics.size() == 25);
    const auto curve = harness::read_eval_curve_csv(artifacts_a.eval_curve_path);
    CHECK(curve.size() == 2);

    // the manifest lists every artifact with a hash
    const auto manifest = nlohmann::json::parse(read_file(artifacts_a.manifest_path));
    for (const char* name : {"checkpoint.json", "checkpoint.bin", "metrics.csv",
                             "eval_curve.csv", "config.json"}) {
        CHECK(manifest.at("files").contains(name));
    }

    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
}

TEST_CASE("zero-episode training still writes a valid checkpoint and metrics") {
    const auto dir = temp_dir("train_zero");
    ExperimentConfig config = tiny_config(Task::ReOrg, dir.string());
    config.train_episodes = 0;
    config.resolve();

    const auto artifacts = harness::run_training(config);
    CHECK(harness::read_metrics_csv(artifacts.metrics_path).empty());
    const auto net = harness::load_network_checkpoint(config, artifacts.checkpoint_stem);
    CHECK(net.param_count() > 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("reloaded checkpoints evaluate identically to the in-memory network") {
    const auto dir = temp_dir("reload");
    const ExperimentConfig config = tiny_config(Task::SelectReOrg, dir.string());
    const auto artifacts = harness::run_training(config);

    const auto net = harness::load_network_checkpoint(config, artifacts.checkpoint_stem);
    const auto report_a = harness::evaluate_network(net, config, 20);
    const auto report_b =
        harness::run_eval_checkpoint(config, artifacts.checkpoint_stem, 20);
    CHECK(report_a.avg_realized_reward == report_b.avg_realized_reward);
    CHECK(report_a.avg_expected_reward == report_b.avg_expected_reward);
    REQUIRE(report_a.auc.has_value());
    REQUIRE(report_b.auc.has_value());
    CHECK(*report_a.auc == *report_b.auc);

    // dimension mismatch is a config error
    ExperimentConfig other = tiny_config(Task::SelectReOrg, dir.string());
    other.sim.K = 9;
    other.resolve();
    CHECK_THROWS_AS(
        harness::load_network_checkpoint(other, artifacts.checkpoint_stem),
        ConfigError);

    std::filesystem::remove_all(dir);
}

TEST_CASE("single-episode evaluation reports exactly one episode") {
    const auto dir = temp_dir("eval_one");
    const ExperimentConfig config = tiny_config(Task::ReOrg, dir.string());
    const auto report =
        harness::run_eval_baseline(config, baselines::PolicyKind::RowMajor, 1);
    CHECK(report.episodes == 1);
    CHECK_FALSE(report.auc.has_value());
    std::filesystem::remove_all(dir);
}

TEST_CASE("realized rewards agree with the analytic oracle for the random policy") {
    const auto dir = temp_dir("eval_rand");
    ExperimentConfig config = tiny_config(Task::ReOrg, dir.string());
    config.sim.rho = 1.0;
    config.sim.mu = 1.0;
    config.resolve();

    const auto report =
        harness::run_eval_baseline(config, baselines::PolicyKind::Random, 4000);
    // realized rewards are 0/1 purchases; their mean matches the analytic
    // expectation within 3 standard deviations
    const double sd = std::sqrt(0.25 / 4000.0);
    CHECK(std::abs(report.avg_realized_reward - report.avg_expected_reward) <=
          3.0 * sd);
    std::filesystem::remove_all(dir);
}

TEST_CASE("re_org evaluation trajectories never contain a discard") {
    const auto dir = temp_dir("no_null");
    const ExperimentConfig config = tiny_config(Task::ReOrg, dir.string());
    const auto artifacts = harness::run_training(config);

    const std::string trajectories = (dir / "trajectories.jsonl").string();
    harness::run_eval_checkpoint(config, artifacts.checkpoint_stem, 50, trajectories);
    const auto rows = core::parse_trajectory_jsonl(read_file(trajectories));
    REQUIRE_FALSE(rows.empty());
    for (const auto& row : rows) {
        CHECK(row.action != config.panel.null_code());
        CHECK(row.action >= 0);
        CHECK(row.action < config.panel.num_slots());
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("oracle policy evaluation matches its analytic value within noise") {
    const auto dir = temp_dir("oracle_eval");
    const ExperimentConfig config = tiny_config(Task::ReOrg, dir.string());
    const auto report =
        harness::run_eval_baseline(config, baselines::PolicyKind::BruteForceOracle, 3000);
    const double sd = std::sqrt(0.25 / 3000.0);
    CHECK(std::abs(report.avg_realized_reward - report.avg_expected_reward) <=
          3.0 * sd);
    std::filesystem::remove_all(dir);
}

TEST_CASE("compare covers baselines and the oracle on tiny instances") {
    const auto dir = temp_dir("compare");
    const ExperimentConfig config = tiny_config(Task::ReOrg, dir.string());
    const auto reports = harness::run_compare(config, 25);
    REQUIRE(reports.contains("row_major"));
    REQUIRE(reports.contains("random"));
    REQUIRE(reports.contains("oracle"));
    CHECK(reports.at("oracle").avg_expected_reward >=
          reports.at("random").avg_expected_reward - 1e-12);
    CHECK(reports.at("oracle").avg_expected_reward >=
          reports.at("row_major").avg_expected_reward - 1e-12);
    std::filesystem::remove_all(dir);
}
