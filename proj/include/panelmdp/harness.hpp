#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "panelmdp/agent.hpp"
#include "panelmdp/baselines.hpp"
#include "panelmdp/config.hpp"
#include "panelmdp/sim.hpp"

namespace panelmdp::harness {

// ------------------------------------------------------------------- metrics

// Exact header: episode,total_reward,loss,epsilon,wall_ms (UTF-8, LF).
void write_metrics_csv(const std::string& path,
                       const std::vector<agent::MetricsRow>& rows);
std::vector<agent::MetricsRow> read_metrics_csv(const std::string& path);

void write_eval_curve_csv(const std::string& path,
                          const std::vector<agent::EvalPoint>& points);
std::vector<agent::EvalPoint> read_eval_curve_csv(const std::string& path);

struct CurveRow {
    std::uint64_t bucket = 0;  // first episode index of the bucket
    double mean_reward = 0.0;
    double mean_loss = 0.0;
};

// Fixed-width episode bucketing of a metrics file.
std::vector<CurveRow> export_curves(const std::string& metrics_path,
                                    std::uint64_t bucket_width = 100);
void write_curves_csv(const std::string& path, const std::vector<CurveRow>& rows);

// ----------------------------------------------------------------------- AUC

// Mann-Whitney AUC with midrank tie handling: P(score_pos > score_neg) plus
// half the tie probability. Labels must contain both classes.
double compute_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// ------------------------------------------------------------------ episodes

// Simulated request stream shared by training and evaluation: a fresh user
// per episode, a noisy top-K ranking, and reward callbacks in the configured
// mode.
class EpisodeStream {
public:
    EpisodeStream(const ExperimentConfig& config, sim::Catalog catalog);

    agent::EpisodeModel make_episode(util::Rng& rng) const;
    agent::EpisodeFactory factory() const;

    const sim::ExaminationGrid& grid() const { return grid_; }
    const sim::Catalog& catalog() const { return catalog_; }

    // The user drawn for the most recent episode; evaluation uses it for
    // oracle values and AUC labels.
    struct EpisodeContext {
        sim::SyntheticUser user;
        agent::EpisodeModel model;
    };
    EpisodeContext make_episode_with_user(util::Rng& rng) const;

private:
    ExperimentConfig config_;
    sim::Catalog catalog_;
    sim::ExaminationGrid grid_;
};

// ------------------------------------------------------------------ training

struct TrainArtifacts {
    std::string checkpoint_stem;   // <out>/checkpoint (.json/.bin)
    std::string metrics_path;      // <out>/metrics.csv
    std::string eval_curve_path;   // <out>/eval_curve.csv
    std::string config_path;       // <out>/config.json
    std::string manifest_path;     // <out>/manifest.json
    std::uint64_t train_steps = 0;
    double final_epsilon = 0.0;
};

TrainArtifacts run_training(const ExperimentConfig& config);

// Checkpoint round trip for a trained network.
void save_network_checkpoint(const agent::QNetwork& net,
                             const ExperimentConfig& config, std::uint64_t train_steps,
                             double final_epsilon, const std::string& stem);
agent::QNetwork load_network_checkpoint(const ExperimentConfig& config,
                                        const std::string& stem);

// ---------------------------------------------------------------- evaluation

struct EvalReport {
    std::uint64_t episodes = 0;
    double avg_realized_reward = 0.0;
    double avg_expected_reward = 0.0;
    std::optional<double> auc;

    nlohmann::json to_json() const;
};

// Greedy evaluation of a trained network on fresh simulated requests.
EvalReport evaluate_network(const agent::QNetwork& net, const ExperimentConfig& config,
                            std::uint64_t episodes,
                            const std::string& trajectories_path = "");

EvalReport run_eval_checkpoint(const ExperimentConfig& config,
                               const std::string& checkpoint_stem,
                               std::uint64_t episodes,
                               const std::string& trajectories_path = "");

// Baseline policies on the same evaluation users (common random numbers).
EvalReport run_eval_baseline(const ExperimentConfig& config,
                             baselines::PolicyKind kind, std::uint64_t episodes);

// Everything side by side; the oracle entry is omitted when the instance
// exceeds its enumeration cap.
std::map<std::string, EvalReport> run_compare(const ExperimentConfig& config,
                                              std::uint64_t episodes,
                                              const std::string& checkpoint_stem = "");

// Writes <out>/manifest.json listing sha256 and size of every artifact.
void write_run_manifest(const std::string& out_dir,
                        const std::vector<std::string>& files);

}  // namespace panelmdp::harness
