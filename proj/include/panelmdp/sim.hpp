#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "panelmdp/core.hpp"
#include "panelmdp/rng.hpp"

namespace panelmdp::sim {

// Ground-truth user: a preference vector in the catalog embedding space.
struct SyntheticUser {
    std::int64_t id = 0;
    std::vector<double> preference;
};

struct Catalog {
    int dim = 0;
    std::vector<core::Item> items;
};

// Slot-examination weights w[m][n] = rho^(m-1) * mu^|n - c| with c = (N+1)/2:
// attention peaks at the middle columns and decays slowly by row.
struct ExaminationGrid {
    int rows = 0;
    int cols = 0;
    double rho = 1.0;
    double mu = 1.0;
    std::vector<double> weights;  // row-major

    double at(int m, int n) const;  // 1-based
};

ExaminationGrid examination_weights(int rows, int cols, double rho, double mu);

struct SimulatorConfig {
    int catalog_size = 100;
    int dim = 16;
    int K = 6;
    double rho = 0.8;
    double mu = 0.8;
    double noise = 0.1;  // sigma of the rank-score perturbation
    std::uint64_t seed = 0;

    void validate(int panel_rows, int panel_cols) const;
};

double affinity(const SyntheticUser& user, const core::Item& item);

// q = w_{m,n} * sigmoid(u . e(i))
double purchase_propensity(const SyntheticUser& user, const core::Item& item,
                           const core::SlotAction& slot, const ExaminationGrid& grid);

// Sum of propensities over filled cells.
double panel_propensity_sum(const SyntheticUser& user, const core::Panel& panel,
                            const ExaminationGrid& grid);

// Single categorical draw over the filled slots: slot (m,n) is purchased with
// probability q_{m,n} / (1 + Q_sum); no purchase with probability
// 1 / (1 + Q_sum). At most one purchase per panel.
std::optional<core::SlotAction> sample_feedback(const SyntheticUser& user,
                                                const core::Panel& panel,
                                                const ExaminationGrid& grid,
                                                util::Rng& rng);

// Analytic value of a finished episode:
// Q_sum / (1 + Q_sum) - xi * (number of null actions).
double expected_episode_reward(const SyntheticUser& user, const core::Panel& panel,
                               const ExaminationGrid& grid,
                               const std::vector<core::StepRecord>& trajectory,
                               double null_penalty);

// Deterministic per-step credit consistent with the analytic episode value:
// a placement earns its slot's purchase probability q / (1 + Q_sum), a
// discard earns -xi. The per-step values sum to expected_episode_reward.
std::vector<double> expected_step_rewards(const SyntheticUser& user,
                                          const core::Panel& panel,
                                          const ExaminationGrid& grid,
                                          const std::vector<core::StepRecord>& trajectory,
                                          double null_penalty);

// Embeddings and preferences are i.i.d. standard normal scaled by 1/sqrt(d).
Catalog generate_catalog(const SimulatorConfig& config, util::Rng& rng);
SyntheticUser generate_user(const SimulatorConfig& config, util::Rng& rng);

// Top-K of the catalog by u.e(i) + Normal(0, noise^2), descending.
core::RankingList initial_ranking(const SyntheticUser& user, const Catalog& catalog,
                                  int K, double noise, util::Rng& rng);

// Persistence in the checkpoint tensor format.
void save_catalog(const Catalog& catalog, const std::string& stem);
Catalog load_catalog(const std::string& stem);
void save_user(const SyntheticUser& user, const std::string& stem);
SyntheticUser load_user(const std::string& stem);

}  // namespace panelmdp::sim
