#pragma once

#include <cstdint>
#include <vector>

#include "panelmdp/core.hpp"
#include "panelmdp/rng.hpp"
#include "panelmdp/sim.hpp"

namespace panelmdp::baselines {

enum class PolicyKind { RowMajor, Random, BruteForceOracle, LearnedQ };

// A fully decided episode: the action to take at each time step. Replaying a
// plan through rollout_placement yields the panel plus its trajectory.
struct PlacementPlan {
    std::vector<core::SlotAction> actions;
};

core::Policy plan_policy(PlacementPlan plan);

// Top item first, rows filled left to right: item (m-1)*N+n lands at (m,n).
core::Panel row_major_policy(const core::RankingList& list, const core::PanelSpec& spec);
PlacementPlan row_major_plan(const core::RankingList& list, const core::PanelSpec& spec);

// Uniformly random injective assignment of min(K, M*N) randomly chosen items
// to slots; skipped items are discarded. When discards are disabled, the
// placed set is forced to the first min(K, M*N) items and only the
// assignment is random.
core::Panel random_policy(const core::RankingList& list, const core::PanelSpec& spec,
                          util::Rng& rng);
PlacementPlan random_plan(const core::RankingList& list, const core::PanelSpec& spec,
                          util::Rng& rng);

struct OracleResult {
    core::Panel panel;
    std::vector<core::StepRecord> trajectory;
    double expected_reward = 0.0;
    std::vector<core::SlotAction> actions;
};

// Exhaustive search over every subset of at most M*N items and every
// injective slot assignment, maximizing the analytic episode value. Ties
// break toward the lexicographically smallest action-code sequence. Refuses
// instances whose enumeration exceeds the cap.
OracleResult brute_force_optimal(const sim::SyntheticUser& user,
                                 const core::RankingList& list,
                                 const core::PanelSpec& spec,
                                 const sim::ExaminationGrid& grid, double null_penalty,
                                 std::uint64_t enumeration_cap = 1000000);

}  // namespace panelmdp::baselines
