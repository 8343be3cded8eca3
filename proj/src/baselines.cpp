#include "panelmdp/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace panelmdp::baselines {

namespace {

std::shared_ptr<const core::RankingList> share(const core::RankingList& list) {
    return std::make_shared<const core::RankingList>(list);
}

core::RolloutResult replay(const core::RankingList& list, const core::PanelSpec& spec,
                           PlacementPlan plan) {
    return core::rollout_placement(plan_policy(std::move(plan)), share(list), spec);
}

}  // namespace

core::Policy plan_policy(PlacementPlan plan) {
    return [plan = std::move(plan)](const core::EnvState& state) {
        const auto t = static_cast<std::size_t>(state.t);
        if (t >= plan.actions.size()) {
            throw ContractError("placement plan shorter than the episode");
        }
        return plan.actions[t];
    };
}

PlacementPlan row_major_plan(const core::RankingList& list, const core::PanelSpec& spec) {
    PlacementPlan plan;
    const int steps = std::min(list.size(), spec.num_slots());
    plan.actions.reserve(static_cast<std::size_t>(steps));
    for (int code = 0; code < steps; ++code) {
        plan.actions.push_back(core::SlotAction::from_code(code, spec));
    }
    return plan;
}

core::Panel row_major_policy(const core::RankingList& list, const core::PanelSpec& spec) {
    return replay(list, spec, row_major_plan(list, spec)).panel;
}

PlacementPlan random_plan(const core::RankingList& list, const core::PanelSpec& spec,
                          util::Rng& rng) {
    const int K = list.size();
    const int placed_count = std::min(K, spec.num_slots());

    // Fisher-Yates prefix: the first placed_count entries are the chosen items.
    std::vector<int> item_order(static_cast<std::size_t>(K));
    std::iota(item_order.begin(), item_order.end(), 0);
    if (spec.allow_null) {
        for (int i = 0; i < placed_count; ++i) {
            const auto j = static_cast<int>(
                rng.uniform_int(static_cast<std::uint64_t>(K - i))) + i;
            std::swap(item_order[static_cast<std::size_t>(i)],
                      item_order[static_cast<std::size_t>(j)]);
        }
        std::sort(item_order.begin(), item_order.begin() + placed_count);
    }
    // Without discards the first placed_count items are forced.

    std::vector<int> slot_codes(static_cast<std::size_t>(spec.num_slots()));
    std::iota(slot_codes.begin(), slot_codes.end(), 0);
    for (int i = 0; i < placed_count; ++i) {
        const auto j = static_cast<int>(rng.uniform_int(
                           static_cast<std::uint64_t>(spec.num_slots() - i))) + i;
        std::swap(slot_codes[static_cast<std::size_t>(i)],
                  slot_codes[static_cast<std::size_t>(j)]);
    }

    PlacementPlan plan;
    plan.actions.assign(static_cast<std::size_t>(K), core::SlotAction::null_action());
    for (int i = 0; i < placed_count; ++i) {
        plan.actions[static_cast<std::size_t>(item_order[static_cast<std::size_t>(i)])] =
            core::SlotAction::from_code(slot_codes[static_cast<std::size_t>(i)], spec);
    }
    if (!spec.allow_null) {
        plan.actions.resize(static_cast<std::size_t>(placed_count));
    }
    return plan;
}

core::Panel random_policy(const core::RankingList& list, const core::PanelSpec& spec,
                          util::Rng& rng) {
    return replay(list, spec, random_plan(list, spec, rng)).panel;
}

namespace {

// Number of complete action sequences the oracle would visit.
double enumeration_size(int K, int slots, bool allow_null) {
    if (!allow_null) {
        double total = 1.0;
        for (int i = 0; i < std::min(K, slots); ++i) total *= slots - i;
        return total;
    }
    // sum over s of C(K, s) * slots! / (slots - s)!
    double total = 0.0;
    for (int s = 0; s <= std::min(K, slots); ++s) {
        double choose = 1.0;
        for (int i = 0; i < s; ++i) {
            choose = choose * (K - i) / (i + 1);
        }
        double arrange = 1.0;
        for (int i = 0; i < s; ++i) arrange *= slots - i;
        total += choose * arrange;
    }
    return total;
}

struct OracleSearch {
    const core::PanelSpec& spec;
    int K;
    bool allow_null;
    double null_penalty;
    // propensity[k][code]: value of placing the k-th item at the slot.
    std::vector<std::vector<double>> propensity;

    std::vector<int> current;
    std::vector<int> best;
    double best_value = -1e300;
    bool found = false;

    void run() { descend(0, 0u, 0.0, 0); }

    void descend(int t, std::uint32_t used_mask, double q_sum, int placed) {
        if (placed == spec.num_slots() || t == K) {
            const int nulls = t - placed;
            const double value =
                q_sum / (1.0 + q_sum) - null_penalty * static_cast<double>(nulls);
            if (!found || value > best_value) {
                found = true;
                best_value = value;
                best = current;
            }
            return;
        }
        for (int code = 0; code < spec.num_slots(); ++code) {
            if (used_mask & (1u << code)) continue;
            current.push_back(code);
            descend(t + 1, used_mask | (1u << code),
                    q_sum + propensity[static_cast<std::size_t>(t)]
                                      [static_cast<std::size_t>(code)],
                    placed + 1);
            current.pop_back();
        }
        if (allow_null) {
            current.push_back(spec.null_code());
            descend(t + 1, used_mask, q_sum, placed);
            current.pop_back();
        }
    }
};

}  // namespace

OracleResult brute_force_optimal(const sim::SyntheticUser& user,
                                 const core::RankingList& list,
                                 const core::PanelSpec& spec,
                                 const sim::ExaminationGrid& grid, double null_penalty,
                                 std::uint64_t enumeration_cap) {
    spec.validate();
    if (spec.num_slots() > 32) {
        throw ContractError("oracle supports at most 32 slots");
    }
    const double size = enumeration_size(list.size(), spec.num_slots(), spec.allow_null);
    if (size > static_cast<double>(enumeration_cap)) {
        throw ContractError("oracle enumeration of " + std::to_string(size) +
                            " assignments exceeds the cap of " +
                            std::to_string(enumeration_cap));
    }

    OracleSearch search{spec, list.size(), spec.allow_null, null_penalty, {}, {}, {}, -1e300, false};
    search.propensity.resize(static_cast<std::size_t>(list.size()));
    for (int k = 0; k < list.size(); ++k) {
        auto& row = search.propensity[static_cast<std::size_t>(k)];
        row.resize(static_cast<std::size_t>(spec.num_slots()));
        for (int code = 0; code < spec.num_slots(); ++code) {
            row[static_cast<std::size_t>(code)] =
                sim::purchase_propensity(user, list.item_at_rank(k + 1),
                                         core::SlotAction::from_code(code, spec), grid);
        }
    }
    search.run();

    PlacementPlan plan;
    plan.actions.reserve(search.best.size());
    for (int code : search.best) {
        plan.actions.push_back(core::SlotAction::from_code(code, spec));
    }
    core::RolloutResult rollout = replay(list, spec, plan);

    OracleResult result{std::move(rollout.panel), std::move(rollout.trajectory),
                        search.best_value, std::move(plan.actions)};
    return result;
}

}  // namespace panelmdp::baselines
