#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "panelmdp/errors.hpp"

namespace panelmdp::core {

// A catalog item: integer id plus a dense embedding of the catalog-wide
// dimension. Metadata is free-form display data and never enters the math.
struct Item {
    std::int64_t id = 0;
    std::vector<double> embedding;
    std::map<std::string, std::string> metadata;
};

// The ranked candidate list produced upstream; order is the upstream rank
// order. Immutable after construction.
class RankingList {
public:
    explicit RankingList(std::vector<Item> items);

    int size() const { return static_cast<int>(items_.size()); }
    const std::vector<Item>& items() const { return items_; }

    // rank is 1-based: item_at_rank(1) is the top item.
    const Item& item_at_rank(int rank) const;

private:
    std::vector<Item> items_;
};

// Panel geometry plus the discard rules. The action code space is fixed at
// rows*cols + 1 regardless of allow_null; legality masking removes the null
// code when discards are disabled.
struct PanelSpec {
    int rows = 1;
    int cols = 1;
    bool allow_null = true;
    double null_penalty = 0.1;  // xi

    int num_slots() const { return rows * cols; }
    int num_actions() const { return num_slots() + 1; }
    int null_code() const { return num_slots(); }
    void validate() const;
};

// Either a 1-based grid slot (m, n) or the null (discard) action.
class SlotAction {
public:
    SlotAction() = default;  // null action

    static SlotAction null_action() { return SlotAction{}; }
    static SlotAction slot(int m, int n);

    bool is_null() const { return null_; }
    int m() const;
    int n() const;

    // Row-major slot index in 0..M*N-1; M*N encodes null.
    int code(const PanelSpec& spec) const;
    static SlotAction from_code(int code, const PanelSpec& spec);

    friend bool operator==(const SlotAction& a, const SlotAction& b) = default;

private:
    int m_ = 0;
    int n_ = 0;
    bool null_ = true;
};

// The actions already taken this episode, in order. Non-null entries must be
// pairwise distinct.
struct ActionHistory {
    std::vector<SlotAction> actions;

    int size() const { return static_cast<int>(actions.size()); }
    bool contains_slot(const SlotAction& action) const;
    int null_count() const;
    int slot_count() const { return size() - null_count(); }
};

// MDP state tuple: the input list, the time step, and the action history.
// The legal action set is derived, never stored.
struct EnvState {
    std::shared_ptr<const RankingList> list;
    int t = 0;
    ActionHistory history;

    int horizon() const { return list->size(); }  // K
};

EnvState initial_state(std::shared_ptr<const RankingList> list);

// All slots not yet used, in code order, plus null when the spec allows it.
// Null survives repeated selection.
std::vector<SlotAction> legal_actions(const EnvState& state, const PanelSpec& spec);

// Appends the action and advances the clock; the list never changes.
EnvState transition(const EnvState& state, const SlotAction& action,
                    const PanelSpec& spec);

// True once t >= K or no slot remains open.
bool is_terminal(const EnvState& state, const PanelSpec& spec);

// The output grid. Cells are optional items; a cell stays empty when the
// episode ends before anything lands there.
class Panel {
public:
    explicit Panel(PanelSpec spec);

    const PanelSpec& spec() const { return spec_; }
    const std::optional<Item>& at(int m, int n) const;  // 1-based
    int filled_count() const;
    bool full() const { return filled_count() == spec_.num_slots(); }

private:
    friend Panel apply_placement(const Panel&, const SlotAction&, const Item&);
    PanelSpec spec_;
    std::vector<std::optional<Item>> cells_;
};

// Pure: returns a copy of the panel with the item placed at the slot.
Panel apply_placement(const Panel& panel, const SlotAction& action, const Item& item);

// One replay tuple (s, a, r, s').
struct StepRecord {
    EnvState state;
    SlotAction action;
    double reward = 0.0;
    EnvState next_state;
    bool terminal = false;
};

using Policy = std::function<SlotAction(const EnvState&)>;

struct RolloutResult {
    Panel panel;
    std::vector<StepRecord> trajectory;
};

// Processes items i_1..i_K in rank order, placing or discarding each one as
// the policy dictates, until the episode is terminal. Rewards are left at 0;
// they are assigned retroactively once panel-level feedback exists.
RolloutResult rollout_placement(const Policy& policy,
                                std::shared_ptr<const RankingList> list,
                                const PanelSpec& spec);

struct RewardSpec {
    double purchase_reward = 1.0;
    double non_purchase_reward = 0.0;
    double null_penalty = 0.1;  // xi

    void validate() const;
};

// Retroactive credit assignment after panel-level feedback: the step that
// placed into purchased_slot earns purchase_reward, other placements earn
// non_purchase_reward, discards earn -xi.
std::vector<StepRecord> assign_rewards(const std::vector<StepRecord>& trajectory,
                                       const std::optional<SlotAction>& purchased_slot,
                                       const RewardSpec& rewards,
                                       const PanelSpec& spec);

// JSON-lines trajectory serialization:
// {"t":..,"action":..,"reward":..,"terminal":..,"item_id":..} per step.
std::string trajectory_to_jsonl(const std::vector<StepRecord>& trajectory,
                                const PanelSpec& spec);

struct TrajectoryRow {
    int t = 0;
    int action = 0;
    double reward = 0.0;
    bool terminal = false;
    std::int64_t item_id = 0;
};

std::vector<TrajectoryRow> parse_trajectory_jsonl(const std::string& text);

}  // namespace panelmdp::core
