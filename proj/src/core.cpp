#include "panelmdp/core.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace panelmdp::core {

RankingList::RankingList(std::vector<Item> items) : items_(std::move(items)) {
    if (items_.empty()) {
        throw ContractError("RankingList requires at least one item");
    }
    std::unordered_set<std::int64_t> seen;
    const std::size_t dim = items_.front().embedding.size();
    for (const Item& item : items_) {
        if (!seen.insert(item.id).second) {
            throw ContractError("RankingList has duplicate item id " +
                                std::to_string(item.id));
        }
        if (item.embedding.size() != dim) {
            throw ContractError("RankingList item embeddings have mixed dimensions");
        }
    }
}

const Item& RankingList::item_at_rank(int rank) const {
    if (rank < 1 || rank > size()) {
        throw ContractError("rank out of range: " + std::to_string(rank));
    }
    return items_[static_cast<std::size_t>(rank - 1)];
}

void PanelSpec::validate() const {
    if (rows < 1 || cols < 1) {
        throw ConfigError("panel dimensions must be positive");
    }
    if (null_penalty < 0.0) {
        throw ConfigError("panel.null_penalty must be nonnegative");
    }
}

SlotAction SlotAction::slot(int m, int n) {
    if (m < 1 || n < 1) {
        throw ContractError("slot indices are 1-based and positive");
    }
    SlotAction a;
    a.m_ = m;
    a.n_ = n;
    a.null_ = false;
    return a;
}

int SlotAction::m() const {
    if (null_) throw ContractError("null action has no row index");
    return m_;
}

int SlotAction::n() const {
    if (null_) throw ContractError("null action has no column index");
    return n_;
}

int SlotAction::code(const PanelSpec& spec) const {
    if (null_) return spec.null_code();
    if (m_ > spec.rows || n_ > spec.cols) {
        throw ContractError("slot action outside panel bounds");
    }
    return (m_ - 1) * spec.cols + (n_ - 1);
}

SlotAction SlotAction::from_code(int code, const PanelSpec& spec) {
    if (code < 0 || code > spec.null_code()) {
        throw ContractError("action code out of range: " + std::to_string(code));
    }
    if (code == spec.null_code()) return null_action();
    return slot(code / spec.cols + 1, code % spec.cols + 1);
}

bool ActionHistory::contains_slot(const SlotAction& action) const {
    if (action.is_null()) return false;
    return std::find(actions.begin(), actions.end(), action) != actions.end();
}

int ActionHistory::null_count() const {
    return static_cast<int>(
        std::count_if(actions.begin(), actions.end(),
                      [](const SlotAction& a) { return a.is_null(); }));
}

EnvState initial_state(std::shared_ptr<const RankingList> list) {
    if (!list) throw ContractError("initial_state requires a list");
    EnvState state;
    state.list = std::move(list);
    state.t = 0;
    return state;
}

std::vector<SlotAction> legal_actions(const EnvState& state, const PanelSpec& spec) {
    std::vector<SlotAction> out;
    out.reserve(static_cast<std::size_t>(spec.num_actions()));
    for (int m = 1; m <= spec.rows; ++m) {
        for (int n = 1; n <= spec.cols; ++n) {
            SlotAction a = SlotAction::slot(m, n);
            if (!state.history.contains_slot(a)) out.push_back(a);
        }
    }
    if (spec.allow_null) out.push_back(SlotAction::null_action());
    return out;
}

EnvState transition(const EnvState& state, const SlotAction& action,
                    const PanelSpec& spec) {
    if (state.t >= state.horizon()) {
        throw EpisodeExhaustedError("episode exhausted: t >= K");
    }
    const auto legal = legal_actions(state, spec);
    if (std::find(legal.begin(), legal.end(), action) == legal.end()) {
        throw ContractError("illegal action at t=" + std::to_string(state.t));
    }
    EnvState next;
    next.list = state.list;
    next.t = state.t + 1;
    next.history = state.history;
    next.history.actions.push_back(action);
    return next;
}

bool is_terminal(const EnvState& state, const PanelSpec& spec) {
    if (state.t >= state.horizon()) return true;
    return state.history.slot_count() >= spec.num_slots();
}

Panel::Panel(PanelSpec spec) : spec_(spec) {
    spec_.validate();
    cells_.resize(static_cast<std::size_t>(spec_.num_slots()));
}

const std::optional<Item>& Panel::at(int m, int n) const {
    if (m < 1 || m > spec_.rows || n < 1 || n > spec_.cols) {
        throw ContractError("panel cell out of range");
    }
    return cells_[static_cast<std::size_t>((m - 1) * spec_.cols + (n - 1))];
}

int Panel::filled_count() const {
    return static_cast<int>(
        std::count_if(cells_.begin(), cells_.end(),
                      [](const std::optional<Item>& c) { return c.has_value(); }));
}

Panel apply_placement(const Panel& panel, const SlotAction& action, const Item& item) {
    if (action.is_null()) {
        throw ContractError("cannot place an item with the null action");
    }
    const int code = action.code(panel.spec());
    Panel next = panel;
    auto& cell = next.cells_[static_cast<std::size_t>(code)];
    if (cell.has_value()) {
        throw ContractError("slot conflict at (" + std::to_string(action.m()) + "," +
                            std::to_string(action.n()) + ")");
    }
    cell = item;
    return next;
}

RolloutResult rollout_placement(const Policy& policy,
                                std::shared_ptr<const RankingList> list,
                                const PanelSpec& spec) {
    spec.validate();
    EnvState state = initial_state(std::move(list));
    RolloutResult result{Panel(spec), {}};
    while (!is_terminal(state, spec)) {
        const SlotAction action = policy(state);
        EnvState next = transition(state, action, spec);  // validates legality
        if (!action.is_null()) {
            const Item& item = state.list->item_at_rank(state.t + 1);
            result.panel = apply_placement(result.panel, action, item);
        }
        StepRecord record;
        record.state = state;
        record.action = action;
        record.reward = 0.0;
        record.next_state = next;
        record.terminal = is_terminal(next, spec);
        result.trajectory.push_back(std::move(record));
        state = std::move(next);
    }
    return result;
}

void RewardSpec::validate() const {
    if (!(purchase_reward > non_purchase_reward)) {
        throw ConfigError("rewards.purchase_reward must exceed non_purchase_reward");
    }
    if (null_penalty < 0.0) {
        throw ConfigError("rewards.null_penalty must be nonnegative");
    }
}

std::vector<StepRecord> assign_rewards(const std::vector<StepRecord>& trajectory,
                                       const std::optional<SlotAction>& purchased_slot,
                                       const RewardSpec& rewards,
                                       const PanelSpec& spec) {
    rewards.validate();
    if (purchased_slot.has_value()) {
        if (purchased_slot->is_null()) {
            throw DataError("purchase feedback cannot target the null action");
        }
        const bool placed = std::any_of(
            trajectory.begin(), trajectory.end(),
            [&](const StepRecord& r) { return r.action == *purchased_slot; });
        if (!placed) {
            throw DataError("inconsistent feedback: purchased slot was never filled");
        }
    }
    std::vector<StepRecord> out = trajectory;
    for (StepRecord& record : out) {
        if (record.action.is_null()) {
            record.reward = -rewards.null_penalty;
        } else if (purchased_slot.has_value() && record.action == *purchased_slot) {
            record.reward = rewards.purchase_reward;
        } else {
            record.reward = rewards.non_purchase_reward;
        }
        record.terminal = is_terminal(record.next_state, spec);
    }
    return out;
}

std::string trajectory_to_jsonl(const std::vector<StepRecord>& trajectory,
                                const PanelSpec& spec) {
    std::ostringstream out;
    for (const StepRecord& record : trajectory) {
        nlohmann::json row;
        row["t"] = record.state.t;
        row["action"] = record.action.code(spec);
        row["reward"] = record.reward;
        row["terminal"] = record.terminal;
        row["item_id"] = record.state.list->item_at_rank(record.state.t + 1).id;
        out << row.dump() << '\n';
    }
    return out.str();
}

std::vector<TrajectoryRow> parse_trajectory_jsonl(const std::string& text) {
    std::vector<TrajectoryRow> rows;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
        if (row.is_discarded()) {
            throw DataError("trajectory line " + std::to_string(lineno) +
                            ": invalid JSON");
        }
        try {
            TrajectoryRow parsed;
            parsed.t = row.at("t").get<int>();
            parsed.action = row.at("action").get<int>();
            parsed.reward = row.at("reward").get<double>();
            parsed.terminal = row.at("terminal").get<bool>();
            parsed.item_id = row.at("item_id").get<std::int64_t>();
            rows.push_back(parsed);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("trajectory line " + std::to_string(lineno) + ": " +
                            e.what());
        }
    }
    return rows;
}

}  // namespace panelmdp::core
