#include "panelmdp/agent.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

namespace panelmdp::agent {

double EpsilonSchedule::at(std::uint64_t episode) const {
    if (decay_episodes == 0 || episode >= decay_episodes) return end;
    const double frac = static_cast<double>(episode) / static_cast<double>(decay_episodes);
    return start + (end - start) * frac;
}

void EpsilonSchedule::validate() const {
    if (start < 0.0 || start > 1.0 || end < 0.0 || end > 1.0) {
        throw ConfigError("agent.epsilon values must lie in [0, 1]");
    }
}

void AgentConfig::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) {
        throw ConfigError("agent.gamma must lie in (0, 1)");
    }
    epsilon.validate();
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("agent.learning_rate must be positive and finite");
    }
    if (batch_size < 1) throw ConfigError("agent.batch_size must be positive");
    if (target_sync_period < 1) {
        throw ConfigError("agent.target_sync_period must be positive");
    }
    if (replay_capacity < batch_size) {
        throw ConfigError("agent.replay_capacity must be at least the batch size");
    }
    if (warmup_records < 0) throw ConfigError("agent.warmup_records must be nonnegative");
    if (time_dim < 1 || action_dim < 1 || gru_hidden < 1 || attention_heads < 1) {
        throw ConfigError("agent network dimensions must be positive");
    }
    for (int h : mlp_hidden) {
        if (h < 1) throw ConfigError("agent.mlp_hidden entries must be positive");
    }
}

// ------------------------------------------------------------------ QNetwork

QNetwork::QNetwork(int item_dim, int horizon, const core::PanelSpec& spec,
                   const AgentConfig& config, util::Rng& rng)
    : spec_(spec), item_dim_(item_dim), horizon_(horizon) {
    spec.validate();
    config.validate();
    if (horizon < 1) throw ConfigError("horizon K must be positive");
    if (item_dim < 1) throw ConfigError("item embedding dimension must be positive");
    if (item_dim % config.attention_heads != 0) {
        throw ConfigError("item dimension must be divisible by agent.attention_heads");
    }
    num_actions_ = spec.num_actions();

    list_encoder = nn::AttentionBlock::make("list_encoder", item_dim,
                                            config.attention_heads, rng);
    history_encoder =
        nn::GruCell::make("history_encoder", config.action_dim, config.gru_hidden, rng);
    time_embedding = nn::EmbeddingTable::make("time_embedding", horizon,
                                              config.time_dim, rng);
    action_embedding = nn::EmbeddingTable::make("action_embedding", num_actions_,
                                                config.action_dim, rng);

    std::vector<int> adv_dims{state_dim()};
    adv_dims.insert(adv_dims.end(), config.mlp_hidden.begin(), config.mlp_hidden.end());
    adv_dims.push_back(num_actions_);
    advantage_mlp = nn::DenseStack::make("advantage_mlp", adv_dims, rng);

    std::vector<int> val_dims{state_dim()};
    val_dims.insert(val_dims.end(), config.mlp_hidden.begin(), config.mlp_hidden.end());
    val_dims.push_back(1);
    value_mlp = nn::DenseStack::make("value_mlp", val_dims, rng);
}

int QNetwork::state_dim() const {
    return item_dim_ + time_embedding.dim() + history_encoder.hidden_dim();
}

QNetwork::ListEncoding QNetwork::encode_list(const core::RankingList& list) const {
    std::vector<nn::Vec> embeddings;
    embeddings.reserve(static_cast<std::size_t>(list.size()));
    for (const core::Item& item : list.items()) {
        if (static_cast<int>(item.embedding.size()) != item_dim_) {
            throw ContractError("item embedding dimension mismatch");
        }
        embeddings.push_back(item.embedding);
    }
    ListEncoding enc;
    enc.pooled = list_encoder.forward(embeddings, &enc.cache);
    return enc;
}

nn::Vec QNetwork::encode_state(const core::EnvState& state, Cache* cache) const {
    return encode_state(encode_list(*state.list), state, cache);
}

nn::Vec QNetwork::encode_state(const ListEncoding& list_enc,
                               const core::EnvState& state, Cache* cache) const {
    if (state.t != state.history.size()) {
        throw ContractError("state history length must equal t");
    }
    const nn::Vec time_vec = time_embedding.lookup(state.t);

    std::vector<int> history_codes;
    std::vector<nn::Vec> history_embeddings;
    history_codes.reserve(state.history.actions.size());
    history_embeddings.reserve(state.history.actions.size());
    for (const core::SlotAction& action : state.history.actions) {
        const int code = action.code(spec_);
        history_codes.push_back(code);
        history_embeddings.push_back(action_embedding.lookup(code));
    }
    nn::GruCell::Cache gru_cache;
    const nn::Vec history_vec =
        history_encoder.forward(history_embeddings, cache ? &gru_cache : nullptr);

    nn::Vec state_vec;
    state_vec.reserve(list_enc.pooled.size() + time_vec.size() + history_vec.size());
    state_vec.insert(state_vec.end(), list_enc.pooled.begin(), list_enc.pooled.end());
    state_vec.insert(state_vec.end(), time_vec.begin(), time_vec.end());
    state_vec.insert(state_vec.end(), history_vec.begin(), history_vec.end());

    if (cache) {
        cache->state_vec = state_vec;
        cache->time_index = state.t;
        cache->history_codes = std::move(history_codes);
        cache->gru = std::move(gru_cache);
    }
    return state_vec;
}

nn::Vec QNetwork::q_values(const core::EnvState& state, Cache* cache) const {
    return q_values(encode_list(*state.list), state, cache);
}

nn::Vec QNetwork::q_values(const ListEncoding& list_enc, const core::EnvState& state,
                           Cache* cache) const {
    const nn::Vec state_vec = encode_state(list_enc, state, cache);
    nn::DenseStack::Cache adv_cache, val_cache;
    const nn::Vec advantages =
        advantage_mlp.forward(state_vec, cache ? &adv_cache : nullptr);
    const nn::Vec value = value_mlp.forward(state_vec, cache ? &val_cache : nullptr);

    double mean_advantage = 0.0;
    for (double a : advantages) mean_advantage += a;
    mean_advantage /= static_cast<double>(advantages.size());

    nn::Vec q(advantages.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        q[i] = value[0] + advantages[i] - mean_advantage;
    }
    if (cache) {
        cache->adv = std::move(adv_cache);
        cache->val = std::move(val_cache);
    }
    return q;
}

double QNetwork::state_value(const core::EnvState& state) const {
    const nn::Vec state_vec = encode_state(state);
    return value_mlp.forward(state_vec)[0];
}

nn::Vec QNetwork::backward(const Cache& cache, const nn::Vec& dq) {
    // Q_a = V + A_a - mean(A): dV = sum(dq), dA = dq - mean(dq).
    double dq_sum = 0.0;
    for (double g : dq) dq_sum += g;
    const double dq_mean = dq_sum / static_cast<double>(dq.size());

    nn::Vec d_adv(dq.size());
    for (std::size_t i = 0; i < dq.size(); ++i) d_adv[i] = dq[i] - dq_mean;

    const nn::Vec d_state_adv = advantage_mlp.backward(cache.adv, d_adv);
    const nn::Vec d_state_val = value_mlp.backward(cache.val, nn::Vec{dq_sum});

    nn::Vec d_state(d_state_adv.size());
    for (std::size_t i = 0; i < d_state.size(); ++i) {
        d_state[i] = d_state_adv[i] + d_state_val[i];
    }

    const auto pooled_dim = static_cast<std::size_t>(item_dim_);
    const auto time_dim = static_cast<std::size_t>(time_embedding.dim());
    nn::Vec d_pooled(d_state.begin(),
                     d_state.begin() + static_cast<std::ptrdiff_t>(pooled_dim));
    nn::Vec d_time(d_state.begin() + static_cast<std::ptrdiff_t>(pooled_dim),
                   d_state.begin() + static_cast<std::ptrdiff_t>(pooled_dim + time_dim));
    nn::Vec d_history(d_state.begin() + static_cast<std::ptrdiff_t>(pooled_dim + time_dim),
                      d_state.end());

    time_embedding.accumulate_grad(cache.time_index, d_time);
    const std::vector<nn::Vec> d_history_inputs =
        history_encoder.backward(cache.gru, d_history);
    for (std::size_t i = 0; i < cache.history_codes.size(); ++i) {
        action_embedding.accumulate_grad(cache.history_codes[i], d_history_inputs[i]);
    }
    return d_pooled;
}

void QNetwork::backward_list(const ListEncoding& list_enc, const nn::Vec& dpooled) {
    list_encoder.backward(list_enc.cache, dpooled);
}

nn::ParamRefs QNetwork::params() {
    nn::ParamRefs refs;
    list_encoder.collect_params(refs);
    history_encoder.collect_params(refs);
    time_embedding.collect_params(refs);
    action_embedding.collect_params(refs);
    advantage_mlp.collect_params(refs);
    value_mlp.collect_params(refs);
    return refs;
}

std::size_t QNetwork::param_count() const {
    return nn::param_count(const_cast<QNetwork*>(this)->params());
}

void QNetwork::copy_params_from(const QNetwork& other) {
    nn::ParamRefs mine = params();
    nn::ParamRefs theirs = const_cast<QNetwork&>(other).params();
    if (mine.size() != theirs.size()) {
        throw ContractError("network structures differ: tensor counts mismatch");
    }
    for (std::size_t i = 0; i < mine.size(); ++i) {
        if (mine[i]->shape != theirs[i]->shape) {
            throw ContractError("network structures differ at " + mine[i]->name);
        }
        mine[i]->value = theirs[i]->value;
    }
}

// ------------------------------------------------------------- select_action

namespace {

core::SlotAction greedy_among(const nn::Vec& q,
                              const std::vector<core::SlotAction>& legal,
                              const core::PanelSpec& spec) {
    const core::SlotAction* best = nullptr;
    double best_q = 0.0;
    for (const core::SlotAction& action : legal) {
        const double value = q[static_cast<std::size_t>(action.code(spec))];
        if (best == nullptr || value > best_q) {
            best = &action;
            best_q = value;
        }
    }
    return *best;
}

}  // namespace

core::SlotAction select_action(const QNetwork& net, const core::EnvState& state,
                               const core::PanelSpec& spec, double epsilon,
                               util::Rng& rng) {
    return select_action(net, net.encode_list(*state.list), state, spec, epsilon, rng);
}

core::SlotAction select_action(const QNetwork& net,
                               const QNetwork::ListEncoding& list_enc,
                               const core::EnvState& state, const core::PanelSpec& spec,
                               double epsilon, util::Rng& rng) {
    const auto legal = core::legal_actions(state, spec);
    if (legal.empty()) {
        throw ContractError("select_action requires at least one legal action");
    }
    if (epsilon > 0.0 && rng.uniform() < epsilon) {
        return legal[rng.uniform_int(legal.size())];
    }
    const nn::Vec q = net.q_values(list_enc, state);
    return greedy_among(q, legal, spec);
}

// -------------------------------------------------------------- ReplayMemory

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("replay capacity must be positive");
    buffer_.reserve(capacity_);
}

void ReplayMemory::store(core::StepRecord record) {
    if (buffer_.size() < capacity_) {
        buffer_.push_back(std::move(record));
    } else {
        buffer_[next_] = std::move(record);
    }
    next_ = (next_ + 1) % capacity_;
}

const core::StepRecord& ReplayMemory::at(std::size_t index) const {
    if (index >= buffer_.size()) {
        throw std::out_of_range("replay index out of range");
    }
    if (buffer_.size() < capacity_) return buffer_[index];
    return buffer_[(next_ + index) % capacity_];
}

// Draws are with replacement, so any non-empty memory can fill a batch; the
// training loop separately refuses to learn from an under-filled memory.
std::vector<const core::StepRecord*> ReplayMemory::sample(std::size_t batch_size,
                                                          util::Rng& rng) const {
    if (buffer_.empty()) {
        throw ContractError("cannot sample from an empty replay memory");
    }
    std::vector<const core::StepRecord*> batch;
    batch.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        batch.push_back(&buffer_[rng.uniform_int(buffer_.size())]);
    }
    return batch;
}

// ---------------------------------------------------------------- td targets

namespace {

double max_legal_q(const nn::Vec& q, const core::EnvState& state,
                   const core::PanelSpec& spec) {
    const auto legal = core::legal_actions(state, spec);
    double best = -1e300;
    for (const core::SlotAction& action : legal) {
        best = std::max(best, q[static_cast<std::size_t>(action.code(spec))]);
    }
    return best;
}

// Group batch indices by the list they share so the attention encoder runs
// once per unique list instead of once per record. Groups keep first-seen
// order: iterating a pointer-keyed map would make the floating-point
// accumulation order depend on heap layout and break run-to-run determinism.
struct ListGroup {
    const core::RankingList* list;
    std::vector<std::size_t> indices;
};

template <typename GetList>
std::vector<ListGroup> group_by_list(std::size_t count, GetList get_list) {
    std::vector<ListGroup> groups;
    std::map<const core::RankingList*, std::size_t> seen;
    for (std::size_t i = 0; i < count; ++i) {
        const core::RankingList* list = get_list(i);
        const auto [it, inserted] = seen.emplace(list, groups.size());
        if (inserted) groups.push_back(ListGroup{list, {}});
        groups[it->second].indices.push_back(i);
    }
    return groups;
}

}  // namespace

std::vector<double> td_targets(const std::vector<const core::StepRecord*>& batch,
                               const QNetwork& target_net, double gamma,
                               const core::PanelSpec& spec) {
    if (batch.empty()) throw ContractError("td_targets requires a non-empty batch");
    std::vector<double> targets(batch.size());
    const auto groups = group_by_list(
        batch.size(), [&](std::size_t i) { return batch[i]->next_state.list.get(); });
    for (const auto& [list, indices] : groups) {
        QNetwork::ListEncoding enc;
        bool encoded = false;
        for (const std::size_t i : indices) {
            const core::StepRecord& record = *batch[i];
            if (record.terminal) {
                targets[i] = record.reward;
                continue;
            }
            if (!encoded) {
                enc = target_net.encode_list(*list);
                encoded = true;
            }
            const nn::Vec q = target_net.q_values(enc, record.next_state);
            targets[i] =
                record.reward + gamma * max_legal_q(q, record.next_state, spec);
        }
    }
    return targets;
}

double batch_loss_with_gradients(QNetwork& net,
                                 const std::vector<const core::StepRecord*>& batch,
                                 const std::vector<double>& targets,
                                 const core::PanelSpec& spec) {
    if (batch.empty() || batch.size() != targets.size()) {
        throw ContractError("batch and target sizes must match and be non-empty");
    }
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    const auto groups = group_by_list(
        batch.size(), [&](std::size_t i) { return batch[i]->state.list.get(); });
    for (const auto& [list, indices] : groups) {
        const QNetwork::ListEncoding enc = net.encode_list(*list);
        nn::Vec d_pooled_sum(enc.pooled.size(), 0.0);
        for (const std::size_t i : indices) {
            const core::StepRecord& record = *batch[i];
            QNetwork::Cache cache;
            const nn::Vec q = net.q_values(enc, record.state, &cache);
            const auto code = static_cast<std::size_t>(record.action.code(spec));
            const double err = q[code] - targets[i];
            loss += err * err * inv_batch;

            nn::Vec dq(q.size(), 0.0);
            dq[code] = 2.0 * err * inv_batch;
            const nn::Vec d_pooled = net.backward(cache, dq);
            for (std::size_t d = 0; d < d_pooled_sum.size(); ++d) {
                d_pooled_sum[d] += d_pooled[d];
            }
        }
        net.backward_list(enc, d_pooled_sum);
    }
    if (!std::isfinite(loss)) {
        throw NumericError("non-finite TD loss over a batch of " +
                           std::to_string(batch.size()) + " records");
    }
    return loss;
}

double train_step_on_batch(QNetwork& net, const QNetwork& target_net,
                           const std::vector<const core::StepRecord*>& batch,
                           const AgentConfig& config, const core::PanelSpec& spec) {
    const std::vector<double> targets =
        td_targets(batch, target_net, config.gamma, spec);
    const double loss = batch_loss_with_gradients(net, batch, targets, spec);
    nn::sgd_step(net.params(), config.learning_rate);
    return loss;
}

double train_step(QNetwork& net, const QNetwork& target_net, ReplayMemory& memory,
                  const AgentConfig& config, const core::PanelSpec& spec,
                  util::Rng& rng) {
    if (memory.size() < static_cast<std::size_t>(config.batch_size)) {
        throw ContractError("insufficient replay data: " +
                            std::to_string(memory.size()) + " records for a batch of " +
                            std::to_string(config.batch_size));
    }
    const auto batch = memory.sample(static_cast<std::size_t>(config.batch_size), rng);
    return train_step_on_batch(net, target_net, batch, config, spec);
}

void sync_target(const QNetwork& net, QNetwork& target_net) {
    target_net.copy_params_from(net);
}

// --------------------------------------------------------------------- train

core::RolloutResult greedy_rollout(const QNetwork& net, const EpisodeModel& episode,
                                   const core::PanelSpec& spec) {
    const QNetwork::ListEncoding enc = net.encode_list(*episode.list);
    util::Rng unused(0);
    core::Policy policy = [&](const core::EnvState& state) {
        return select_action(net, enc, state, spec, 0.0, unused);
    };
    return core::rollout_placement(policy, episode.list, spec);
}

TrainResult train(const AgentConfig& config, const core::PanelSpec& spec,
                  int item_dim, int horizon, const EpisodeFactory& episodes,
                  const TrainOptions& options) {
    config.validate();
    spec.validate();

    util::Rng init_rng(util::derive_seed(config.seed, "net_init"));
    TrainResult result;
    result.net = std::make_unique<QNetwork>(item_dim, horizon, spec, config, init_rng);
    QNetwork target = *result.net;

    ReplayMemory memory(static_cast<std::size_t>(config.replay_capacity));
    util::Rng train_rng(util::derive_seed(config.seed, "train"));
    const std::size_t warmup = std::max(static_cast<std::size_t>(config.warmup_records),
                                        static_cast<std::size_t>(config.batch_size));

    result.final_epsilon = config.epsilon.at(0);
    for (std::uint64_t ep = 0; ep < options.episodes; ++ep) {
        const auto wall_start = std::chrono::steady_clock::now();
        const double epsilon = config.epsilon.at(ep);
        result.final_epsilon = epsilon;

        const EpisodeModel episode = episodes(train_rng);
        const QNetwork::ListEncoding enc = result.net->encode_list(*episode.list);
        core::Policy policy = [&](const core::EnvState& state) {
            return select_action(*result.net, enc, state, spec, epsilon, train_rng);
        };
        core::RolloutResult rollout =
            core::rollout_placement(policy, episode.list, spec);
        const std::vector<core::StepRecord> rewarded =
            episode.finalize_rewards(rollout.trajectory, rollout.panel, train_rng);

        double total_reward = 0.0;
        for (const core::StepRecord& record : rewarded) {
            total_reward += record.reward;
            memory.store(record);
        }

        double loss_sum = 0.0;
        std::uint64_t loss_count = 0;
        if (memory.size() >= warmup) {
            for (std::size_t step = 0; step < rewarded.size(); ++step) {
                loss_sum += train_step(*result.net, target, memory, config, spec,
                                       train_rng);
                ++loss_count;
                ++result.train_steps;
                if (result.train_steps %
                        static_cast<std::uint64_t>(config.target_sync_period) ==
                    0) {
                    sync_target(*result.net, target);
                }
            }
        }

        const auto wall_end = std::chrono::steady_clock::now();
        MetricsRow row;
        row.episode = ep;
        row.total_reward = total_reward;
        row.loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
        row.epsilon = epsilon;
        row.wall_ms =
            std::chrono::duration<double, std::milli>(wall_end - wall_start).count();
        result.metrics.push_back(row);

        if (options.eval_period > 0 && (ep + 1) % options.eval_period == 0 &&
            options.eval_episodes > 0) {
            // Fixed test set: every eval point replays the same user stream,
            // so curve movement reflects policy change rather than user
            // sampling noise.
            util::Rng eval_rng(util::derive_seed(config.seed, "train_eval"));
            double value_sum = 0.0;
            for (std::uint64_t i = 0; i < options.eval_episodes; ++i) {
                const EpisodeModel eval_episode = episodes(eval_rng);
                const core::RolloutResult eval_rollout =
                    greedy_rollout(*result.net, eval_episode, spec);
                value_sum += eval_episode.expected_reward(eval_rollout.trajectory,
                                                          eval_rollout.panel);
            }
            result.eval_curve.push_back(
                EvalPoint{ep + 1, value_sum / static_cast<double>(options.eval_episodes)});
        }
    }
    return result;
}

}  // namespace panelmdp::agent
