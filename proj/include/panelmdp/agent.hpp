#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "panelmdp/core.hpp"
#include "panelmdp/nn.hpp"
#include "panelmdp/rng.hpp"

namespace panelmdp::agent {

struct EpsilonSchedule {
    double start = 1.0;
    double end = 0.05;
    std::uint64_t decay_episodes = 1;  // linear ramp length; constant afterwards

    double at(std::uint64_t episode) const;
    void validate() const;
};

enum class RewardMode { Expected, Sampled };

struct AgentConfig {
    double gamma = 0.9;
    EpsilonSchedule epsilon;
    double learning_rate = 1e-3;
    int batch_size = 32;
    int target_sync_period = 200;  // train steps between target refreshes
    int replay_capacity = 10000;
    int warmup_records = 500;      // replay size before updates begin
    int time_dim = 8;
    int action_dim = 8;
    int gru_hidden = 16;
    int attention_heads = 2;
    std::vector<int> mlp_hidden = {64, 32};
    std::uint64_t seed = 0;

    void validate() const;
};

// Dueling Q-network over the Panel-MDP state tuple. The fixed action set has
// M*N+1 entries (the null code is always represented; legality masking hides
// it when discards are disabled), and the advantage head is centered by its
// mean over that full set:
//   Q(s,a) = V(s) + A(s,a) - mean_a' A(s,a')
class QNetwork {
public:
    QNetwork(int item_dim, int horizon, const core::PanelSpec& spec,
             const AgentConfig& config, util::Rng& rng);

    int num_actions() const { return num_actions_; }
    int item_dim() const { return item_dim_; }
    int horizon() const { return horizon_; }
    int state_dim() const;

    // The list encoding is constant within an episode and across replay
    // records that share a list, so it is computed once and passed around.
    struct ListEncoding {
        nn::AttentionBlock::Cache cache;
        nn::Vec pooled;
    };
    ListEncoding encode_list(const core::RankingList& list) const;

    struct Cache {
        nn::Vec state_vec;
        int time_index = 0;
        std::vector<int> history_codes;
        nn::GruCell::Cache gru;
        nn::DenseStack::Cache adv;
        nn::DenseStack::Cache val;
    };

    // concat(e(L), e(t), e(H_t))
    nn::Vec encode_state(const core::EnvState& state, Cache* cache = nullptr) const;
    nn::Vec encode_state(const ListEncoding& list_enc, const core::EnvState& state,
                         Cache* cache = nullptr) const;

    nn::Vec q_values(const core::EnvState& state, Cache* cache = nullptr) const;
    nn::Vec q_values(const ListEncoding& list_enc, const core::EnvState& state,
                     Cache* cache = nullptr) const;

    double state_value(const core::EnvState& state) const;  // V(s)

    // Backward through everything except the list encoder; returns the
    // gradient w.r.t. the pooled list encoding so callers can aggregate
    // contributions per unique list before running backward_list once.
    nn::Vec backward(const Cache& cache, const nn::Vec& dq);
    void backward_list(const ListEncoding& list_enc, const nn::Vec& dpooled);

    nn::ParamRefs params();
    std::size_t param_count() const;
    void copy_params_from(const QNetwork& other);

    nn::AttentionBlock list_encoder;
    nn::GruCell history_encoder;
    nn::EmbeddingTable time_embedding;
    nn::EmbeddingTable action_embedding;
    nn::DenseStack advantage_mlp;  // outputs M*N+1 values
    nn::DenseStack value_mlp;      // outputs 1 value

private:
    core::PanelSpec spec_;
    int item_dim_ = 0;
    int horizon_ = 0;
    int num_actions_ = 0;
};

// Epsilon-greedy over the legal actions; illegal actions are never returned.
// Greedy ties break toward the smallest action code.
core::SlotAction select_action(const QNetwork& net, const core::EnvState& state,
                               const core::PanelSpec& spec, double epsilon,
                               util::Rng& rng);
core::SlotAction select_action(const QNetwork& net,
                               const QNetwork::ListEncoding& list_enc,
                               const core::EnvState& state, const core::PanelSpec& spec,
                               double epsilon, util::Rng& rng);

// Bounded transition store with strictly oldest-first eviction.
class ReplayMemory {
public:
    explicit ReplayMemory(std::size_t capacity);

    void store(core::StepRecord record);
    std::vector<const core::StepRecord*> sample(std::size_t batch_size,
                                                util::Rng& rng) const;

    std::size_t size() const { return buffer_.size(); }
    std::size_t capacity() const { return capacity_; }
    // Logical index: 0 is the oldest record currently held.
    const core::StepRecord& at(std::size_t index) const;

private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<core::StepRecord> buffer_;
};

// y = r for terminal records, else r + gamma * max over legal actions of the
// target network's Q at the successor state.
std::vector<double> td_targets(const std::vector<const core::StepRecord*>& batch,
                               const QNetwork& target_net, double gamma,
                               const core::PanelSpec& spec);

// Mean squared TD error over the batch; accumulates gradients into the
// online network without applying an optimizer step.
double batch_loss_with_gradients(QNetwork& net,
                                 const std::vector<const core::StepRecord*>& batch,
                                 const std::vector<double>& targets,
                                 const core::PanelSpec& spec);

// One optimization step on the given batch; returns the pre-update loss.
double train_step_on_batch(QNetwork& net, const QNetwork& target_net,
                           const std::vector<const core::StepRecord*>& batch,
                           const AgentConfig& config, const core::PanelSpec& spec);

// Samples a batch from memory and optimizes once; returns the pre-update loss.
double train_step(QNetwork& net, const QNetwork& target_net, ReplayMemory& memory,
                  const AgentConfig& config, const core::PanelSpec& spec,
                  util::Rng& rng);

// Bitwise parameter copy onto the target network.
void sync_target(const QNetwork& net, QNetwork& target_net);

// One simulated request: the list to re-rank plus reward callbacks for the
// finished trajectory. finalize_rewards bakes in the reward mode (sampled
// feedback or deterministic expected credit); expected_reward is the analytic
// episode value used for evaluation curves.
struct EpisodeModel {
    std::shared_ptr<const core::RankingList> list;
    std::function<std::vector<core::StepRecord>(const std::vector<core::StepRecord>&,
                                                const core::Panel&, util::Rng&)>
        finalize_rewards;
    std::function<double(const std::vector<core::StepRecord>&, const core::Panel&)>
        expected_reward;
};

using EpisodeFactory = std::function<EpisodeModel(util::Rng&)>;

struct MetricsRow {
    std::uint64_t episode = 0;
    double total_reward = 0.0;
    double loss = 0.0;
    double epsilon = 0.0;
    double wall_ms = 0.0;
};

struct EvalPoint {
    std::uint64_t episode = 0;  // training episodes completed at this point
    double expected_reward = 0.0;
};

struct TrainOptions {
    std::uint64_t episodes = 0;
    std::uint64_t eval_period = 0;    // 0 disables periodic greedy evaluation
    std::uint64_t eval_episodes = 0;
};

struct TrainResult {
    std::unique_ptr<QNetwork> net;
    std::vector<MetricsRow> metrics;
    std::vector<EvalPoint> eval_curve;
    std::uint64_t train_steps = 0;
    double final_epsilon = 0.0;
};

// Full learning loop: epsilon-greedy rollouts, retroactive reward
// assignment, replay storage, one train step per episode step after warm-up,
// periodic target syncs and per-episode epsilon decay.
TrainResult train(const AgentConfig& config, const core::PanelSpec& spec,
                  int item_dim, int horizon, const EpisodeFactory& episodes,
                  const TrainOptions& options);

// Greedy rollout of the network on one episode model.
core::RolloutResult greedy_rollout(const QNetwork& net, const EpisodeModel& episode,
                                   const core::PanelSpec& spec);

}  // namespace panelmdp::agent
