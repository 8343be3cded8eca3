#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "panelmdp/errors.hpp"
#include "panelmdp/rng.hpp"

namespace panelmdp::nn {

using Vec = std::vector<double>;

// One learnable tensor: values plus an accumulated gradient of the same
// shape. Double precision throughout so gradient checks and checkpoint
// round trips are exact.
struct ParamTensor {
    std::string name;
    std::vector<std::size_t> shape;
    Vec value;
    Vec grad;

    static ParamTensor matrix(std::string name, std::size_t rows, std::size_t cols);
    static ParamTensor vector(std::string name, std::size_t n);

    std::size_t size() const { return value.size(); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }
    void zero_grad();
};

using ParamRefs = std::vector<ParamTensor*>;

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
void glorot_init(ParamTensor& matrix, util::Rng& rng);
void uniform_init(ParamTensor& tensor, double limit, util::Rng& rng);

std::size_t param_count(const ParamRefs& params);
void zero_grads(const ParamRefs& params);

// Plain gradient descent: value -= lr * grad, then gradients are cleared.
void sgd_step(const ParamRefs& params, double learning_rate);

enum class Activation { Relu, Identity };

struct DenseLayer {
    ParamTensor W;  // out x in
    ParamTensor b;  // out
    Activation act = Activation::Identity;
};

// MLP with rectifier hidden layers and an identity output layer.
class DenseStack {
public:
    DenseStack() = default;

    // dims = {in, hidden..., out}
    static DenseStack make(const std::string& name, const std::vector<int>& dims,
                           util::Rng& rng);

    struct Cache {
        std::vector<Vec> inputs;
        std::vector<Vec> preacts;
    };

    Vec forward(const Vec& x, Cache* cache = nullptr) const;
    // Accumulates parameter gradients, returns the input gradient.
    Vec backward(const Cache& cache, const Vec& upstream);

    void collect_params(ParamRefs& out);
    int input_dim() const;
    int output_dim() const;

    std::vector<DenseLayer> layers;
};

// Multi-head self-attention followed by mean pooling. No positional
// encoding: rank information reaches the policy through the time embedding.
class AttentionBlock {
public:
    AttentionBlock() = default;

    static AttentionBlock make(const std::string& name, int model_dim, int heads,
                               util::Rng& rng);

    struct Cache {
        std::vector<Vec> inputs;               // T x dm
        std::vector<std::vector<Vec>> q, k, v; // head -> T x dh
        std::vector<std::vector<Vec>> attn;    // head -> T x T softmax rows
        std::vector<Vec> concat;               // T x dm
    };

    Vec forward(const std::vector<Vec>& items, Cache* cache = nullptr) const;
    // Gradient of the pooled output; returns per-item input gradients.
    std::vector<Vec> backward(const Cache& cache, const Vec& upstream);

    void collect_params(ParamRefs& out);
    int model_dim() const { return model_dim_; }
    int heads() const { return static_cast<int>(wq.size()); }
    int head_dim() const { return model_dim_ / heads(); }

    std::vector<ParamTensor> wq, wk, wv;  // per head, dh x dm
    ParamTensor wo;                       // dm x dm

private:
    int model_dim_ = 0;
};

// Free-function form used by the state encoder.
Vec attention_pool(const AttentionBlock& block, const std::vector<Vec>& items,
                   AttentionBlock::Cache* cache = nullptr);

// Gated recurrent unit scanned over a sequence; returns the final hidden
// state. The empty sequence encodes to the zero vector.
class GruCell {
public:
    GruCell() = default;

    static GruCell make(const std::string& name, int input_dim, int hidden_dim,
                        util::Rng& rng);

    struct Cache {
        std::vector<Vec> x, h_prev, z, r, hcand;
    };

    Vec forward(const std::vector<Vec>& sequence, Cache* cache = nullptr) const;
    // Gradient of the final hidden state; returns per-step input gradients.
    std::vector<Vec> backward(const Cache& cache, const Vec& upstream);

    void collect_params(ParamRefs& out);
    int input_dim() const { return static_cast<int>(Wz.cols()); }
    int hidden_dim() const { return static_cast<int>(Wz.rows()); }

    ParamTensor Wz, Uz, bz;
    ParamTensor Wr, Ur, br;
    ParamTensor Wh, Uh, bh;
};

Vec gru_encode(const GruCell& cell, const std::vector<Vec>& sequence,
               GruCell::Cache* cache = nullptr);

// Learned lookup table (time-step and action embeddings).
class EmbeddingTable {
public:
    EmbeddingTable() = default;

    static EmbeddingTable make(const std::string& name, int rows, int dim,
                               util::Rng& rng);

    Vec lookup(int index) const;
    void accumulate_grad(int index, const Vec& upstream);

    void collect_params(ParamRefs& out);
    int rows() const { return static_cast<int>(table.rows()); }
    int dim() const { return static_cast<int>(table.cols()); }

    ParamTensor table;
};

Vec embedding_lookup(const EmbeddingTable& table, int index);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
};

// Central-difference check of the gradients currently stored in the params.
// The caller runs the analytic backward pass first; objective() must
// recompute the scalar from the current parameter values.
GradCheckResult grad_check(const std::function<double()>& objective,
                           const ParamRefs& params, double step = 1e-5);

}  // namespace panelmdp::nn
