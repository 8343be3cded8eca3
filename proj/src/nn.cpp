#include "panelmdp/nn.hpp"

#include <algorithm>
#include <cmath>

namespace panelmdp::nn {

namespace {

// y = W x (+ y0)
void matvec(const ParamTensor& W, const Vec& x, Vec& y) {
    const std::size_t rows = W.rows(), cols = W.cols();
    if (x.size() != cols) {
        throw ContractError(W.name + ": expected input of size " + std::to_string(cols) +
                            ", got " + std::to_string(x.size()));
    }
    y.assign(rows, 0.0);
    const double* w = W.value.data();
    for (std::size_t i = 0; i < rows; ++i) {
        double acc = 0.0;
        const double* row = w + i * cols;
        for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
}

// y += W^T g
void matvec_transposed_add(const ParamTensor& W, const Vec& g, Vec& y) {
    const std::size_t rows = W.rows(), cols = W.cols();
    if (y.size() != cols) y.assign(cols, 0.0);
    const double* w = W.value.data();
    for (std::size_t i = 0; i < rows; ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        const double* row = w + i * cols;
        for (std::size_t j = 0; j < cols; ++j) y[j] += row[j] * gi;
    }
}

// grad += g x^T
void outer_accumulate(ParamTensor& W, const Vec& g, const Vec& x) {
    const std::size_t rows = W.rows(), cols = W.cols();
    double* dw = W.grad.data();
    for (std::size_t i = 0; i < rows; ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        double* row = dw + i * cols;
        for (std::size_t j = 0; j < cols; ++j) row[j] += gi * x[j];
    }
}

void add_to(Vec& target, const Vec& source) {
    for (std::size_t i = 0; i < source.size(); ++i) target[i] += source[i];
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

ParamTensor ParamTensor::matrix(std::string name, std::size_t rows, std::size_t cols) {
    ParamTensor t;
    t.name = std::move(name);
    t.shape = {rows, cols};
    t.value.assign(rows * cols, 0.0);
    t.grad.assign(rows * cols, 0.0);
    return t;
}

ParamTensor ParamTensor::vector(std::string name, std::size_t n) {
    ParamTensor t;
    t.name = std::move(name);
    t.shape = {n};
    t.value.assign(n, 0.0);
    t.grad.assign(n, 0.0);
    return t;
}

void ParamTensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void glorot_init(ParamTensor& matrix, util::Rng& rng) {
    const double fan_in = static_cast<double>(matrix.cols());
    const double fan_out = static_cast<double>(matrix.rows());
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : matrix.value) v = (2.0 * rng.uniform() - 1.0) * limit;
}

void uniform_init(ParamTensor& tensor, double limit, util::Rng& rng) {
    for (double& v : tensor.value) v = (2.0 * rng.uniform() - 1.0) * limit;
}

std::size_t param_count(const ParamRefs& params) {
    std::size_t n = 0;
    for (const ParamTensor* p : params) n += p->size();
    return n;
}

void zero_grads(const ParamRefs& params) {
    for (ParamTensor* p : params) p->zero_grad();
}

void sgd_step(const ParamRefs& params, double learning_rate) {
    if (!std::isfinite(learning_rate)) {
        throw NumericError("non-finite learning rate");
    }
    for (ParamTensor* p : params) {
        for (std::size_t i = 0; i < p->size(); ++i) {
            if (!std::isfinite(p->grad[i])) {
                throw NumericError("non-finite gradient in " + p->name);
            }
            p->value[i] -= learning_rate * p->grad[i];
        }
        p->zero_grad();
    }
}

// ---------------------------------------------------------------- DenseStack

DenseStack DenseStack::make(const std::string& name, const std::vector<int>& dims,
                            util::Rng& rng) {
    if (dims.size() < 2) {
        throw ConfigError("dense stack needs at least input and output dims");
    }
    DenseStack stack;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer layer;
        const auto in = static_cast<std::size_t>(dims[l]);
        const auto out = static_cast<std::size_t>(dims[l + 1]);
        layer.W = ParamTensor::matrix(name + ".W" + std::to_string(l), out, in);
        layer.b = ParamTensor::vector(name + ".b" + std::to_string(l), out);
        glorot_init(layer.W, rng);
        layer.act = (l + 2 < dims.size()) ? Activation::Relu : Activation::Identity;
        stack.layers.push_back(std::move(layer));
    }
    return stack;
}

Vec DenseStack::forward(const Vec& x, Cache* cache) const {
    if (cache) {
        cache->inputs.clear();
        cache->preacts.clear();
    }
    Vec h = x;
    for (const DenseLayer& layer : layers) {
        if (cache) cache->inputs.push_back(h);
        Vec pre;
        matvec(layer.W, h, pre);
        add_to(pre, layer.b.value);
        if (cache) cache->preacts.push_back(pre);
        if (layer.act == Activation::Relu) {
            for (double& v : pre) v = v > 0.0 ? v : 0.0;
        }
        h = std::move(pre);
    }
    return h;
}

Vec DenseStack::backward(const Cache& cache, const Vec& upstream) {
    Vec grad = upstream;
    for (std::size_t li = layers.size(); li-- > 0;) {
        DenseLayer& layer = layers[li];
        const Vec& pre = cache.preacts[li];
        if (layer.act == Activation::Relu) {
            for (std::size_t i = 0; i < grad.size(); ++i) {
                if (pre[i] <= 0.0) grad[i] = 0.0;
            }
        }
        const Vec& input = cache.inputs[li];
        outer_accumulate(layer.W, grad, input);
        add_to(layer.b.grad, grad);
        Vec down(input.size(), 0.0);
        matvec_transposed_add(layer.W, grad, down);
        grad = std::move(down);
    }
    return grad;
}

void DenseStack::collect_params(ParamRefs& out) {
    for (DenseLayer& layer : layers) {
        out.push_back(&layer.W);
        out.push_back(&layer.b);
    }
}

int DenseStack::input_dim() const {
    return static_cast<int>(layers.front().W.cols());
}

int DenseStack::output_dim() const {
    return static_cast<int>(layers.back().W.rows());
}

// ------------------------------------------------------------ AttentionBlock

AttentionBlock AttentionBlock::make(const std::string& name, int model_dim,
                                    int heads, util::Rng& rng) {
    if (heads < 1 || model_dim % heads != 0) {
        throw ConfigError("attention model dim must be divisible by head count");
    }
    AttentionBlock block;
    block.model_dim_ = model_dim;
    const auto dm = static_cast<std::size_t>(model_dim);
    const auto dh = static_cast<std::size_t>(model_dim / heads);
    for (int h = 0; h < heads; ++h) {
        const std::string tag = name + ".h" + std::to_string(h);
        block.wq.push_back(ParamTensor::matrix(tag + ".wq", dh, dm));
        block.wk.push_back(ParamTensor::matrix(tag + ".wk", dh, dm));
        block.wv.push_back(ParamTensor::matrix(tag + ".wv", dh, dm));
        glorot_init(block.wq.back(), rng);
        glorot_init(block.wk.back(), rng);
        glorot_init(block.wv.back(), rng);
    }
    block.wo = ParamTensor::matrix(name + ".wo", dm, dm);
    glorot_init(block.wo, rng);
    return block;
}

Vec AttentionBlock::forward(const std::vector<Vec>& items, Cache* cache) const {
    if (items.empty()) {
        throw ContractError("attention_pool requires a non-empty sequence");
    }
    const std::size_t T = items.size();
    const auto dm = static_cast<std::size_t>(model_dim_);
    const auto nh = static_cast<std::size_t>(heads());
    const auto dh = static_cast<std::size_t>(head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (const Vec& item : items) {
        if (item.size() != dm) {
            throw ContractError("attention input dimension mismatch");
        }
    }

    std::vector<std::vector<Vec>> q(nh), k(nh), v(nh), attn(nh);
    std::vector<Vec> concat(T, Vec(dm, 0.0));
    for (std::size_t h = 0; h < nh; ++h) {
        q[h].resize(T);
        k[h].resize(T);
        v[h].resize(T);
        for (std::size_t i = 0; i < T; ++i) {
            matvec(wq[h], items[i], q[h][i]);
            matvec(wk[h], items[i], k[h][i]);
            matvec(wv[h], items[i], v[h][i]);
        }
        attn[h].assign(T, Vec(T, 0.0));
        for (std::size_t i = 0; i < T; ++i) {
            Vec& row = attn[h][i];
            double maxscore = -1e300;
            for (std::size_t j = 0; j < T; ++j) {
                double s = 0.0;
                for (std::size_t d = 0; d < dh; ++d) s += q[h][i][d] * k[h][j][d];
                row[j] = s * scale;
                maxscore = std::max(maxscore, row[j]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < T; ++j) {
                row[j] = std::exp(row[j] - maxscore);
                z += row[j];
            }
            for (std::size_t j = 0; j < T; ++j) row[j] /= z;
            for (std::size_t j = 0; j < T; ++j) {
                const double a = row[j];
                for (std::size_t d = 0; d < dh; ++d) {
                    concat[i][h * dh + d] += a * v[h][j][d];
                }
            }
        }
    }

    Vec pooled(dm, 0.0);
    Vec out_i;
    for (std::size_t i = 0; i < T; ++i) {
        matvec(wo, concat[i], out_i);
        add_to(pooled, out_i);
    }
    const double inv_t = 1.0 / static_cast<double>(T);
    for (double& p : pooled) p *= inv_t;

    if (cache) {
        cache->inputs = items;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(attn);
        cache->concat = std::move(concat);
    }
    return pooled;
}

std::vector<Vec> AttentionBlock::backward(const Cache& cache, const Vec& upstream) {
    const std::size_t T = cache.inputs.size();
    const auto dm = static_cast<std::size_t>(model_dim_);
    const auto nh = static_cast<std::size_t>(heads());
    const auto dh = static_cast<std::size_t>(head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double inv_t = 1.0 / static_cast<double>(T);

    // Mean pooling spreads the same gradient over every position.
    Vec dout(dm);
    for (std::size_t d = 0; d < dm; ++d) dout[d] = upstream[d] * inv_t;

    std::vector<Vec> dconcat(T, Vec(dm, 0.0));
    for (std::size_t i = 0; i < T; ++i) {
        outer_accumulate(wo, dout, cache.concat[i]);
        matvec_transposed_add(wo, dout, dconcat[i]);
    }

    std::vector<Vec> dinputs(T, Vec(dm, 0.0));
    Vec dq(dh), dk(dh), dv(dh);
    for (std::size_t h = 0; h < nh; ++h) {
        std::vector<Vec> dqs(T, Vec(dh, 0.0)), dks(T, Vec(dh, 0.0)),
            dvs(T, Vec(dh, 0.0));
        for (std::size_t i = 0; i < T; ++i) {
            const Vec& arow = cache.attn[h][i];
            // d attn row and d v
            Vec da(T, 0.0);
            for (std::size_t j = 0; j < T; ++j) {
                double acc = 0.0;
                for (std::size_t d = 0; d < dh; ++d) {
                    acc += dconcat[i][h * dh + d] * cache.v[h][j][d];
                    dvs[j][d] += arow[j] * dconcat[i][h * dh + d];
                }
                da[j] = acc;
            }
            // softmax backward: ds_j = a_j * (da_j - sum_k a_k da_k)
            double dot = 0.0;
            for (std::size_t j = 0; j < T; ++j) dot += arow[j] * da[j];
            for (std::size_t j = 0; j < T; ++j) {
                const double ds = arow[j] * (da[j] - dot) * scale;
                if (ds == 0.0) continue;
                for (std::size_t d = 0; d < dh; ++d) {
                    dqs[i][d] += ds * cache.k[h][j][d];
                    dks[j][d] += ds * cache.q[h][i][d];
                }
            }
        }
        for (std::size_t i = 0; i < T; ++i) {
            outer_accumulate(wq[h], dqs[i], cache.inputs[i]);
            outer_accumulate(wk[h], dks[i], cache.inputs[i]);
            outer_accumulate(wv[h], dvs[i], cache.inputs[i]);
            matvec_transposed_add(wq[h], dqs[i], dinputs[i]);
            matvec_transposed_add(wk[h], dks[i], dinputs[i]);
            matvec_transposed_add(wv[h], dvs[i], dinputs[i]);
        }
    }
    return dinputs;
}

void AttentionBlock::collect_params(ParamRefs& out) {
    for (std::size_t h = 0; h < wq.size(); ++h) {
        out.push_back(&wq[h]);
        out.push_back(&wk[h]);
        out.push_back(&wv[h]);
    }
    out.push_back(&wo);
}

Vec attention_pool(const AttentionBlock& block, const std::vector<Vec>& items,
                   AttentionBlock::Cache* cache) {
    return block.forward(items, cache);
}

// -------------------------------------------------------------------- GruCell

GruCell GruCell::make(const std::string& name, int input_dim, int hidden_dim,
                      util::Rng& rng) {
    if (input_dim < 1 || hidden_dim < 1) {
        throw ConfigError("gru dims must be positive");
    }
    GruCell cell;
    const auto in = static_cast<std::size_t>(input_dim);
    const auto hid = static_cast<std::size_t>(hidden_dim);
    auto gate = [&](const char* tag, ParamTensor& W, ParamTensor& U, ParamTensor& b) {
        W = ParamTensor::matrix(name + ".W" + tag, hid, in);
        U = ParamTensor::matrix(name + ".U" + tag, hid, hid);
        b = ParamTensor::vector(name + ".b" + tag, hid);
        glorot_init(W, rng);
        glorot_init(U, rng);
    };
    gate("z", cell.Wz, cell.Uz, cell.bz);
    gate("r", cell.Wr, cell.Ur, cell.br);
    gate("h", cell.Wh, cell.Uh, cell.bh);
    return cell;
}

// z_t = sigmoid(Wz x + Uz h + bz)
// r_t = sigmoid(Wr x + Ur h + br)
// hc_t = tanh(Wh x + Uh (r_t * h) + bh)
// h_t = (1 - z_t) * h + z_t * hc_t
Vec GruCell::forward(const std::vector<Vec>& sequence, Cache* cache) const {
    const auto hid = static_cast<std::size_t>(hidden_dim());
    Vec h(hid, 0.0);
    if (cache) *cache = Cache{};
    Vec az, ar, ah, gated(hid);
    for (const Vec& x : sequence) {
        matvec(Wz, x, az);
        {
            Vec tmp;
            matvec(Uz, h, tmp);
            add_to(az, tmp);
        }
        add_to(az, bz.value);
        matvec(Wr, x, ar);
        {
            Vec tmp;
            matvec(Ur, h, tmp);
            add_to(ar, tmp);
        }
        add_to(ar, br.value);
        Vec z(hid), r(hid);
        for (std::size_t i = 0; i < hid; ++i) {
            z[i] = sigmoid(az[i]);
            r[i] = sigmoid(ar[i]);
            gated[i] = r[i] * h[i];
        }
        matvec(Wh, x, ah);
        {
            Vec tmp;
            matvec(Uh, gated, tmp);
            add_to(ah, tmp);
        }
        add_to(ah, bh.value);
        Vec hc(hid);
        for (std::size_t i = 0; i < hid; ++i) hc[i] = std::tanh(ah[i]);
        if (cache) {
            cache->x.push_back(x);
            cache->h_prev.push_back(h);
            cache->z.push_back(z);
            cache->r.push_back(r);
            cache->hcand.push_back(hc);
        }
        for (std::size_t i = 0; i < hid; ++i) {
            h[i] = (1.0 - z[i]) * h[i] + z[i] * hc[i];
        }
    }
    return h;
}

std::vector<Vec> GruCell::backward(const Cache& cache, const Vec& upstream) {
    const auto hid = static_cast<std::size_t>(hidden_dim());
    const std::size_t T = cache.x.size();
    std::vector<Vec> dinputs(T, Vec(static_cast<std::size_t>(input_dim()), 0.0));
    Vec dh = upstream;
    for (std::size_t t = T; t-- > 0;) {
        const Vec& h_prev = cache.h_prev[t];
        const Vec& z = cache.z[t];
        const Vec& r = cache.r[t];
        const Vec& hc = cache.hcand[t];
        Vec daz(hid), dar(hid), dah(hid), dh_prev(hid);
        for (std::size_t i = 0; i < hid; ++i) {
            const double dz = dh[i] * (hc[i] - h_prev[i]);
            const double dhc = dh[i] * z[i];
            daz[i] = dz * z[i] * (1.0 - z[i]);
            dah[i] = dhc * (1.0 - hc[i] * hc[i]);
            dh_prev[i] = dh[i] * (1.0 - z[i]);
        }
        // candidate path: d(r*h_prev) = Uh^T dah
        Vec dgated(hid, 0.0);
        matvec_transposed_add(Uh, dah, dgated);
        for (std::size_t i = 0; i < hid; ++i) {
            dar[i] = dgated[i] * h_prev[i] * r[i] * (1.0 - r[i]);
            dh_prev[i] += dgated[i] * r[i];
        }
        Vec gated(hid);
        for (std::size_t i = 0; i < hid; ++i) gated[i] = r[i] * h_prev[i];

        outer_accumulate(Wz, daz, cache.x[t]);
        outer_accumulate(Uz, daz, h_prev);
        add_to(bz.grad, daz);
        outer_accumulate(Wr, dar, cache.x[t]);
        outer_accumulate(Ur, dar, h_prev);
        add_to(br.grad, dar);
        outer_accumulate(Wh, dah, cache.x[t]);
        outer_accumulate(Uh, dah, gated);
        add_to(bh.grad, dah);

        matvec_transposed_add(Wz, daz, dinputs[t]);
        matvec_transposed_add(Wr, dar, dinputs[t]);
        matvec_transposed_add(Wh, dah, dinputs[t]);
        matvec_transposed_add(Uz, daz, dh_prev);
        matvec_transposed_add(Ur, dar, dh_prev);
        dh = std::move(dh_prev);
    }
    return dinputs;
}

void GruCell::collect_params(ParamRefs& out) {
    out.push_back(&Wz);
    out.push_back(&Uz);
    out.push_back(&bz);
    out.push_back(&Wr);
    out.push_back(&Ur);
    out.push_back(&br);
    out.push_back(&Wh);
    out.push_back(&Uh);
    out.push_back(&bh);
}

Vec gru_encode(const GruCell& cell, const std::vector<Vec>& sequence,
               GruCell::Cache* cache) {
    return cell.forward(sequence, cache);
}

// ------------------------------------------------------------ EmbeddingTable

EmbeddingTable EmbeddingTable::make(const std::string& name, int rows, int dim,
                                    util::Rng& rng) {
    if (rows < 1 || dim < 1) {
        throw ConfigError("embedding table dims must be positive");
    }
    EmbeddingTable t;
    t.table = ParamTensor::matrix(name, static_cast<std::size_t>(rows),
                                  static_cast<std::size_t>(dim));
    uniform_init(t.table, 0.05, rng);
    return t;
}

Vec EmbeddingTable::lookup(int index) const {
    if (index < 0 || index >= rows()) {
        throw std::out_of_range(table.name + ": embedding index " +
                                std::to_string(index) + " out of range");
    }
    const auto d = static_cast<std::size_t>(dim());
    const double* row = table.value.data() + static_cast<std::size_t>(index) * d;
    return Vec(row, row + d);
}

void EmbeddingTable::accumulate_grad(int index, const Vec& upstream) {
    if (index < 0 || index >= rows()) {
        throw std::out_of_range(table.name + ": embedding index " +
                                std::to_string(index) + " out of range");
    }
    const auto d = static_cast<std::size_t>(dim());
    double* row = table.grad.data() + static_cast<std::size_t>(index) * d;
    for (std::size_t i = 0; i < d; ++i) row[i] += upstream[i];
}

void EmbeddingTable::collect_params(ParamRefs& out) { out.push_back(&table); }

Vec embedding_lookup(const EmbeddingTable& table, int index) {
    return table.lookup(index);
}

// ---------------------------------------------------------------- grad check

GradCheckResult grad_check(const std::function<double()>& objective,
                           const ParamRefs& params, double step) {
    GradCheckResult result;
    for (ParamTensor* p : params) {
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + step;
            const double up = objective();
            p->value[i] = saved - step;
            const double down = objective();
            p->value[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError("non-finite objective during gradient check");
            }
            const double numeric = (up - down) / (2.0 * step);
            const double analytic = p->grad[i];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            const double rel = std::abs(numeric - analytic) / denom;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = p->name;
                result.worst_index = i;
            }
        }
    }
    return result;
}

}  // namespace panelmdp::nn
