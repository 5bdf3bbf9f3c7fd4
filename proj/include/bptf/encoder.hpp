#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "defs.hpp"
#include "math.hpp"
#include "model_config.hpp"
#include "rng.hpp"

namespace bptf {

/** Which posterior Gamma parameter a net estimates. */
enum class ParamKind { shape = 0, rate = 1 };

struct EncoderLayer {
    Matrix W; // in x out
    Vector b; // out
};

/**
 * One MLP encoder. Given a batch of input rows (the k-th factors of the
 * other modes followed by the count, one row per observation of the entity),
 * it computes a single posterior scalar: the weighted sum over rows of the
 * output-activated affine readout of the recursively activated hidden
 * stack,
 *
 *   param = sum_r delta_r * h(w . f_L(x_r) + b).
 */
struct EncoderNet {
    std::vector<EncoderLayer> layers; // L hidden layers
    Vector out_w;                     // d_L (or input width when L = 0)
    double out_b = 0.0;
    Activation hidden_activation = Activation::softplus;
    Activation output_activation = Activation::softplus;

    std::size_t input_dim() const {
        return layers.empty() ? static_cast<std::size_t>(out_w.size())
                              : static_cast<std::size_t>(layers.front().W.rows());
    }
};

/**
 * Intermediate values of one forward pass, retained so the backward pass is
 * the exact analytic adjoint of the computation that produced `value`.
 * act[0] is the input batch; act[l+1] = activation(pre[l]).
 */
struct ForwardCache {
    std::vector<Matrix> act;
    std::vector<Matrix> pre;
    Vector out_pre; // per-row pre-image of the output activation
    Vector delta;   // per-row weights
    double value = 0.0;
};

/** Gradient accumulator mirroring EncoderNet's parameters. */
struct EncoderGrad {
    std::vector<Matrix> W;
    std::vector<Vector> b;
    Vector out_w;
    double out_b = 0.0;

    static EncoderGrad zeros_like(const EncoderNet& net) {
        EncoderGrad g;
        g.W.reserve(net.layers.size());
        g.b.reserve(net.layers.size());
        for (const EncoderLayer& l : net.layers) {
            g.W.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
            g.b.push_back(Vector::Zero(l.b.size()));
        }
        g.out_w = Vector::Zero(net.out_w.size());
        g.out_b = 0.0;
        return g;
    }

    void set_zero() {
        for (Matrix& m : W) m.setZero();
        for (Vector& v : b) v.setZero();
        out_w.setZero();
        out_b = 0.0;
    }

    void add(const EncoderGrad& o) {
        for (std::size_t l = 0; l < W.size(); ++l) {
            W[l] += o.W[l];
            b[l] += o.b[l];
        }
        out_w += o.out_w;
        out_b += o.out_b;
    }

    bool all_finite() const {
        for (const Matrix& m : W)
            if (!m.allFinite()) return false;
        for (const Vector& v : b)
            if (!v.allFinite()) return false;
        return out_w.allFinite() && std::isfinite(out_b);
    }
};

/**
 * Forward pass over one entity's batch. `delta` carries the per-row
 * reweighting values (all ones when reweighting is disabled). Returns the
 * raw aggregated parameter; the caller clamps before using it as a Gamma
 * parameter.
 */
inline double forward_entity(const EncoderNet& net, const Matrix& batch, const Vector& delta,
                             ForwardCache& cache) {
    if (batch.rows() == 0) throw std::invalid_argument("forward_entity: empty batch (cold entity)");
    if (static_cast<std::size_t>(batch.cols()) != net.input_dim())
        throw std::invalid_argument("forward_entity: batch width does not match net input width");
    if (delta.size() != batch.rows())
        throw std::invalid_argument("forward_entity: delta length does not match batch rows");

    const std::size_t L = net.layers.size();
    cache.act.resize(L + 1);
    cache.pre.resize(L);
    cache.act[0] = batch;
    for (std::size_t l = 0; l < L; ++l) {
        cache.pre[l] = cache.act[l] * net.layers[l].W;
        cache.pre[l].rowwise() += net.layers[l].b.transpose();
        const Activation q = net.hidden_activation;
        cache.act[l + 1] = cache.pre[l].unaryExpr([q](double x) { return activate(q, x); });
    }
    cache.out_pre = cache.act[L] * net.out_w;
    cache.out_pre.array() += net.out_b;
    cache.delta = delta;

    const Activation h = net.output_activation;
    double value = 0.0;
    for (Eigen::Index r = 0; r < cache.out_pre.size(); ++r)
        value += delta(r) * activate(h, cache.out_pre(r));
    cache.value = value;
    return value;
}

/**
 * Accumulate upstream * d(value)/d(parameter) for every net parameter into
 * `grad`. Manual backpropagation through the cached forward pass; the L2
 * penalty gradient is the trainer's responsibility.
 */
inline void backward_entity(const EncoderNet& net, const ForwardCache& cache, double upstream,
                            EncoderGrad& grad) {
    const std::size_t L = net.layers.size();
    if (cache.act.size() != L + 1 || cache.pre.size() != L ||
        grad.W.size() != L || cache.out_pre.size() != cache.delta.size())
        throw std::invalid_argument("backward_entity: cache/net/grad mismatch");

    const Activation h = net.output_activation;
    Vector g_out(cache.out_pre.size());
    for (Eigen::Index r = 0; r < g_out.size(); ++r)
        g_out(r) = upstream * cache.delta(r) * activate_grad(h, cache.out_pre(r));

    grad.out_w.noalias() += cache.act[L].transpose() * g_out;
    grad.out_b += g_out.sum();
    if (L == 0) return;

    const Activation q = net.hidden_activation;
    Matrix G = g_out * net.out_w.transpose(); // rows x d_L
    for (std::size_t l = L; l-- > 0;) {
        G.array() *= cache.pre[l].unaryExpr([q](double x) { return activate_grad(q, x); }).array();
        grad.W[l].noalias() += cache.act[l].transpose() * G;
        grad.b[l].noalias() += G.colwise().sum().transpose();
        if (l > 0) G = G * net.layers[l].W.transpose();
    }
}

/**
 * The 2 * M * K encoders of a model, addressed by (mode, factor, kind).
 * Parameters are read-only during a sweep's forward/backward phase; updates
 * happen in an exclusive phase.
 */
class EncoderBank {
  public:
    EncoderBank() = default;
    EncoderBank(std::size_t n_modes, std::size_t k) : n_modes_(n_modes), k_(k) {
        nets_.resize(n_modes * k * 2);
    }

    std::size_t n_modes() const { return n_modes_; }
    std::size_t k() const { return k_; }
    std::size_t size() const { return nets_.size(); }

    std::size_t flat_index(std::size_t mode, std::size_t factor, ParamKind kind) const {
        return (mode * k_ + factor) * 2 + static_cast<std::size_t>(kind);
    }

    EncoderNet& net(std::size_t mode, std::size_t factor, ParamKind kind) {
        return nets_[flat_index(mode, factor, kind)];
    }
    const EncoderNet& net(std::size_t mode, std::size_t factor, ParamKind kind) const {
        return nets_[flat_index(mode, factor, kind)];
    }
    EncoderNet& net_at(std::size_t flat) { return nets_[flat]; }
    const EncoderNet& net_at(std::size_t flat) const { return nets_[flat]; }

  private:
    std::size_t n_modes_ = 0;
    std::size_t k_ = 0;
    std::vector<EncoderNet> nets_;
};

/**
 * Initialize one bank: hidden-layer weights and biases from N(0, 1);
 * output-layer weights and bias from N(0, sigma^2) for shape nets and from
 * N(0.1, sigma^2) for rate nets. Draw order is fixed (mode, factor, kind,
 * layer, row-major elements) so a seed pins every parameter.
 */
inline EncoderBank init_bank(const ModelConfig& cfg, std::size_t n_modes, RngStream& rng) {
    cfg.validate();
    if (n_modes < 2) throw std::invalid_argument("init_bank: need >= 2 modes");
    EncoderBank bank(n_modes, cfg.k);
    const std::size_t input_dim = n_modes; // one factor per other mode + the count
    const double out_sd = std::sqrt(cfg.sigma_sq);
    for (std::size_t m = 0; m < n_modes; ++m) {
        for (std::size_t f = 0; f < cfg.k; ++f) {
            for (ParamKind kind : {ParamKind::shape, ParamKind::rate}) {
                EncoderNet& net = bank.net(m, f, kind);
                net.hidden_activation = cfg.hidden_activation;
                net.output_activation = cfg.output_activation;
                std::size_t in = input_dim;
                net.layers.resize(cfg.n_layers());
                for (std::size_t l = 0; l < cfg.n_layers(); ++l) {
                    const std::size_t out = cfg.layer_widths[l];
                    EncoderLayer& layer = net.layers[l];
                    layer.W.resize(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
                    for (Eigen::Index r = 0; r < layer.W.rows(); ++r)
                        for (Eigen::Index c = 0; c < layer.W.cols(); ++c)
                            layer.W(r, c) = rng.normal();
                    layer.b.resize(static_cast<Eigen::Index>(out));
                    for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b(i) = rng.normal();
                    in = out;
                }
                const double mean = kind == ParamKind::rate ? 0.1 : 0.0;
                net.out_w.resize(static_cast<Eigen::Index>(in));
                for (Eigen::Index i = 0; i < net.out_w.size(); ++i)
                    net.out_w(i) = rng.normal(mean, out_sd);
                net.out_b = rng.normal(mean, out_sd);
            }
        }
    }
    return bank;
}

/**
 * Adam accumulator for one net. Steps maximize the objective (gradient
 * ascent); one step per net per mode sweep.
 */
struct AdamState {
    EncoderGrad m;
    EncoderGrad v;
    std::int64_t t = 0;

    static AdamState zeros_like(const EncoderNet& net) {
        AdamState s;
        s.m = EncoderGrad::zeros_like(net);
        s.v = EncoderGrad::zeros_like(net);
        return s;
    }
};

namespace details {

inline void adam_update_array(Eigen::Ref<Matrix> param, Eigen::Ref<Matrix> m, Eigen::Ref<Matrix> v,
                              const Eigen::Ref<const Matrix>& g, double lr, double b1, double b2,
                              double eps, double bc1, double bc2) {
    m = b1 * m + (1.0 - b1) * g;
    v = (b2 * v.array() + (1.0 - b2) * g.array().square()).matrix();
    param.array() += lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

} // namespace details

inline void adam_step(EncoderNet& net, const EncoderGrad& grad, AdamState& state,
                      const ModelConfig& cfg) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.t));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        details::adam_update_array(net.layers[l].W, state.m.W[l], state.v.W[l], grad.W[l],
                                   cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, bc1,
                                   bc2);
        details::adam_update_array(net.layers[l].b, state.m.b[l], state.v.b[l], grad.b[l],
                                   cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, bc1,
                                   bc2);
    }
    details::adam_update_array(net.out_w, state.m.out_w, state.v.out_w, grad.out_w, cfg.adam_lr,
                               cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, bc1, bc2);
    state.m.out_b = cfg.adam_beta1 * state.m.out_b + (1.0 - cfg.adam_beta1) * grad.out_b;
    state.v.out_b = cfg.adam_beta2 * state.v.out_b + (1.0 - cfg.adam_beta2) * grad.out_b * grad.out_b;
    net.out_b += cfg.adam_lr * (state.m.out_b / bc1) / (std::sqrt(state.v.out_b / bc2) + cfg.adam_eps);
}

} // namespace bptf
