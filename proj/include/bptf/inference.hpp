#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "defs.hpp"
#include "encoder.hpp"
#include "math.hpp"
#include "model_config.hpp"
#include "reweight.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace bptf {

/**
 * Per-mode latent factors z and their posterior Gamma parameters. Every
 * matrix is mode_size x K; the trainer keeps factor entries inside
 * [param_floor, factor_ceiling] through any number of sweeps.
 */
struct FactorState {
    std::vector<Matrix> factors;
    std::vector<Matrix> post_shape;
    std::vector<Matrix> post_rate;

    std::size_t n_modes() const { return factors.size(); }
};

struct TrainReport {
    std::vector<double> elbo_trace;
    bool converged = false;
    std::size_t iterations_run = 0;
    double wall_seconds = 0.0;
};

/** CP-decomposition Poisson rate at one index tuple: sum_k prod_m z_mk. */
inline double poisson_rate(const std::vector<Matrix>& factors, std::span<const std::size_t> idx) {
    if (factors.size() != idx.size())
        throw std::invalid_argument("poisson_rate: index arity does not match factor count");
    const std::size_t k = static_cast<std::size_t>(factors.front().cols());
    double lam = 0.0;
    for (std::size_t f = 0; f < k; ++f) {
        double prod = 1.0;
        for (std::size_t m = 0; m < factors.size(); ++m)
            prod *= factors[m](static_cast<Eigen::Index>(idx[m]), static_cast<Eigen::Index>(f));
        lam += prod;
    }
    return lam;
}

inline double poisson_rate(const FactorState& state, std::span<const std::size_t> idx) {
    return poisson_rate(state.factors, idx);
}

/** The two ELBO components; elbo = poisson_term - kl_term. */
struct ElboTerms {
    double poisson_term = 0.0;
    double kl_term = 0.0;
};

inline ElboTerms elbo_terms(const SparseCountTensor& train, const FactorState& state,
                            GammaParams prior) {
    ElboTerms t;
    std::vector<std::size_t> idx(train.n_modes());
    for (std::size_t p = 0; p < train.n_entries(); ++p) {
        for (std::size_t m = 0; m < train.n_modes(); ++m) idx[m] = train.index(p, m);
        const double lam = poisson_rate(state, idx);
        t.poisson_term += static_cast<double>(train.count(p)) * std::log(lam) - lam;
    }
    for (std::size_t m = 0; m < state.n_modes(); ++m) {
        const Matrix& a = state.post_shape[m];
        const Matrix& b = state.post_rate[m];
        for (Eigen::Index s = 0; s < a.rows(); ++s)
            for (Eigen::Index f = 0; f < a.cols(); ++f)
                t.kl_term += kl_gamma({a(s, f), b(s, f)}, prior);
    }
    return t;
}

/**
 * Evidence lower bound of the model on the training entries:
 *
 *   Q = sum_entries (y ln lambda - lambda) - sum_{mode,entity,k} KL(post || prior)
 *
 * The -ln(y!) constant is excluded (it does not depend on any parameter).
 */
inline double elbo(const SparseCountTensor& train, const FactorState& state, GammaParams prior) {
    const ElboTerms t = elbo_terms(train, state, prior);
    return t.poisson_term - t.kl_term;
}

inline double elbo(const SparseCountTensor& train, const FactorState& state,
                   const ModelConfig& cfg) {
    return elbo(train, state, cfg.prior());
}

/**
 * d(Poisson log-likelihood)/d z_sk: over the entity's observations,
 * sum of (y / lambda - 1) * (product of the other modes' k-th factors).
 * Empty observation sets give 0.
 */
inline double grad_ll_z(const SparseCountTensor& train, const ModeIndex& index,
                        const FactorState& state, std::size_t mode, std::size_t entity,
                        std::size_t factor) {
    double g = 0.0;
    std::vector<std::size_t> idx(train.n_modes());
    for (std::size_t p : index.positions(mode, entity)) {
        for (std::size_t m = 0; m < train.n_modes(); ++m) idx[m] = train.index(p, m);
        const double lam = poisson_rate(state, idx);
        double prod_other = 1.0;
        for (std::size_t m = 0; m < train.n_modes(); ++m)
            if (m != mode)
                prod_other *= state.factors[m](static_cast<Eigen::Index>(idx[m]),
                                               static_cast<Eigen::Index>(factor));
        g += (static_cast<double>(train.count(p)) / lam - 1.0) * prod_other;
    }
    return g;
}

namespace details {

/**
 * ELBO gradients w.r.t. one posterior (shape, rate) pair given the
 * log-likelihood gradient in z and the standard-Gamma noise eps = z * rate:
 *
 *   dQ/dalpha = dLL/dz * (deps/dalpha) / beta - dKL/dalpha
 *   dQ/dbeta  = dLL/dz * (-eps / beta^2)     - dKL/dbeta
 */
inline std::pair<double, double> elbo_param_grads(double dll_dz, double eps, GammaParams post,
                                                  GammaParams prior) {
    const double dz_dalpha = deps_dalpha(eps, post.shape) / post.rate;
    const double dz_dbeta = -eps / (post.rate * post.rate);
    const double da = dll_dz * dz_dalpha - kl_grad_alpha(post, prior);
    const double db = dll_dz * dz_dbeta - kl_grad_beta(post, prior);
    return {da, db};
}

} // namespace details

/**
 * Gradients of the ELBO with respect to the posterior parameters of one
 * (mode, entity, factor) triple, at fixed Gamma noise eps (pathwise /
 * implicit reparameterization). Reads the posterior parameters from the
 * state; requires z_sk = eps / beta_sk.
 */
inline std::pair<double, double> grad_elbo_params(const SparseCountTensor& train,
                                                  const ModeIndex& index, const FactorState& state,
                                                  const ModelConfig& cfg, std::size_t mode,
                                                  std::size_t entity, std::size_t factor,
                                                  double eps) {
    const double dll = grad_ll_z(train, index, state, mode, entity, factor);
    const GammaParams post{
        state.post_shape[mode](static_cast<Eigen::Index>(entity), static_cast<Eigen::Index>(factor)),
        state.post_rate[mode](static_cast<Eigen::Index>(entity), static_cast<Eigen::Index>(factor))};
    return details::elbo_param_grads(dll, eps, post, cfg.prior());
}

/**
 * Trainer implementing the three-phase per-mode inference loop:
 *
 *   1. Network_Parameters_Update: forward both encoders of every (entity, k)
 *      of the mode, push dQ/dalpha and dQ/dbeta back through them, add the
 *      L2 gradient, and apply one Adam ascent step per net.
 *   2. Latent_Factors_MCMC_Sampling: refresh (alpha, beta) from the updated
 *      encoders and resample every z ~ Gamma(alpha, beta).
 *   3. Input_Batches_Reconstruction: implicit -- batches are materialized
 *      on demand from the current factor state, so other modes see the new
 *      samples immediately.
 *
 * Modes are swept in ascending order every iteration. All randomness
 * derives from cfg.seed via labeled stream splitting; per-entity resampling
 * streams are keyed by (sweep, entity), which makes training deterministic
 * for a fixed seed regardless of thread count (gradient reduction is
 * chunk-ordered per thread count, so bit-identity is guaranteed for a fixed
 * thread count).
 */
class Trainer {
  public:
    Trainer(const SparseCountTensor& train, ModelConfig cfg)
        : train_(train), cfg_(std::move(cfg)), index_(train), prior_(cfg_.prior()),
          rw_(cfg_.theta, cfg_.eta, 1.0) {
        cfg_.validate();
        if (train_.n_entries() == 0)
            throw std::invalid_argument("fit: training tensor has no entries");
        if (train_.n_modes() < 2) throw std::invalid_argument("fit: need >= 2 modes");
        ybar_ = most_frequent_value(train_);
        rw_ = ReweightParams(cfg_.theta, cfg_.eta, static_cast<double>(ybar_));

        RngStream bank_rng(derive_seed(cfg_.seed, "init-bank"));
        bank_ = init_bank(cfg_, train_.n_modes(), bank_rng);
        adam_.reserve(bank_.size());
        for (std::size_t i = 0; i < bank_.size(); ++i)
            adam_.push_back(AdamState::zeros_like(bank_.net_at(i)));

        RngStream factor_rng(derive_seed(cfg_.seed, "init-factors"));
        const Eigen::Index kk = static_cast<Eigen::Index>(cfg_.k);
        state_.factors.resize(train_.n_modes());
        state_.post_shape.resize(train_.n_modes());
        state_.post_rate.resize(train_.n_modes());
        for (std::size_t m = 0; m < train_.n_modes(); ++m) {
            const Eigen::Index n = static_cast<Eigen::Index>(train_.mode_size(m));
            state_.factors[m].resize(n, kk);
            for (Eigen::Index s = 0; s < n; ++s)
                for (Eigen::Index f = 0; f < kk; ++f)
                    state_.factors[m](s, f) = clamp_factor(sample_gamma(prior_, factor_rng));
            state_.post_shape[m] = Matrix::Constant(n, kk, prior_.shape);
            state_.post_rate[m] = Matrix::Constant(n, kk, prior_.rate);
        }
        resample_root_ = derive_seed(cfg_.seed, "resample");
    }

    /** One full three-phase sweep over one mode. */
    void mode_sweep(std::size_t mode) {
        update_networks(mode);
        resample_factors(mode);
        ++sweep_count_; // batches rebuild lazily from the updated state
    }

    /** Run the full fit loop with the convergence test. */
    TrainReport run() {
        const auto t0 = std::chrono::steady_clock::now();
        TrainReport report;
        for (std::size_t iter = 0; iter < cfg_.max_iters; ++iter) {
            for (std::size_t m = 0; m < train_.n_modes(); ++m) mode_sweep(m);
            const double q = elbo(train_, state_, prior_);
            if (!std::isfinite(q))
                throw numeric_error("ELBO became non-finite at iteration " +
                                    std::to_string(iter + 1));
            report.elbo_trace.push_back(q);
            if (report.elbo_trace.size() >= cfg_.conv_window && converged(report.elbo_trace)) {
                report.converged = true;
                break;
            }
        }
        report.iterations_run = report.elbo_trace.size();
        report.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return report;
    }

    /**
     * Continue sweeping for n more iterations, averaging the posterior
     * means alpha/beta after each; the averaged matrices are the
     * prediction-time factors.
     */
    std::vector<Matrix> collect_mean_factors(std::size_t n) {
        if (n == 0) throw std::invalid_argument("collect_mean_factors: need n >= 1");
        std::vector<Matrix> acc(train_.n_modes());
        for (std::size_t m = 0; m < train_.n_modes(); ++m)
            acc[m] = Matrix::Zero(state_.factors[m].rows(), state_.factors[m].cols());
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t m = 0; m < train_.n_modes(); ++m) mode_sweep(m);
            for (std::size_t m = 0; m < train_.n_modes(); ++m)
                acc[m] += (state_.post_shape[m].array() / state_.post_rate[m].array()).matrix();
        }
        for (std::size_t m = 0; m < train_.n_modes(); ++m) {
            acc[m] /= static_cast<double>(n);
            acc[m] = acc[m].unaryExpr([](double x) { return clamp_factor(x); });
        }
        return acc;
    }

    const FactorState& state() const { return state_; }
    const EncoderBank& bank() const { return bank_; }
    const ModelConfig& config() const { return cfg_; }
    std::int64_t ybar() const { return ybar_; }

  private:
    bool converged(const std::vector<double>& trace) const {
        const std::size_t w = cfg_.conv_window;
        double mean = 0.0;
        for (std::size_t i = trace.size() - w; i < trace.size(); ++i) mean += trace[i];
        mean /= static_cast<double>(w);
        double var = 0.0;
        for (std::size_t i = trace.size() - w; i < trace.size(); ++i)
            var += (trace[i] - mean) * (trace[i] - mean);
        var /= static_cast<double>(w);
        return std::sqrt(var) / (std::fabs(mean) + 1.0) < cfg_.conv_tol;
    }

    /** Rows: [other-mode k-th factors in ascending mode order..., count]. */
    void build_batch(std::size_t mode, const std::vector<std::size_t>& positions,
                     std::size_t factor, Matrix& batch, Vector& delta) const {
        const std::size_t m_all = train_.n_modes();
        batch.resize(static_cast<Eigen::Index>(positions.size()),
                     static_cast<Eigen::Index>(m_all));
        delta.resize(static_cast<Eigen::Index>(positions.size()));
        for (std::size_t r = 0; r < positions.size(); ++r) {
            const std::size_t p = positions[r];
            Eigen::Index col = 0;
            for (std::size_t m2 = 0; m2 < m_all; ++m2) {
                if (m2 == mode) continue;
                batch(static_cast<Eigen::Index>(r), col++) =
                    state_.factors[m2](static_cast<Eigen::Index>(train_.index(p, m2)),
                                       static_cast<Eigen::Index>(factor));
            }
            const std::int64_t y = train_.count(p);
            batch(static_cast<Eigen::Index>(r), col) = static_cast<double>(y);
            delta(static_cast<Eigen::Index>(r)) = cfg_.reweight ? reweight_delta(y, rw_) : 1.0;
        }
    }

    /** lambda per entry under the current factors (z fixed during phase 1). */
    void refresh_rates(std::vector<double>& lambda) const {
        const std::size_t n = train_.n_entries();
        lambda.assign(n, 0.0);
        run_chunked(n, [&](std::size_t lo, std::size_t hi) {
            std::vector<std::size_t> idx(train_.n_modes());
            for (std::size_t p = lo; p < hi; ++p) {
                for (std::size_t m = 0; m < train_.n_modes(); ++m) idx[m] = train_.index(p, m);
                lambda[p] = poisson_rate(state_, idx);
            }
        });
    }

    void update_networks(std::size_t mode) {
        std::vector<double> lambda;
        refresh_rates(lambda);
        const std::size_t n_entities = train_.mode_size(mode);
        const std::size_t n_chunks = chunk_count(n_entities);

        for (std::size_t f = 0; f < cfg_.k; ++f) {
            EncoderNet& shape_net = bank_.net(mode, f, ParamKind::shape);
            EncoderNet& rate_net = bank_.net(mode, f, ParamKind::rate);
            std::vector<EncoderGrad> shape_grads(n_chunks);
            std::vector<EncoderGrad> rate_grads(n_chunks);
            for (std::size_t c = 0; c < n_chunks; ++c) {
                shape_grads[c] = EncoderGrad::zeros_like(shape_net);
                rate_grads[c] = EncoderGrad::zeros_like(rate_net);
            }

            run_chunks(n_entities, n_chunks, [&](std::size_t chunk, std::size_t lo,
                                                 std::size_t hi) {
                Matrix batch;
                Vector delta;
                ForwardCache shape_cache, rate_cache;
                for (std::size_t s = lo; s < hi; ++s) {
                    const std::vector<std::size_t>& pos = index_.positions(mode, s);
                    if (pos.empty()) continue; // cold entity: prior fallback, nothing to learn
                    build_batch(mode, pos, f, batch, delta);
                    const double a_raw = forward_entity(shape_net, batch, delta, shape_cache);
                    const double b_raw = forward_entity(rate_net, batch, delta, rate_cache);
                    const double a = clamp_floor(a_raw);
                    const double b = clamp_floor(b_raw);

                    double dll = 0.0;
                    for (std::size_t p : pos) {
                        double prod_other = 1.0;
                        for (std::size_t m2 = 0; m2 < train_.n_modes(); ++m2)
                            if (m2 != mode)
                                prod_other *= state_.factors[m2](
                                    static_cast<Eigen::Index>(train_.index(p, m2)),
                                    static_cast<Eigen::Index>(f));
                        dll += (static_cast<double>(train_.count(p)) / lambda[p] - 1.0) *
                               prod_other;
                    }

                    // Noise consistent with the current z at the current weights.
                    const double eps = state_.factors[mode](static_cast<Eigen::Index>(s),
                                                            static_cast<Eigen::Index>(f)) *
                                       b;
                    const auto [ga, gb] = details::elbo_param_grads(dll, eps, {a, b}, prior_);
                    // Gradients pass straight through the clamp: a hard zero
                    // would make saturation below the floor absorbing (the
                    // net could never feel the pull back into the feasible
                    // band), so the ELBO gradient at the clamped value is
                    // pushed through the raw output instead.
                    backward_entity(shape_net, shape_cache, ga, shape_grads[chunk]);
                    backward_entity(rate_net, rate_cache, gb, rate_grads[chunk]);
                }
            });

            for (std::size_t c = 1; c < n_chunks; ++c) {
                shape_grads[0].add(shape_grads[c]);
                rate_grads[0].add(rate_grads[c]);
            }
            apply_l2(shape_net, shape_grads[0]);
            apply_l2(rate_net, rate_grads[0]);
            // An overflowed gradient sum would write NaN into the weights and
            // poison every later sweep; skipping the step keeps the net usable.
            if (shape_grads[0].all_finite())
                adam_step(shape_net, shape_grads[0],
                          adam_[bank_.flat_index(mode, f, ParamKind::shape)], cfg_);
            if (rate_grads[0].all_finite())
                adam_step(rate_net, rate_grads[0],
                          adam_[bank_.flat_index(mode, f, ParamKind::rate)], cfg_);
        }
    }

    /** Gradient of Q - H(W; 1/sigma^2): subtract parameter / sigma^2. */
    void apply_l2(const EncoderNet& net, EncoderGrad& g) const {
        const double inv = 1.0 / cfg_.sigma_sq;
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            g.W[l] -= inv * net.layers[l].W;
            g.b[l] -= inv * net.layers[l].b;
        }
        g.out_w -= inv * net.out_w;
        g.out_b -= inv * net.out_b;
    }

    void resample_factors(std::size_t mode) {
        const std::size_t n_entities = train_.mode_size(mode);
        run_chunked(n_entities, [&](std::size_t lo, std::size_t hi) {
            Matrix batch;
            Vector delta;
            ForwardCache cache;
            for (std::size_t s = lo; s < hi; ++s) {
                const std::vector<std::size_t>& pos = index_.positions(mode, s);
                const Eigen::Index si = static_cast<Eigen::Index>(s);
                if (pos.empty()) {
                    for (std::size_t f = 0; f < cfg_.k; ++f) {
                        state_.post_shape[mode](si, static_cast<Eigen::Index>(f)) = prior_.shape;
                        state_.post_rate[mode](si, static_cast<Eigen::Index>(f)) = prior_.rate;
                        state_.factors[mode](si, static_cast<Eigen::Index>(f)) =
                            clamp_floor(prior_.shape / prior_.rate);
                    }
                    continue;
                }
                RngStream rs(derive_seed(derive_seed(resample_root_, sweep_count_), s));
                for (std::size_t f = 0; f < cfg_.k; ++f) {
                    build_batch(mode, pos, f, batch, delta);
                    const double a = clamp_floor(
                        forward_entity(bank_.net(mode, f, ParamKind::shape), batch, delta, cache));
                    const double b = clamp_floor(
                        forward_entity(bank_.net(mode, f, ParamKind::rate), batch, delta, cache));
                    const Eigen::Index fi = static_cast<Eigen::Index>(f);
                    state_.post_shape[mode](si, fi) = a;
                    state_.post_rate[mode](si, fi) = b;
                    state_.factors[mode](si, fi) = clamp_factor(sample_gamma(a, b, rs));
                }
            }
        });
    }

    std::size_t chunk_count(std::size_t n_items) const {
        const std::size_t t = std::max<std::size_t>(cfg_.threads, 1);
        return std::max<std::size_t>(1, std::min(t, n_items));
    }

    /** Run fn(chunk, lo, hi) over n_chunks contiguous ranges of [0, n). */
    template <typename Fn>
    void run_chunks(std::size_t n, std::size_t n_chunks, Fn&& fn) const {
        if (n_chunks <= 1) {
            fn(0, 0, n);
            return;
        }
        std::vector<std::thread> workers;
        workers.reserve(n_chunks);
        const std::size_t base = n / n_chunks, extra = n % n_chunks;
        std::size_t lo = 0;
        for (std::size_t c = 0; c < n_chunks; ++c) {
            const std::size_t hi = lo + base + (c < extra ? 1 : 0);
            workers.emplace_back([&fn, c, lo, hi] { fn(c, lo, hi); });
            lo = hi;
        }
        for (std::thread& w : workers) w.join();
    }

    template <typename Fn>
    void run_chunked(std::size_t n, Fn&& fn) const {
        run_chunks(n, chunk_count(n), [&fn](std::size_t, std::size_t lo, std::size_t hi) {
            fn(lo, hi);
        });
    }

    const SparseCountTensor& train_;
    ModelConfig cfg_;
    ModeIndex index_;
    GammaParams prior_;
    ReweightParams rw_;
    std::int64_t ybar_ = 1;
    EncoderBank bank_;
    FactorState state_;
    std::vector<AdamState> adam_;
    std::uint64_t resample_root_ = 0;
    std::uint64_t sweep_count_ = 0;
};

struct FitResult {
    FactorState state;
    EncoderBank bank;
    TrainReport report;
    std::vector<Matrix> mean_factors;
    std::int64_t ybar = 1;
};

/**
 * Fit VAE-BPTF on a training tensor: run the sweep loop to convergence (or
 * max_iters), then average posterior means over cfg.mean_sweeps further
 * sweeps for prediction.
 */
inline FitResult fit(const SparseCountTensor& train, const ModelConfig& cfg) {
    Trainer trainer(train, cfg);
    TrainReport report = trainer.run();
    std::vector<Matrix> means = trainer.collect_mean_factors(cfg.mean_sweeps);
    return FitResult{trainer.state(), trainer.bank(), std::move(report), std::move(means),
                     trainer.ybar()};
}

/** Prediction: the Poisson mean at an index tuple under the mean factors. */
inline double predict(const std::vector<Matrix>& mean_factors,
                      std::span<const std::size_t> idx) {
    for (std::size_t m = 0; m < mean_factors.size(); ++m)
        if (idx[m] >= static_cast<std::size_t>(mean_factors[m].rows()))
            throw std::invalid_argument("predict: index out of range");
    return poisson_rate(mean_factors, idx);
}

} // namespace bptf
