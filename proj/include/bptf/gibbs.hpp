#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "defs.hpp"
#include "inference.hpp"
#include "math.hpp"
#include "model_config.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace bptf {

/**
 * Split an observed count into K auxiliary latent counts, multinomially
 * with probabilities proportional to the per-factor rates. The draw is one
 * categorical sample per unit of count, so the result sums to y exactly.
 */
inline std::vector<std::int64_t> allocate_counts(std::int64_t y, const Vector& rates,
                                                 RngStream& rng) {
    if (rates.size() == 0) throw std::invalid_argument("allocate_counts: no factors");
    if (y < 0) throw std::invalid_argument("allocate_counts: negative count");
    double total = 0.0;
    for (Eigen::Index f = 0; f < rates.size(); ++f) {
        if (!(rates(f) >= 0.0))
            throw std::invalid_argument("allocate_counts: negative or non-finite rate");
        total += rates(f);
    }
    if (total <= 0.0) throw std::invalid_argument("allocate_counts: all-zero rates");

    std::vector<std::int64_t> c(static_cast<std::size_t>(rates.size()), 0);
    for (std::int64_t unit = 0; unit < y; ++unit) {
        const double u = rng.uniform01() * total;
        double cum = 0.0;
        Eigen::Index pick = rates.size() - 1; // numerical slack lands on the last factor
        for (Eigen::Index f = 0; f < rates.size(); ++f) {
            cum += rates(f);
            if (u < cum) {
                pick = f;
                break;
            }
        }
        ++c[static_cast<std::size_t>(pick)];
    }
    return c;
}

/**
 * Conjugate Gibbs update of one mode: for every entity s and factor k,
 *
 *   shape_sk = prior.shape + sum over the entity's entries of c_k
 *   rate_sk  = prior.rate  + sum over the entity's entries of
 *              prod_{m != mode} z_mk
 *
 * and z_sk is redrawn from Gamma(shape_sk, rate_sk). Entities with no
 * entries fall back to the prior. `alloc` holds the per-entry latent count
 * vectors, one row per tensor entry.
 */
inline void gibbs_update_mode(const SparseCountTensor& train, const ModeIndex& index,
                              const Matrix& alloc, FactorState& state, GammaParams prior,
                              std::size_t mode, RngStream& rng) {
    const Eigen::Index k = state.factors[mode].cols();
    if (alloc.rows() != static_cast<Eigen::Index>(train.n_entries()) || alloc.cols() != k)
        throw std::invalid_argument("gibbs_update_mode: allocation shape mismatch");
    for (std::size_t s = 0; s < train.mode_size(mode); ++s) {
        const Eigen::Index si = static_cast<Eigen::Index>(s);
        for (Eigen::Index f = 0; f < k; ++f) {
            double shape = prior.shape;
            double rate = prior.rate;
            for (std::size_t p : index.positions(mode, s)) {
                shape += alloc(static_cast<Eigen::Index>(p), f);
                double prod_other = 1.0;
                for (std::size_t m2 = 0; m2 < train.n_modes(); ++m2)
                    if (m2 != mode)
                        prod_other *=
                            state.factors[m2](static_cast<Eigen::Index>(train.index(p, m2)), f);
                rate += prod_other;
            }
            state.post_shape[mode](si, f) = shape;
            state.post_rate[mode](si, f) = rate;
            state.factors[mode](si, f) = clamp_floor(sample_gamma(shape, rate, rng));
        }
    }
}

/** Complete-data joint log-probability: Poisson log-mass + Gamma log-priors. */
inline double joint_log_prob(const SparseCountTensor& train, const FactorState& state,
                             GammaParams prior) {
    double lp = 0.0;
    std::vector<std::size_t> idx(train.n_modes());
    for (std::size_t p = 0; p < train.n_entries(); ++p) {
        for (std::size_t m = 0; m < train.n_modes(); ++m) idx[m] = train.index(p, m);
        lp += poisson_log_pmf(train.count(p), poisson_rate(state, idx));
    }
    for (const Matrix& z : state.factors)
        for (Eigen::Index s = 0; s < z.rows(); ++s)
            for (Eigen::Index f = 0; f < z.cols(); ++f) lp += gamma_logpdf(z(s, f), prior);
    return lp;
}

struct GibbsResult {
    FactorState state;               // final sample and its conditional parameters
    std::vector<Matrix> mean_factors; // post-burn-in averages, the prediction factors
    std::vector<double> logprob_trace;
    std::size_t samples_retained = 0;
};

/**
 * Run one Gibbs chain: per sweep, reallocate every entry's latent counts,
 * update each mode in ascending order, and record the joint log-probability.
 * Post-burn-in factor samples are averaged into the prediction factors.
 * Uses cfg.k, the prior, max_iters, gibbs_burn_in (0 = half of max_iters)
 * and seed; the chain itself is inherently sequential.
 */
inline GibbsResult gibbs_fit(const SparseCountTensor& train, const ModelConfig& cfg) {
    cfg.validate();
    if (train.n_entries() == 0)
        throw std::invalid_argument("gibbs_fit: training tensor has no entries");
    if (train.n_modes() < 2) throw std::invalid_argument("gibbs_fit: need >= 2 modes");
    const std::size_t iters = cfg.max_iters;
    const std::size_t burn = cfg.gibbs_burn_in == 0 ? iters / 2 : cfg.gibbs_burn_in;
    if (burn >= iters)
        throw std::invalid_argument("gibbs_fit: no samples retained (burn-in " +
                                    std::to_string(burn) + " >= iterations " +
                                    std::to_string(iters) + ")");

    const GammaParams prior = cfg.prior();
    const ModeIndex index(train);
    const Eigen::Index k = static_cast<Eigen::Index>(cfg.k);
    RngStream rng(derive_seed(cfg.seed, "gibbs"));

    GibbsResult res;
    res.state.factors.resize(train.n_modes());
    res.state.post_shape.resize(train.n_modes());
    res.state.post_rate.resize(train.n_modes());
    for (std::size_t m = 0; m < train.n_modes(); ++m) {
        const Eigen::Index n = static_cast<Eigen::Index>(train.mode_size(m));
        res.state.factors[m].resize(n, k);
        for (Eigen::Index s = 0; s < n; ++s)
            for (Eigen::Index f = 0; f < k; ++f)
                res.state.factors[m](s, f) = clamp_floor(sample_gamma(prior, rng));
        res.state.post_shape[m] = Matrix::Constant(n, k, prior.shape);
        res.state.post_rate[m] = Matrix::Constant(n, k, prior.rate);
        res.mean_factors.push_back(Matrix::Zero(n, k));
    }

    Matrix alloc(static_cast<Eigen::Index>(train.n_entries()), k);
    Vector per_factor(k);
    for (std::size_t iter = 0; iter < iters; ++iter) {
        for (std::size_t p = 0; p < train.n_entries(); ++p) {
            for (Eigen::Index f = 0; f < k; ++f) {
                double prod = 1.0;
                for (std::size_t m = 0; m < train.n_modes(); ++m)
                    prod *= res.state.factors[m](static_cast<Eigen::Index>(train.index(p, m)), f);
                per_factor(f) = prod;
            }
            const std::vector<std::int64_t> c = allocate_counts(train.count(p), per_factor, rng);
            for (Eigen::Index f = 0; f < k; ++f)
                alloc(static_cast<Eigen::Index>(p), f) =
                    static_cast<double>(c[static_cast<std::size_t>(f)]);
        }
        for (std::size_t m = 0; m < train.n_modes(); ++m)
            gibbs_update_mode(train, index, alloc, res.state, prior, m, rng);

        res.logprob_trace.push_back(joint_log_prob(train, res.state, prior));
        if (iter >= burn) {
            for (std::size_t m = 0; m < train.n_modes(); ++m)
                res.mean_factors[m] += res.state.factors[m];
            ++res.samples_retained;
        }
    }
    for (Matrix& mf : res.mean_factors) {
        mf /= static_cast<double>(res.samples_retained);
        mf = mf.unaryExpr([](double x) { return clamp_floor(x); });
    }
    return res;
}

} // namespace bptf
