#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "defs.hpp"
#include "inference.hpp"
#include "math.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace bptf {

/** Full generative trace of a synthetic tensor, kept for recovery scoring. */
struct SyntheticTruth {
    std::vector<std::size_t> mode_sizes;
    std::size_t k_true = 0;
    std::vector<GammaParams> mode_hyper; // per-mode (shape_m, rate_m)
    std::vector<Matrix> factors;         // per-mode true z, mode_size x k_true
    SparseCountTensor tensor;
};

namespace details {

/** Poisson draw per cell in row-major order (last mode fastest), keep y >= 1. */
inline SparseCountTensor draw_counts(const std::vector<std::size_t>& mode_sizes,
                                     const std::vector<Matrix>& factors, RngStream& rng) {
    const std::size_t m = mode_sizes.size();
    std::vector<std::size_t> idx(m, 0);
    std::vector<std::size_t> coords;
    std::vector<std::int64_t> counts;
    for (;;) {
        const double lam = poisson_rate(factors, idx);
        const std::int64_t y = sample_poisson(lam, rng);
        if (y >= 1) {
            coords.insert(coords.end(), idx.begin(), idx.end());
            counts.push_back(y);
        }
        std::size_t d = m;
        while (d-- > 0) {
            if (++idx[d] < mode_sizes[d]) break;
            idx[d] = 0;
            if (d == 0) return SparseCountTensor(mode_sizes, std::move(coords), std::move(counts));
        }
    }
}

} // namespace details

/**
 * Synthetic tensor generation: per mode, draw a hyper pair
 * (a_m, s_m) ~ Gamma(shape = hyper_shape, scale = hyper_scale), then each
 * latent factor z_sk ~ Gamma(shape = a_m, scale = s_m), then every cell's
 * count y ~ Poisson(lambda) with lambda from the CP rate, keeping the cells
 * whose draw is >= 1. Both draws are scale-parameterized: that is what makes
 * typical factors small enough for sparse output (roughly 10% density at
 * k_true = 10 with hyper 2, 0.25). mode_hyper records the equivalent
 * (shape, rate) pair, so z_sk ~ Gamma(mode_hyper[m]) under the rate
 * convention used everywhere else.
 */
inline SyntheticTruth generate(const std::vector<std::size_t>& mode_sizes, std::size_t k_true,
                               double hyper_shape, double hyper_scale, std::uint64_t seed) {
    if (k_true == 0) throw std::invalid_argument("generate: factor count must be >= 1");
    if (mode_sizes.size() < 2) throw std::invalid_argument("generate: need >= 2 modes");
    for (std::size_t n : mode_sizes)
        if (n == 0) throw std::invalid_argument("generate: mode sizes must be positive");
    if (!(hyper_shape > 0.0) || !(hyper_scale > 0.0))
        throw std::invalid_argument("generate: hyper-prior parameters must be > 0");

    SyntheticTruth truth{mode_sizes, k_true, {}, {}, SparseCountTensor(mode_sizes)};
    RngStream hyper_rng(derive_seed(seed, "synthetic-hyper"));
    RngStream factor_rng(derive_seed(seed, "synthetic-factors"));
    RngStream count_rng(derive_seed(seed, "synthetic-counts"));

    const double hyper_rate = 1.0 / hyper_scale;
    for (std::size_t m = 0; m < mode_sizes.size(); ++m) {
        const double a_m = clamp_floor(sample_gamma(hyper_shape, hyper_rate, hyper_rng));
        const double s_m = clamp_floor(sample_gamma(hyper_shape, hyper_rate, hyper_rng));
        const GammaParams g{a_m, 1.0 / s_m};
        truth.mode_hyper.push_back(g);
        Matrix z(static_cast<Eigen::Index>(mode_sizes[m]), static_cast<Eigen::Index>(k_true));
        for (Eigen::Index s = 0; s < z.rows(); ++s)
            for (Eigen::Index f = 0; f < z.cols(); ++f)
                z(s, f) = clamp_floor(sample_gamma(g, factor_rng));
        truth.factors.push_back(std::move(z));
    }
    truth.tensor = details::draw_counts(mode_sizes, truth.factors, count_rng);
    return truth;
}

/** Fresh Poisson draws from an existing truth's factors (replication runs). */
inline SparseCountTensor regenerate_counts(const SyntheticTruth& truth, std::uint64_t seed) {
    RngStream rng(derive_seed(seed, "synthetic-counts"));
    return details::draw_counts(truth.mode_sizes, truth.factors, rng);
}

/** Pearson correlation; 0 when either side is degenerate. */
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
    if (x.size() < 2) throw std::invalid_argument("pearson: need >= 2 points");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

/** Ranks with ties averaged, 1-based. */
inline std::vector<double> average_ranks(const std::vector<double>& x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&x](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
        i = j + 1;
    }
    return ranks;
}

/** Spearman rank correlation with average-rank tie handling. */
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson(average_ranks(x), average_ranks(y));
}

struct RecoveryScore {
    double pearson = 0.0;
    double spearman = 0.0;
};

namespace details {

inline double cosine(const Vector& a, const Vector& b) {
    const double na = a.norm(), nb = b.norm();
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

/**
 * Greedy factor matching on mode-averaged cosine similarity; one shared
 * permutation across all modes resolves the CP column ambiguity.
 */
inline std::vector<std::size_t> match_factors(const std::vector<Matrix>& truth,
                                              const std::vector<Matrix>& fitted) {
    const std::size_t k = static_cast<std::size_t>(truth.front().cols());
    Matrix sim = Matrix::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    for (std::size_t m = 0; m < truth.size(); ++m)
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b)
                sim(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +=
                    cosine(truth[m].col(static_cast<Eigen::Index>(a)),
                           fitted[m].col(static_cast<Eigen::Index>(b))) /
                    static_cast<double>(truth.size());

    std::vector<std::size_t> perm(k, 0);
    std::vector<bool> row_used(k, false), col_used(k, false);
    for (std::size_t step = 0; step < k; ++step) {
        double best = -2.0;
        std::size_t br = 0, bc = 0;
        for (std::size_t a = 0; a < k; ++a) {
            if (row_used[a]) continue;
            for (std::size_t b = 0; b < k; ++b) {
                if (col_used[b]) continue;
                if (sim(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) > best) {
                    best = sim(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
                    br = a;
                    bc = b;
                }
            }
        }
        perm[br] = bc;
        row_used[br] = true;
        col_used[bc] = true;
    }
    return perm;
}

} // namespace details

/**
 * Recovery score of fitted per-mode factor estimates against the true
 * sampled factors: greedy cosine matching fixes the column permutation,
 * then Pearson and Spearman correlations are computed per mode over all
 * (entity, factor) pairs and averaged across modes.
 */
inline RecoveryScore compare_posteriors(const SyntheticTruth& truth,
                                        const std::vector<Matrix>& fitted) {
    if (fitted.size() != truth.factors.size())
        throw std::invalid_argument("compare_posteriors: mode count mismatch");
    for (std::size_t m = 0; m < fitted.size(); ++m) {
        if (static_cast<std::size_t>(fitted[m].cols()) != truth.k_true)
            throw std::invalid_argument("compare_posteriors: factor count mismatch");
        if (fitted[m].rows() != truth.factors[m].rows())
            throw std::invalid_argument("compare_posteriors: mode size mismatch");
    }
    const std::vector<std::size_t> perm = details::match_factors(truth.factors, fitted);

    RecoveryScore score;
    for (std::size_t m = 0; m < fitted.size(); ++m) {
        std::vector<double> t, e;
        t.reserve(static_cast<std::size_t>(truth.factors[m].size()));
        e.reserve(t.capacity());
        for (Eigen::Index s = 0; s < truth.factors[m].rows(); ++s)
            for (std::size_t f = 0; f < truth.k_true; ++f) {
                t.push_back(truth.factors[m](s, static_cast<Eigen::Index>(f)));
                e.push_back(fitted[m](s, static_cast<Eigen::Index>(perm[f])));
            }
        score.pearson += pearson(t, e) / static_cast<double>(fitted.size());
        score.spearman += spearman(t, e) / static_cast<double>(fitted.size());
    }
    return score;
}

/** Posterior-mean recovery score of a fitted state (shape/rate per entity). */
inline RecoveryScore compare_posteriors(const SyntheticTruth& truth, const FactorState& state) {
    std::vector<Matrix> means;
    means.reserve(state.n_modes());
    for (std::size_t m = 0; m < state.n_modes(); ++m)
        means.push_back((state.post_shape[m].array() / state.post_rate[m].array()).matrix());
    return compare_posteriors(truth, means);
}

namespace details {

inline std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace details

/** Sidecar truth file: '#truth' header, hyperparameters, factor matrices. */
inline void save_truth(std::ostream& out, const SyntheticTruth& truth) {
    out << "#truth\t1\n";
    out << "#k\t" << truth.k_true << "\n";
    out << "#modes";
    for (std::size_t n : truth.mode_sizes) out << "\t" << n;
    out << "\n";
    for (std::size_t m = 0; m < truth.mode_hyper.size(); ++m)
        out << "#hyper\t" << m << "\t" << details::fmt_g17(truth.mode_hyper[m].shape) << "\t"
            << details::fmt_g17(truth.mode_hyper[m].rate) << "\n";
    for (std::size_t m = 0; m < truth.factors.size(); ++m) {
        const Matrix& z = truth.factors[m];
        out << "#factors\t" << m << "\t" << z.rows() << "\t" << z.cols() << "\n";
        for (Eigen::Index s = 0; s < z.rows(); ++s) {
            for (Eigen::Index f = 0; f < z.cols(); ++f)
                out << (f ? "\t" : "") << details::fmt_g17(z(s, f));
            out << "\n";
        }
    }
}

inline void save_truth(const std::string& path, const SyntheticTruth& truth) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw parse_error("cannot open '" + path + "' for writing");
    save_truth(out, truth);
    if (!out) throw parse_error("failed writing '" + path + "'");
}

inline SyntheticTruth load_truth(std::istream& in, const std::string& name = "<stream>") {
    std::size_t lineno = 0;
    auto fail = [&](const std::string& what) {
        throw parse_error(name + ": line " + std::to_string(lineno) + ": " + what);
    };
    auto next = [&](std::string& line) {
        if (!std::getline(in, line)) return false;
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    };
    auto split_tabs = [](const std::string& line) {
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (;;) {
            const std::size_t tab = line.find('\t', start);
            cells.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        return cells;
    };
    auto to_double = [&](const std::string& s) {
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || end != s.c_str() + s.size()) fail("bad number '" + s + "'");
        return v;
    };

    std::string line;
    if (!next(line) || split_tabs(line).front() != "#truth") fail("missing '#truth' header");
    if (!next(line)) fail("missing '#k' line");
    auto cells = split_tabs(line);
    std::size_t k = 0;
    if (cells.size() != 2 || cells[0] != "#k" || !details::parse_size(cells[1], k) || k == 0)
        fail("bad '#k' line");
    if (!next(line)) fail("missing '#modes' line");
    cells = split_tabs(line);
    if (cells.size() < 3 || cells[0] != "#modes") fail("bad '#modes' line");
    std::vector<std::size_t> mode_sizes;
    for (std::size_t i = 1; i < cells.size(); ++i) {
        std::size_t n = 0;
        if (!details::parse_size(cells[i], n) || n == 0) fail("bad mode size '" + cells[i] + "'");
        mode_sizes.push_back(n);
    }

    SyntheticTruth truth{mode_sizes, k, {}, {}, SparseCountTensor(mode_sizes)};
    for (std::size_t m = 0; m < mode_sizes.size(); ++m) {
        if (!next(line)) fail("missing '#hyper' line");
        cells = split_tabs(line);
        if (cells.size() != 4 || cells[0] != "#hyper" || cells[1] != std::to_string(m))
            fail("bad '#hyper' line");
        truth.mode_hyper.push_back({to_double(cells[2]), to_double(cells[3])});
    }
    for (std::size_t m = 0; m < mode_sizes.size(); ++m) {
        if (!next(line)) fail("missing '#factors' header");
        cells = split_tabs(line);
        if (cells.size() != 4 || cells[0] != "#factors" || cells[1] != std::to_string(m) ||
            cells[2] != std::to_string(mode_sizes[m]) || cells[3] != std::to_string(k))
            fail("bad '#factors' header");
        Matrix z(static_cast<Eigen::Index>(mode_sizes[m]), static_cast<Eigen::Index>(k));
        for (Eigen::Index s = 0; s < z.rows(); ++s) {
            if (!next(line)) fail("truncated factor matrix");
            cells = split_tabs(line);
            if (cells.size() != k) fail("expected " + std::to_string(k) + " values");
            for (Eigen::Index f = 0; f < z.cols(); ++f)
                z(s, f) = to_double(cells[static_cast<std::size_t>(f)]);
        }
        truth.factors.push_back(std::move(z));
    }
    return truth;
}

inline SyntheticTruth load_truth(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error("cannot open '" + path + "'");
    return load_truth(in, path);
}

} // namespace bptf
