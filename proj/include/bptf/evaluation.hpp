#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "defs.hpp"
#include "gibbs.hpp"
#include "inference.hpp"
#include "math.hpp"
#include "model_config.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace bptf {

/** Mean absolute error of paired predictions and truths. */
inline double mae(const std::vector<double>& predictions, const std::vector<double>& truths) {
    if (predictions.size() != truths.size()) throw std::invalid_argument("mae: length mismatch");
    if (predictions.empty()) throw std::invalid_argument("mae: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        s += std::fabs(predictions[i] - truths[i]);
    return s / static_cast<double>(predictions.size());
}

/** Predicted Poisson means for every test entry, optionally rounded. */
inline std::vector<double> predictions_for(const SparseCountTensor& test,
                                           const std::vector<Matrix>& factors,
                                           bool round_to_int = false) {
    std::vector<double> preds;
    preds.reserve(test.n_entries());
    std::vector<std::size_t> idx(test.n_modes());
    for (std::size_t p = 0; p < test.n_entries(); ++p) {
        for (std::size_t m = 0; m < test.n_modes(); ++m) idx[m] = test.index(p, m);
        double lam = predict(factors, idx);
        if (round_to_int) lam = static_cast<double>(std::llround(lam));
        preds.push_back(lam);
    }
    return preds;
}

/**
 * Held-out Poisson log-likelihood, full log-mass including the -ln(y!)
 * constant so values are comparable across models.
 */
inline double holdout_ll(const SparseCountTensor& test, const std::vector<Matrix>& factors) {
    double ll = 0.0;
    std::vector<std::size_t> idx(test.n_modes());
    for (std::size_t p = 0; p < test.n_entries(); ++p) {
        for (std::size_t m = 0; m < test.n_modes(); ++m) idx[m] = test.index(p, m);
        const double lam = predict(factors, idx);
        if (!(lam > 0.0)) throw numeric_error("holdout_ll: non-positive predicted rate");
        ll += poisson_log_pmf(test.count(p), lam);
    }
    return ll;
}

struct MetricsReport {
    double mae = 0.0;
    double holdout_ll = 0.0;
    std::size_t n_test = 0;
};

/** MAE (optionally on rounded predictions) plus held-out log-likelihood. */
inline MetricsReport evaluate_model(const SparseCountTensor& test,
                                    const std::vector<Matrix>& factors,
                                    bool round_to_int = false) {
    if (test.n_entries() == 0) throw std::invalid_argument("evaluate_model: empty test tensor");
    std::vector<double> truths;
    truths.reserve(test.n_entries());
    for (std::size_t p = 0; p < test.n_entries(); ++p)
        truths.push_back(static_cast<double>(test.count(p)));
    MetricsReport r;
    r.mae = mae(predictions_for(test, factors, round_to_int), truths);
    r.holdout_ll = holdout_ll(test, factors);
    r.n_test = test.n_entries();
    return r;
}

/**
 * The k nearest entities to `probe` by Euclidean distance between factor
 * rows. The probe itself is always first (distance 0); remaining slots are
 * ordered by (distance, entity index).
 */
inline std::vector<std::size_t> top_k_neighbors(const Matrix& factors, std::size_t probe,
                                                std::size_t k = 10) {
    const std::size_t n = static_cast<std::size_t>(factors.rows());
    if (probe >= n) throw std::invalid_argument("top_k_neighbors: probe out of range");
    if (k == 0 || k > n)
        throw std::invalid_argument("top_k_neighbors: k must lie in [1, entity count]");
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        if (i == probe) continue;
        dist.emplace_back((factors.row(static_cast<Eigen::Index>(i)) -
                           factors.row(static_cast<Eigen::Index>(probe)))
                              .norm(),
                          i);
    }
    std::sort(dist.begin(), dist.end());
    std::vector<std::size_t> out{probe};
    for (std::size_t i = 0; i + 1 < k; ++i) out.push_back(dist[i].second);
    return out;
}

/**
 * Document-entity co-occurrence statistics with add-one smoothing:
 * p(x) = (n_x + 1) / (D + 2). Smoothing keeps NPMI finite for
 * never-co-occurring pairs and yields exactly 1 for a pair present in
 * every document.
 */
class DocumentIncidence {
  public:
    explicit DocumentIncidence(const std::vector<std::vector<std::size_t>>& docs)
        : n_docs_(docs.size()) {
        if (docs.empty()) throw std::invalid_argument("empty incidence source");
        for (const std::vector<std::size_t>& doc : docs) {
            std::vector<std::size_t> uniq(doc);
            std::sort(uniq.begin(), uniq.end());
            uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
            for (std::size_t i = 0; i < uniq.size(); ++i) {
                ++doc_freq_[uniq[i]];
                for (std::size_t j = i + 1; j < uniq.size(); ++j) ++pair_freq_[key(uniq[i], uniq[j])];
            }
        }
    }

    std::size_t n_docs() const { return n_docs_; }

    std::size_t doc_freq(std::size_t e) const {
        const auto it = doc_freq_.find(e);
        return it == doc_freq_.end() ? 0 : it->second;
    }

    std::size_t pair_freq(std::size_t a, std::size_t b) const {
        if (a == b) return doc_freq(a);
        const auto it = pair_freq_.find(key(a, b));
        return it == pair_freq_.end() ? 0 : it->second;
    }

    /** Does the entity clear the document-frequency floor (a fraction of D)? */
    bool meets_floor(std::size_t e, double min_df) const {
        return static_cast<double>(doc_freq(e)) >=
               min_df * static_cast<double>(n_docs_) - 1e-12;
    }

    /** Smoothed normalized pointwise mutual information, in [-1, 1]. */
    double npmi(std::size_t a, std::size_t b) const {
        const double d = static_cast<double>(n_docs_) + 2.0;
        const double pa = (static_cast<double>(doc_freq(a)) + 1.0) / d;
        const double pb = (static_cast<double>(doc_freq(b)) + 1.0) / d;
        const double pab = (static_cast<double>(pair_freq(a, b)) + 1.0) / d;
        return std::log(pab / (pa * pb)) / -std::log(pab);
    }

  private:
    static std::uint64_t key(std::size_t a, std::size_t b) {
        if (a > b) std::swap(a, b);
        return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
    }

    std::size_t n_docs_;
    std::unordered_map<std::size_t, std::size_t> doc_freq_;
    std::unordered_map<std::uint64_t, std::size_t> pair_freq_;
};

/** One line per document: tab-separated 0-based entity indices. */
inline std::vector<std::vector<std::size_t>> load_incidence(std::istream& in,
                                                            const std::string& name = "<stream>") {
    std::vector<std::vector<std::size_t>> docs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::size_t> doc;
        std::size_t start = 0;
        for (;;) {
            const std::size_t tab = line.find('\t', start);
            const std::string cell =
                line.substr(start, tab == std::string::npos ? tab : tab - start);
            std::size_t e = 0;
            if (!details::parse_size(cell, e))
                throw parse_error(name + ": line " + std::to_string(lineno) +
                                  ": bad entity index '" + cell + "'");
            doc.push_back(e);
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        docs.push_back(std::move(doc));
    }
    if (docs.empty()) throw parse_error(name + ": empty incidence source");
    return docs;
}

inline std::vector<std::vector<std::size_t>> load_incidence(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error("cannot open '" + path + "'");
    return load_incidence(in, path);
}

struct EntityCoherence {
    std::size_t probe = 0;
    std::vector<std::size_t> neighbors;
    double avg_npmi = 0.0;
    bool eligible = false; // probe clears the document-frequency floor
};

struct CoherenceReport {
    std::vector<EntityCoherence> entities;
    double corpus_avg = 0.0;
    std::size_t n_eligible = 0;
};

/**
 * Average pairwise NPMI of each neighbor list, over the pairs whose both
 * members clear the document-frequency floor. Probes below the floor are
 * excluded from the corpus average.
 */
inline CoherenceReport coherence_pmi(const std::vector<std::vector<std::size_t>>& neighbor_lists,
                                     const DocumentIncidence& inc, double min_df = 0.001) {
    CoherenceReport report;
    double total = 0.0;
    for (const std::vector<std::size_t>& list : neighbor_lists) {
        if (list.empty()) throw std::invalid_argument("coherence_pmi: empty neighbor list");
        EntityCoherence ec;
        ec.probe = list.front();
        ec.neighbors = list;
        double sum = 0.0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (!inc.meets_floor(list[i], min_df)) continue;
            for (std::size_t j = i + 1; j < list.size(); ++j) {
                if (!inc.meets_floor(list[j], min_df)) continue;
                sum += inc.npmi(list[i], list[j]);
                ++pairs;
            }
        }
        ec.eligible = inc.meets_floor(ec.probe, min_df) && pairs > 0;
        ec.avg_npmi = pairs > 0 ? sum / static_cast<double>(pairs)
                                : std::numeric_limits<double>::quiet_NaN();
        if (ec.eligible) {
            total += ec.avg_npmi;
            ++report.n_eligible;
        }
        report.entities.push_back(std::move(ec));
    }
    report.corpus_avg = report.n_eligible > 0
                            ? total / static_cast<double>(report.n_eligible)
                            : std::numeric_limits<double>::quiet_NaN();
    return report;
}

/** Fit the requested model and return its prediction-time factors. */
inline std::vector<Matrix> fit_prediction_factors(const SparseCountTensor& train,
                                                  const ModelConfig& cfg, ModelKind kind) {
    if (kind == ModelKind::vae) return fit(train, cfg).mean_factors;
    return gibbs_fit(train, cfg).mean_factors;
}

struct CvCell {
    ModelConfig cfg;
    std::vector<double> fold_mae;
    double mean_mae = 0.0;
};

struct CvResult {
    std::vector<CvCell> cells;
    std::size_t best_index = 0;
    std::vector<std::size_t> fold_of_position; // validation fold of each entry
};

/**
 * Deterministic k-fold cross-validation over tensor entries: positions are
 * shuffled once from the master seed and dealt round-robin into folds; each
 * grid cell is fitted on every train fold with a seed derived from
 * (master seed, cell, fold). Selects the cell with minimum mean validation
 * MAE (first cell on ties).
 */
inline CvResult cross_validate(const SparseCountTensor& train,
                               const std::vector<ModelConfig>& grid, std::size_t folds,
                               std::uint64_t seed, ModelKind kind = ModelKind::vae) {
    if (grid.empty()) throw std::invalid_argument("cross_validate: empty grid");
    if (folds < 2) throw std::invalid_argument("cross_validate: need >= 2 folds");
    if (train.n_entries() < folds)
        throw std::invalid_argument("cross_validate: fewer entries than folds");

    RngStream fold_rng(derive_seed(seed, "cv-folds"));
    const std::vector<std::size_t> order = details::shuffled_positions(train.n_entries(), fold_rng);
    std::vector<std::size_t> fold_of(train.n_entries(), 0);
    for (std::size_t i = 0; i < order.size(); ++i) fold_of[order[i]] = i % folds;

    std::vector<std::vector<std::size_t>> train_pos(folds), val_pos(folds);
    for (std::size_t p = 0; p < train.n_entries(); ++p)
        for (std::size_t f = 0; f < folds; ++f)
            (fold_of[p] == f ? val_pos[f] : train_pos[f]).push_back(p);

    const std::uint64_t cv_root = derive_seed(seed, "cv");
    CvResult result;
    result.fold_of_position = fold_of;
    for (std::size_t c = 0; c < grid.size(); ++c) {
        CvCell cell;
        cell.cfg = grid[c];
        for (std::size_t f = 0; f < folds; ++f) {
            ModelConfig cfg = grid[c];
            cfg.seed = derive_seed(derive_seed(cv_root, static_cast<std::uint64_t>(c)),
                                   static_cast<std::uint64_t>(f));
            const SparseCountTensor fold_train = details::take_positions(train, train_pos[f]);
            const SparseCountTensor fold_val = details::take_positions(train, val_pos[f]);
            const std::vector<Matrix> factors = fit_prediction_factors(fold_train, cfg, kind);
            cell.fold_mae.push_back(evaluate_model(fold_val, factors).mae);
        }
        for (double v : cell.fold_mae) cell.mean_mae += v;
        cell.mean_mae /= static_cast<double>(folds);
        result.cells.push_back(std::move(cell));
    }
    for (std::size_t c = 1; c < result.cells.size(); ++c)
        if (result.cells[c].mean_mae < result.cells[result.best_index].mean_mae)
            result.best_index = c;
    return result;
}

struct AblationReport {
    MetricsReport reweighted;
    MetricsReport uniform;
    std::vector<double> trace_reweighted;
    std::vector<double> trace_uniform;
    /** uniform MAE minus reweighted MAE; positive favors reweighting. */
    double mae_delta = 0.0;
};

/**
 * Paired reweighting ablation: two fits identical except that the second
 * forces the observation weights to 1, sharing the seed so initialization
 * and noise streams match.
 */
inline AblationReport ablate_reweighting(const SparseCountTensor& train,
                                         const SparseCountTensor& test, const ModelConfig& cfg) {
    ModelConfig with_rw = cfg;
    with_rw.reweight = true;
    ModelConfig without_rw = cfg;
    without_rw.reweight = false;

    const FitResult a = fit(train, with_rw);
    const FitResult b = fit(train, without_rw);

    AblationReport report;
    report.reweighted = evaluate_model(test, a.mean_factors);
    report.uniform = evaluate_model(test, b.mean_factors);
    report.trace_reweighted = a.report.elbo_trace;
    report.trace_uniform = b.report.elbo_trace;
    report.mae_delta = report.uniform.mae - report.reweighted.mae;
    return report;
}

} // namespace bptf
