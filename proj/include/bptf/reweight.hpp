#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace bptf {

/**
 * Parameters of the imbalance-penalizing weight: slope theta, intercept eta
 * and the most frequent training value ybar. Validated at construction so
 * the per-row weight evaluation stays branch-free.
 */
struct ReweightParams {
    ReweightParams(double theta_, double eta_, double ybar_)
        : theta(theta_), eta(eta_), ybar(ybar_) {
        if (!(theta > 0.0)) throw std::invalid_argument("reweight theta must be > 0");
        if (!(eta > 0.0)) throw std::invalid_argument("reweight eta must be > 0");
    }

    double theta;
    double eta;
    double ybar;
};

/**
 * Weight of one observation:
 *
 *   delta(y) = 1 / (1 + eta exp(-theta (y - ybar)^2))
 *
 * Values near the dominant count ybar are down-weighted toward 1/(1+eta);
 * rare values approach weight 1.
 */
inline double reweight_delta(std::int64_t y, const ReweightParams& p) {
    const double d = static_cast<double>(y) - p.ybar;
    return 1.0 / (1.0 + p.eta * std::exp(-p.theta * d * d));
}

} // namespace bptf
