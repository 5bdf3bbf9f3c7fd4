#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace bptf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/**
 * Lower clamp applied to latent factors, posterior Gamma parameters and
 * encoder outputs before they are used as Gamma parameters. Keeps every
 * shape/rate strictly positive so sampling, KL terms and logarithms stay
 * finite.
 */
inline constexpr double param_floor = 1e-6;

inline double clamp_floor(double x) { return x < param_floor ? param_floor : x; }

/**
 * Upper clamp applied to latent factor values. A rate encoder whose raw
 * output saturates below param_floor yields Gamma draws with mean
 * shape / param_floor; fed back as inputs to the other modes' encoders,
 * those draws grow multiplicatively sweep over sweep until the CP rate or a
 * gradient sum overflows double range and the weights turn NaN. Capping the
 * factors keeps every downstream product finite; the ceiling is far above
 * any value a converged model produces, so healthy runs never touch it.
 */
inline constexpr double factor_ceiling = 1e8;

inline double clamp_factor(double x) {
    return x < param_floor ? param_floor : (x > factor_ceiling ? factor_ceiling : x);
}

/**
 * Raised when an input file (tensor, config, checkpoint, incidence) cannot
 * be parsed. Messages carry the offending line number.
 */
class parse_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/**
 * Raised when training produces a non-finite objective or an impossible
 * intermediate quantity.
 */
class numeric_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace bptf
