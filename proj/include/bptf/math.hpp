#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "defs.hpp"
#include "rng.hpp"

namespace bptf {

/**
 * Gamma distribution parameters in the rate parameterization: density
 * proportional to x^{shape-1} e^{-rate x}, mean shape/rate.
 */
struct GammaParams {
    double shape;
    double rate;
};

inline GammaParams clamp_params(GammaParams p) {
    return {clamp_floor(p.shape), clamp_floor(p.rate)};
}

namespace details {
inline void check_positive(double x, const char* who) {
    if (!(x > 0.0))
        throw std::domain_error(std::string(who) + ": argument must be > 0");
}
} // namespace details

/**
 * Digamma function psi(x) for x > 0, accurate to >= 10 significant digits.
 *
 * Uses the recurrence psi(x) = psi(x+1) - 1/x to push the argument above 10,
 * then the asymptotic (Bernoulli-number) series.
 */
inline double digamma(double x) {
    details::check_positive(x, "digamma");
    double result = 0.0;
    while (x < 10.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double t = inv * inv;
    // sum_{k>=1} B_{2k} / (2k x^{2k})
    const double series =
        t * (1.0 / 12.0 -
             t * (1.0 / 120.0 -
                  t * (1.0 / 252.0 -
                       t * (1.0 / 240.0 -
                            t * (1.0 / 132.0 - t * (691.0 / 32760.0 - t * (1.0 / 12.0)))))));
    return result + std::log(x) - 0.5 * inv - series;
}

/**
 * Trigamma function psi'(x) for x > 0, accurate to >= 10 significant digits.
 * Recurrence psi'(x) = psi'(x+1) + 1/x^2 plus the asymptotic series.
 */
inline double trigamma(double x) {
    details::check_positive(x, "trigamma");
    double result = 0.0;
    while (x < 10.0) {
        result += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double t = inv * inv;
    const double poly =
        1.0 / 6.0 -
        t * (1.0 / 30.0 -
             t * (1.0 / 42.0 -
                  t * (1.0 / 30.0 - t * (5.0 / 66.0 - t * (691.0 / 2730.0 - t * (7.0 / 6.0))))));
    return result + inv + 0.5 * t + inv * t * poly;
}

inline double lgamma_pos(double x) {
    details::check_positive(x, "lgamma");
    return std::lgamma(x);
}

/** Activation functions selectable per layer. */
enum class Activation { softplus, sigmoid, relu };

inline const char* to_string(Activation a) {
    switch (a) {
    case Activation::softplus: return "softplus";
    case Activation::sigmoid: return "sigmoid";
    case Activation::relu: return "relu";
    }
    return "softplus";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "softplus") return Activation::softplus;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "relu") return Activation::relu;
    throw std::invalid_argument("unknown activation '" + s + "' (expected softplus, sigmoid or relu)");
}

/** Overflow-safe softplus ln(1 + e^x) = max(x,0) + ln(1 + e^{-|x|}). */
inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double activate(Activation a, double x) {
    switch (a) {
    case Activation::softplus: return softplus(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    }
    return 0.0;
}

/** Exact derivative of activate; the relu subgradient at 0 is taken as 0. */
inline double activate_grad(Activation a, double x) {
    switch (a) {
    case Activation::softplus: return sigmoid(x);
    case Activation::sigmoid: {
        const double s = sigmoid(x);
        return s * (1.0 - s);
    }
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    }
    return 0.0;
}

/**
 * Draw from Gamma(shape, rate) with the Marsaglia-Tsang squeeze/rejection
 * method. Shapes below 1 use the boost transform: draw with shape+1 and
 * multiply by U^{1/shape}.
 */
inline double sample_gamma(double shape, double rate, RngStream& rng) {
    details::check_positive(shape, "sample_gamma shape");
    details::check_positive(rate, "sample_gamma rate");
    if (shape < 1.0) {
        const double u = rng.open01();
        return sample_gamma(shape + 1.0, rate, rng) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.open01();
        const double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return d * v / rate;
        if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v / rate;
    }
}

inline double sample_gamma(GammaParams p, RngStream& rng) {
    return sample_gamma(p.shape, p.rate, rng);
}

/** Log-density of Gamma(shape, rate) at x > 0. */
inline double gamma_logpdf(double x, GammaParams p) {
    return p.shape * std::log(p.rate) - std::lgamma(p.shape) + (p.shape - 1.0) * std::log(x) -
           p.rate * x;
}

/**
 * KL(Gamma(post) || Gamma(prior)) in closed form:
 *
 *   (a' - a) psi(a') - lnG(a') + lnG(a) + a (ln b' - ln b) + a' (b - b') / b'
 *
 * with post = (a', b'), prior = (a, b). Non-negative for all valid params.
 */
inline double kl_gamma(GammaParams post, GammaParams prior) {
    details::check_positive(post.shape, "kl_gamma post.shape");
    details::check_positive(post.rate, "kl_gamma post.rate");
    details::check_positive(prior.shape, "kl_gamma prior.shape");
    details::check_positive(prior.rate, "kl_gamma prior.rate");
    return (post.shape - prior.shape) * digamma(post.shape) - std::lgamma(post.shape) +
           std::lgamma(prior.shape) + prior.shape * (std::log(post.rate) - std::log(prior.rate)) +
           post.shape * (prior.rate - post.rate) / post.rate;
}

/** d KL / d post.shape = (a' - a) psi'(a') + b / b' - 1. */
inline double kl_grad_alpha(GammaParams post, GammaParams prior) {
    return (post.shape - prior.shape) * trigamma(post.shape) + prior.rate / post.rate - 1.0;
}

/** d KL / d post.rate = a / b' - a' b / b'^2. */
inline double kl_grad_beta(GammaParams post, GammaParams prior) {
    return prior.shape / post.rate - post.shape * prior.rate / (post.rate * post.rate);
}

/**
 * Regularized lower incomplete gamma P(alpha, eps): the CDF of a
 * standard-Gamma (rate 1) draw. Series expansion for eps < alpha + 1,
 * Lentz continued fraction otherwise; >= 8 significant digits.
 */
inline double std_gamma_cdf(double eps, double alpha) {
    details::check_positive(alpha, "std_gamma_cdf alpha");
    if (eps <= 0.0) return 0.0;
    const double lg = std::lgamma(alpha);
    if (eps < alpha + 1.0) {
        double ap = alpha;
        double sum = 1.0 / alpha;
        double del = sum;
        for (int n = 0; n < 500; ++n) {
            ap += 1.0;
            del *= eps / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
        }
        return sum * std::exp(-eps + alpha * std::log(eps) - lg);
    }
    const double fpmin = 1e-300;
    double b = eps + 1.0 - alpha;
    double c = 1.0 / fpmin;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - alpha);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = b + an / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < 1e-16) break;
    }
    const double q = std::exp(-eps + alpha * std::log(eps) - lg) * h;
    return 1.0 - q;
}

/** Density of a standard-Gamma(alpha) draw at eps > 0. */
inline double std_gamma_pdf(double eps, double alpha) {
    return std::exp((alpha - 1.0) * std::log(eps) - eps - std::lgamma(alpha));
}

/**
 * Implicit reparameterization gradient of a standard-Gamma draw with respect
 * to its shape at fixed quantile:
 *
 *   d eps / d alpha = -(dP/dalpha) / pdf(eps; alpha)
 *
 * dP/dalpha is a central finite difference of std_gamma_cdf with step
 * h = 1e-4 max(1, alpha); the density is closed-form. Positive everywhere:
 * a larger shape shifts Gamma mass to the right at every quantile.
 */
inline double deps_dalpha(double eps, double alpha) {
    details::check_positive(eps, "deps_dalpha eps");
    details::check_positive(alpha, "deps_dalpha alpha");
    double h = 1e-4 * std::max(1.0, alpha);
    if (h >= alpha) h = 0.5 * alpha; // keep alpha - h inside the domain
    const double pdf = std_gamma_pdf(eps, alpha);
    if (!(pdf > 0.0) || !std::isfinite(pdf)) return 0.0; // negligible mass this far in the tail
    const double lo = std_gamma_cdf(eps, alpha - h);
    const double hi = std_gamma_cdf(eps, alpha + h);
    return (lo - hi) / (2.0 * h) / pdf;
}

/** Poisson log-mass y ln(lambda) - lambda - ln(y!). */
inline double poisson_log_pmf(std::int64_t y, double lambda) {
    return static_cast<double>(y) * std::log(lambda) - lambda -
           std::lgamma(static_cast<double>(y) + 1.0);
}

/**
 * Draw from Poisson(lambda). Knuth's product method below lambda = 10,
 * Hörmann's PTRS transformed rejection above.
 */
inline std::int64_t sample_poisson(double lambda, RngStream& rng) {
    if (!(lambda >= 0.0)) throw std::domain_error("sample_poisson: lambda must be >= 0");
    if (lambda == 0.0) return 0;
    if (lambda < 10.0) {
        const double limit = std::exp(-lambda);
        std::int64_t k = 0;
        double prod = rng.uniform01();
        while (prod > limit) {
            ++k;
            prod *= rng.uniform01();
        }
        return k;
    }
    const double b = 0.931 + 2.53 * std::sqrt(lambda);
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    const double log_lambda = std::log(lambda);
    for (;;) {
        const double u = rng.uniform01() - 0.5;
        const double v = rng.uniform01();
        const double us = 0.5 - std::fabs(u);
        const double kf = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
        if (us >= 0.07 && v <= v_r) return static_cast<std::int64_t>(kf);
        if (kf < 0.0 || (us < 0.013 && v > us)) continue;
        if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
            kf * log_lambda - lambda - std::lgamma(kf + 1.0))
            return static_cast<std::int64_t>(kf);
    }
}

} // namespace bptf
