#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "bptf/math.hpp"
#include "bptf/rng.hpp"

namespace {

using bptf::GammaParams;
using bptf::RngStream;

// Independent inverse CDF of the standard Gamma via bisection on the
// regularized lower incomplete gamma. Used as the oracle for the implicit
// reparameterization derivative.
double gamma_icdf(double u, double alpha) {
    double hi = 1.0;
    while (bptf::std_gamma_cdf(hi, alpha) < u) hi *= 2.0;
    double lo = 0.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (bptf::std_gamma_cdf(mid, alpha) < u)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace

TEST(Digamma, PinnedValues) {
    EXPECT_NEAR(bptf::digamma(1.0), -0.5772156649, 1e-9);
    // psi(2) = 1 - gamma
    EXPECT_NEAR(bptf::digamma(2.0), 1.0 - 0.57721566490153286, 1e-10);
    // psi(0.5) = -gamma - 2 ln 2
    EXPECT_NEAR(bptf::digamma(0.5), -0.57721566490153286 - 2.0 * std::log(2.0), 1e-10);
}

TEST(Digamma, MatchesLgammaFiniteDifference) {
    for (double x : {0.1, 0.37, 0.9, 1.0, 2.5, 7.3, 11.0, 25.0, 80.0, 400.0}) {
        const double h = 1e-6 * std::max(1.0, x);
        const double fd = (std::lgamma(x + h) - std::lgamma(x - h)) / (2.0 * h);
        EXPECT_NEAR(bptf::digamma(x), fd, 1e-6 * std::max(1.0, std::fabs(fd))) << "x=" << x;
    }
}

TEST(Digamma, Recurrence) {
    for (double x : {0.2, 0.8, 1.5, 4.0, 9.9}) {
        EXPECT_NEAR(bptf::digamma(x + 1.0), bptf::digamma(x) + 1.0 / x, 1e-12)
            << "x=" << x;
    }
}

TEST(Digamma, RejectsNonPositive) {
    EXPECT_THROW(bptf::digamma(0.0), std::domain_error);
    EXPECT_THROW(bptf::digamma(-1.5), std::domain_error);
}

TEST(Trigamma, PinnedValues) {
    EXPECT_NEAR(bptf::trigamma(1.0), 1.6449340668, 1e-9); // pi^2 / 6
    // psi'(0.5) = pi^2 / 2
    EXPECT_NEAR(bptf::trigamma(0.5), 4.9348022005446793, 1e-9);
}

TEST(Trigamma, MatchesDigammaFiniteDifference) {
    for (double x : {0.15, 0.6, 1.0, 3.2, 8.0, 15.0, 120.0}) {
        const double h = 1e-5 * std::max(1.0, x);
        const double fd = (bptf::digamma(x + h) - bptf::digamma(x - h)) / (2.0 * h);
        EXPECT_NEAR(bptf::trigamma(x), fd, 1e-5 * std::fabs(fd)) << "x=" << x;
    }
}

TEST(Trigamma, RejectsNonPositive) {
    EXPECT_THROW(bptf::trigamma(0.0), std::domain_error);
    EXPECT_THROW(bptf::trigamma(-0.1), std::domain_error);
}

TEST(Activations, SoftplusPinned) {
    EXPECT_NEAR(bptf::softplus(0.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(bptf::softplus(50.0), 50.0, 1e-12);
    EXPECT_NEAR(bptf::softplus(-745.0), 0.0, 1e-300);
    EXPECT_TRUE(std::isfinite(bptf::softplus(1e308)));
    EXPECT_TRUE(std::isfinite(bptf::softplus(-1e308)));
}

TEST(Activations, SigmoidBasics) {
    EXPECT_DOUBLE_EQ(bptf::sigmoid(0.0), 0.5);
    EXPECT_NEAR(bptf::sigmoid(40.0), 1.0, 1e-15);
    EXPECT_NEAR(bptf::sigmoid(-40.0), 0.0, 1e-15);
}

TEST(Activations, GradMatchesFiniteDifference) {
    const double h = 1e-6;
    for (auto a : {bptf::Activation::softplus, bptf::Activation::sigmoid, bptf::Activation::relu}) {
        for (double x : {-3.1, -0.7, 0.4, 1.9, 6.0}) { // away from the relu kink
            const double fd = (bptf::activate(a, x + h) - bptf::activate(a, x - h)) / (2.0 * h);
            EXPECT_NEAR(bptf::activate_grad(a, x), fd, 1e-7) << bptf::to_string(a) << " x=" << x;
        }
    }
    EXPECT_DOUBLE_EQ(bptf::activate_grad(bptf::Activation::relu, 0.0), 0.0);
}

TEST(Activations, NameRoundTrip) {
    for (auto a : {bptf::Activation::softplus, bptf::Activation::sigmoid, bptf::Activation::relu})
        EXPECT_EQ(bptf::activation_from_string(bptf::to_string(a)), a);
    EXPECT_THROW(bptf::activation_from_string("tanh"), std::invalid_argument);
}

TEST(GammaKl, PinnedValues) {
    EXPECT_NEAR(bptf::kl_gamma({1.0, 1.0}, {1.0, 1.0}), 0.0, 1e-15);
    EXPECT_NEAR(bptf::kl_gamma({2.0, 1.0}, {1.0, 1.0}), 0.4227843351, 1e-9);
}

TEST(GammaKl, NonNegativeAndZeroOnlyAtPrior) {
    RngStream rng(11);
    for (int i = 0; i < 500; ++i) {
        const GammaParams post{0.05 + 10.0 * rng.uniform01(), 0.05 + 10.0 * rng.uniform01()};
        const GammaParams prior{0.05 + 10.0 * rng.uniform01(), 0.05 + 10.0 * rng.uniform01()};
        EXPECT_GE(bptf::kl_gamma(post, prior), -1e-12);
        EXPECT_NEAR(bptf::kl_gamma(post, post), 0.0, 1e-12);
    }
}

TEST(GammaKl, GradAlphaPinned) {
    EXPECT_NEAR(bptf::kl_grad_alpha({2.0, 1.0}, {1.0, 1.0}), 0.6449340668, 1e-9);
}

TEST(GammaKl, GradBetaPinned) {
    EXPECT_NEAR(bptf::kl_grad_beta({2.0, 1.0}, {1.0, 1.0}), -1.0, 1e-12);
}

// Both partial derivatives of the closed-form KL against central finite
// differences over 1000 random parameter pairs.
TEST(GammaKl, GradsMatchFiniteDifference) {
    RngStream rng(17);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const GammaParams post{0.2 + 8.0 * rng.uniform01(), 0.2 + 8.0 * rng.uniform01()};
        const GammaParams prior{0.2 + 8.0 * rng.uniform01(), 0.2 + 8.0 * rng.uniform01()};

        const double ha = 1e-6 * std::max(1.0, post.shape);
        const double fd_a = (bptf::kl_gamma({post.shape + ha, post.rate}, prior) -
                             bptf::kl_gamma({post.shape - ha, post.rate}, prior)) /
                            (2.0 * ha);
        const double ga = bptf::kl_grad_alpha(post, prior);
        worst = std::max(worst, std::fabs(ga - fd_a) / std::max(1e-8, std::fabs(fd_a)));

        const double hb = 1e-6 * std::max(1.0, post.rate);
        const double fd_b = (bptf::kl_gamma({post.shape, post.rate + hb}, prior) -
                             bptf::kl_gamma({post.shape, post.rate - hb}, prior)) /
                            (2.0 * hb);
        const double gb = bptf::kl_grad_beta(post, prior);
        worst = std::max(worst, std::fabs(gb - fd_b) / std::max(1e-8, std::fabs(fd_b)));
    }
    EXPECT_LT(worst, 1e-5);
}

TEST(GammaLogpdf, MatchesClosedForm) {
    // Gamma(2,3) at x: log(9 x e^{-3x})
    for (double x : {0.1, 0.5, 1.0, 2.7}) {
        EXPECT_NEAR(bptf::gamma_logpdf(x, {2.0, 3.0}), std::log(9.0 * x) - 3.0 * x, 1e-12);
    }
    // Exponential(1): density e^{-x}
    EXPECT_NEAR(bptf::gamma_logpdf(2.0, {1.0, 1.0}), -2.0, 1e-12);
}

TEST(GammaCdf, PinnedValues) {
    EXPECT_NEAR(bptf::std_gamma_cdf(1.0, 1.0), 0.6321205588, 1e-9);
    EXPECT_NEAR(bptf::std_gamma_cdf(2.0, 2.0), 0.5939941503, 1e-9);
    EXPECT_DOUBLE_EQ(bptf::std_gamma_cdf(0.0, 1.5), 0.0);
}

TEST(GammaCdf, MatchesClosedFormsAlphaOneAndTwo) {
    for (double x = 0.05; x < 20.0; x += 0.37) {
        EXPECT_NEAR(bptf::std_gamma_cdf(x, 1.0), 1.0 - std::exp(-x), 1e-12) << "x=" << x;
        EXPECT_NEAR(bptf::std_gamma_cdf(x, 2.0), 1.0 - std::exp(-x) * (1.0 + x), 1e-12)
            << "x=" << x;
    }
}

TEST(GammaCdf, MonotoneInX) {
    for (double alpha : {0.3, 1.0, 4.2, 20.0}) {
        double prev = 0.0;
        for (double x = 0.1; x < 40.0; x += 0.5) {
            const double p = bptf::std_gamma_cdf(x, alpha);
            EXPECT_GE(p, prev);
            EXPECT_LE(p, 1.0);
            prev = p;
        }
    }
}

TEST(GammaPdf, DerivativeOfCdf) {
    for (double alpha : {0.5, 1.3, 6.0}) {
        for (double x : {0.2, 0.9, 2.1, 5.5}) {
            const double h = 1e-6;
            const double fd =
                (bptf::std_gamma_cdf(x + h, alpha) - bptf::std_gamma_cdf(x - h, alpha)) /
                (2.0 * h);
            EXPECT_NEAR(bptf::std_gamma_pdf(x, alpha), fd, 1e-5 * std::max(1.0, fd));
        }
    }
}

TEST(GammaPdf, MatchesLogpdf) {
    for (double alpha : {0.4, 1.0, 3.7}) {
        for (double x : {0.3, 1.1, 4.0}) {
            EXPECT_NEAR(bptf::std_gamma_pdf(x, alpha),
                        std::exp(bptf::gamma_logpdf(x, {alpha, 1.0})), 1e-12);
        }
    }
}

// Implicit reparameterization derivative against the inverse-CDF oracle:
// eps(u, alpha) at fixed quantile u, differentiated by central differences
// with an oracle-side step, over the 20 x 19 (alpha, u) grid.
TEST(DepsDalpha, MatchesInverseCdfOracle) {
    double worst = 0.0;
    for (int ia = 0; ia < 20; ++ia) {
        const double alpha =
            0.1 * std::pow(50.0 / 0.1, static_cast<double>(ia) / 19.0); // log-spaced [0.1, 50]
        for (int iu = 1; iu <= 19; ++iu) {
            const double u = 0.05 * iu;
            const double eps = gamma_icdf(u, alpha);
            const double h = 1e-5 * std::max(1.0, alpha);
            const double oracle =
                (gamma_icdf(u, alpha + h) - gamma_icdf(u, alpha - h)) / (2.0 * h);
            const double got = bptf::deps_dalpha(eps, alpha);
            const double rel = std::fabs(got - oracle) / std::max(1e-12, std::fabs(oracle));
            worst = std::max(worst, rel);
            EXPECT_LT(rel, 1e-3) << "alpha=" << alpha << " u=" << u;
        }
    }
    RecordProperty("worst_rel_err", std::to_string(worst));
}

TEST(DepsDalpha, PositiveEverywhere) {
    for (double alpha : {0.1, 0.7, 1.0, 3.0, 20.0, 50.0}) {
        for (double u : {0.05, 0.3, 0.6, 0.95}) {
            const double eps = gamma_icdf(u, alpha);
            EXPECT_GT(bptf::deps_dalpha(eps, alpha), 0.0) << "alpha=" << alpha << " u=" << u;
        }
    }
}

TEST(SampleGamma, MomentsShapeTwoRateQuarter) {
    RngStream rng(1234);
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = bptf::sample_gamma(2.0, 0.25, rng);
        sum += x;
        sumsq += x * x;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    EXPECT_NEAR(mean, 8.0, 0.16);  // 2%
    EXPECT_NEAR(var, 32.0, 1.6);   // 5%
}

TEST(SampleGamma, MomentsShapeBelowOne) {
    RngStream rng(99);
    const int n = 200000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = bptf::sample_gamma(0.5, 1.0, rng);
        EXPECT_GT(x, 0.0);
        sum += x;
        sumsq += x * x;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    EXPECT_NEAR(mean, 0.5, 0.01);
    EXPECT_NEAR(var, 0.5, 0.03);
}

TEST(SampleGamma, DeterministicForFixedSeed) {
    RngStream a(7), b(7);
    for (int i = 0; i < 100; ++i)
        EXPECT_DOUBLE_EQ(bptf::sample_gamma(1.7, 2.2, a), bptf::sample_gamma(1.7, 2.2, b));
}

TEST(SampleGamma, RejectsBadParams) {
    RngStream rng(1);
    EXPECT_THROW(bptf::sample_gamma(0.0, 1.0, rng), std::domain_error);
    EXPECT_THROW(bptf::sample_gamma(1.0, -2.0, rng), std::domain_error);
}

TEST(PoissonLogPmf, PinnedValues) {
    EXPECT_NEAR(bptf::poisson_log_pmf(1, 1.0), -1.0, 1e-12);
    EXPECT_NEAR(bptf::poisson_log_pmf(2, 2.0), std::log(2.0) - 2.0, 1e-12);
    EXPECT_NEAR(bptf::poisson_log_pmf(0, 3.5), -3.5, 1e-12);
}

TEST(SamplePoisson, MomentsSmallLambda) {
    RngStream rng(5);
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double y = static_cast<double>(bptf::sample_poisson(3.0, rng));
        EXPECT_GE(y, 0.0);
        sum += y;
        sumsq += y * y;
    }
    const double mean = sum / n;
    EXPECT_NEAR(mean, 3.0, 0.06);
    EXPECT_NEAR(sumsq / n - mean * mean, 3.0, 0.15);
}

TEST(SamplePoisson, MomentsLargeLambda) {
    RngStream rng(6);
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double y = static_cast<double>(bptf::sample_poisson(30.0, rng));
        sum += y;
        sumsq += y * y;
    }
    const double mean = sum / n;
    EXPECT_NEAR(mean, 30.0, 0.6);
    EXPECT_NEAR(sumsq / n - mean * mean, 30.0, 1.5);
}

TEST(SamplePoisson, ZeroLambdaAndDeterminism) {
    RngStream rng(9);
    EXPECT_EQ(bptf::sample_poisson(0.0, rng), 0);
    RngStream a(21), b(21);
    for (int i = 0; i < 200; ++i)
        EXPECT_EQ(bptf::sample_poisson(12.5, a), bptf::sample_poisson(12.5, b));
}

TEST(Rng, Uniform01Range) {
    RngStream rng(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform01();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
}

TEST(Rng, NormalMoments) {
    RngStream rng(8);
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sumsq += x * x;
    }
    const double mean = sum / n;
    EXPECT_NEAR(mean, 0.0, 0.02);
    EXPECT_NEAR(sumsq / n - mean * mean, 1.0, 0.03);
}

TEST(Rng, BelowIsInRangeAndCoversValues) {
    RngStream rng(4);
    std::vector<int> seen(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const std::uint64_t v = rng.below(7);
        ASSERT_LT(v, 7u);
        ++seen[static_cast<std::size_t>(v)];
    }
    for (int c : seen) EXPECT_GT(c, 0);
}

TEST(Rng, LabeledSeedSplitting) {
    const std::uint64_t base = 42;
    const std::uint64_t a = bptf::derive_seed(base, "alpha");
    const std::uint64_t b = bptf::derive_seed(base, "beta");
    EXPECT_NE(a, b);
    EXPECT_EQ(a, bptf::derive_seed(base, "alpha"));
    EXPECT_NE(a, bptf::derive_seed(base + 1, "alpha"));
    EXPECT_NE(bptf::derive_seed(base, std::uint64_t{0}), bptf::derive_seed(base, std::uint64_t{1}));
}
