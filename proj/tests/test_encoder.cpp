#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "bptf/encoder.hpp"
#include "bptf/model_config.hpp"
#include "bptf/rng.hpp"

namespace {

using bptf::Activation;
using bptf::EncoderGrad;
using bptf::EncoderNet;
using bptf::ForwardCache;
using bptf::Matrix;
using bptf::ParamKind;
using bptf::RngStream;
using bptf::Vector;

EncoderNet zero_net(std::size_t input_dim, std::size_t hidden, Activation act) {
    EncoderNet net;
    if (hidden > 0) {
        net.layers.push_back({Matrix::Zero(static_cast<Eigen::Index>(input_dim),
                                           static_cast<Eigen::Index>(hidden)),
                              Vector::Zero(static_cast<Eigen::Index>(hidden))});
        net.out_w = Vector::Zero(static_cast<Eigen::Index>(hidden));
    } else {
        net.out_w = Vector::Zero(static_cast<Eigen::Index>(input_dim));
    }
    net.out_b = 0.0;
    net.hidden_activation = act;
    net.output_activation = act;
    return net;
}

EncoderNet random_net(const std::vector<std::size_t>& widths, std::size_t input_dim,
                      Activation act, RngStream& rng) {
    EncoderNet net;
    std::size_t in = input_dim;
    for (std::size_t w : widths) {
        Matrix W(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(w));
        Vector b(static_cast<Eigen::Index>(w));
        for (Eigen::Index i = 0; i < W.size(); ++i) W(i) = rng.normal() * 0.7;
        for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.normal() * 0.3;
        net.layers.push_back({std::move(W), std::move(b)});
        in = w;
    }
    net.out_w = Vector(static_cast<Eigen::Index>(in));
    for (Eigen::Index i = 0; i < net.out_w.size(); ++i) net.out_w(i) = rng.normal() * 0.7;
    net.out_b = rng.normal() * 0.3;
    net.hidden_activation = act;
    net.output_activation = act;
    return net;
}

// Flattened parameter access so finite differences can sweep every weight.
std::vector<double*> param_pointers(EncoderNet& net) {
    std::vector<double*> ptrs;
    for (bptf::EncoderLayer& l : net.layers) {
        for (Eigen::Index i = 0; i < l.W.size(); ++i) ptrs.push_back(l.W.data() + i);
        for (Eigen::Index i = 0; i < l.b.size(); ++i) ptrs.push_back(l.b.data() + i);
    }
    for (Eigen::Index i = 0; i < net.out_w.size(); ++i) ptrs.push_back(net.out_w.data() + i);
    ptrs.push_back(&net.out_b);
    return ptrs;
}

std::vector<double> grad_values(const EncoderGrad& g) {
    std::vector<double> vals;
    for (std::size_t l = 0; l < g.W.size(); ++l) {
        for (Eigen::Index i = 0; i < g.W[l].size(); ++i) vals.push_back(g.W[l](i));
        for (Eigen::Index i = 0; i < g.b[l].size(); ++i) vals.push_back(g.b[l](i));
    }
    for (Eigen::Index i = 0; i < g.out_w.size(); ++i) vals.push_back(g.out_w(i));
    vals.push_back(g.out_b);
    return vals;
}

} // namespace

TEST(InitBank, RateOutputWeightsCenterAtOneTenth) {
    bptf::ModelConfig cfg;
    cfg.k = 50;
    cfg.layer_widths = {100};
    cfg.sigma_sq = 1.0;
    RngStream rng(2024);
    const bptf::EncoderBank bank = bptf::init_bank(cfg, 2, rng);

    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t m = 0; m < 2; ++m)
        for (std::size_t f = 0; f < cfg.k; ++f) {
            const EncoderNet& net = bank.net(m, f, ParamKind::rate);
            for (Eigen::Index i = 0; i < net.out_w.size(); ++i, ++n) sum += net.out_w(i);
        }
    ASSERT_GE(n, 10000u);
    EXPECT_NEAR(sum / static_cast<double>(n), 0.1, 0.03);
}

TEST(InitBank, ShapeOutputWeightsCenterAtZero) {
    bptf::ModelConfig cfg;
    cfg.k = 50;
    cfg.layer_widths = {100};
    RngStream rng(77);
    const bptf::EncoderBank bank = bptf::init_bank(cfg, 2, rng);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t m = 0; m < 2; ++m)
        for (std::size_t f = 0; f < cfg.k; ++f) {
            const EncoderNet& net = bank.net(m, f, ParamKind::shape);
            for (Eigen::Index i = 0; i < net.out_w.size(); ++i, ++n) sum += net.out_w(i);
        }
    EXPECT_NEAR(sum / static_cast<double>(n), 0.0, 0.03);
}

TEST(InitBank, HiddenWeightsAreStandardNormal) {
    bptf::ModelConfig cfg;
    cfg.k = 40;
    cfg.layer_widths = {60};
    RngStream rng(5150);
    const bptf::EncoderBank bank = bptf::init_bank(cfg, 3, rng);
    double sum = 0.0, sumsq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const Matrix& W = bank.net_at(i).layers[0].W;
        for (Eigen::Index j = 0; j < W.size(); ++j, ++n) {
            sum += W(j);
            sumsq += W(j) * W(j);
        }
    }
    ASSERT_GE(n, 10000u);
    const double mean = sum / static_cast<double>(n);
    const double var = sumsq / static_cast<double>(n) - mean * mean;
    EXPECT_NEAR(mean, 0.0, 0.05);
    EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(InitBank, DeterministicForFixedSeed) {
    bptf::ModelConfig cfg;
    cfg.k = 3;
    cfg.layer_widths = {4, 5};
    RngStream a(9), b(9);
    const bptf::EncoderBank ba = bptf::init_bank(cfg, 3, a);
    const bptf::EncoderBank bb = bptf::init_bank(cfg, 3, b);
    ASSERT_EQ(ba.size(), bb.size());
    for (std::size_t i = 0; i < ba.size(); ++i) {
        const EncoderNet& x = ba.net_at(i);
        const EncoderNet& y = bb.net_at(i);
        for (std::size_t l = 0; l < x.layers.size(); ++l) {
            EXPECT_TRUE(x.layers[l].W == y.layers[l].W);
            EXPECT_TRUE(x.layers[l].b == y.layers[l].b);
        }
        EXPECT_TRUE(x.out_w == y.out_w);
        EXPECT_DOUBLE_EQ(x.out_b, y.out_b);
    }
}

TEST(InitBank, BankShapeAndInputWidth) {
    bptf::ModelConfig cfg;
    cfg.k = 4;
    cfg.layer_widths = {6};
    RngStream rng(1);
    const bptf::EncoderBank bank = bptf::init_bank(cfg, 3, rng);
    EXPECT_EQ(bank.size(), 2u * 3u * 4u);
    EXPECT_EQ(bank.net(0, 0, ParamKind::shape).input_dim(), 3u);
    EXPECT_THROW(bptf::init_bank(cfg, 1, rng), std::invalid_argument);
}

TEST(Forward, ZeroNetGivesSoftplusZeroPerRow) {
    const EncoderNet net = zero_net(3, 4, Activation::softplus);
    const Matrix batch = Matrix::Random(3, 3);
    ForwardCache cache;
    const double v = bptf::forward_entity(net, batch, Vector::Ones(3), cache);
    EXPECT_NEAR(v, 3.0 * std::log(2.0), 1e-12);
    EXPECT_NEAR(v, 2.0794, 2e-4);
}

TEST(Forward, DeltaScalesLinearly) {
    const EncoderNet net = zero_net(3, 4, Activation::softplus);
    const Matrix batch = Matrix::Random(3, 3);
    ForwardCache cache;
    const double v = bptf::forward_entity(net, batch, Vector::Constant(3, 1.0 / 6.0), cache);
    EXPECT_NEAR(v, 0.5 * std::log(2.0), 1e-12);
    EXPECT_NEAR(v, 0.3466, 1e-4);

    RngStream rng(3);
    EncoderNet rnet = random_net({5}, 3, Activation::softplus, rng);
    Matrix b2(4, 3);
    for (Eigen::Index i = 0; i < b2.size(); ++i) b2(i) = rng.normal();
    Vector delta(4);
    for (Eigen::Index i = 0; i < 4; ++i) delta(i) = 0.1 + rng.uniform01();
    const double base = bptf::forward_entity(rnet, b2, delta, cache);
    const double scaled = bptf::forward_entity(rnet, b2, (3.7 * delta).eval(), cache);
    EXPECT_NEAR(scaled, 3.7 * base, 1e-10 * std::fabs(base) + 1e-12);
}

TEST(Forward, LinearReadoutNoHiddenLayers) {
    EncoderNet net = zero_net(3, 0, Activation::softplus);
    net.out_w << 1.0, 0.0, 0.0;
    Matrix batch(1, 3);
    batch << 2.0, 7.0, 7.0;
    ForwardCache cache;
    const double v = bptf::forward_entity(net, batch, Vector::Ones(1), cache);
    EXPECT_NEAR(v, bptf::softplus(2.0), 1e-12);
    EXPECT_NEAR(v, 2.1269, 1e-4);
}

TEST(Forward, RowPermutationInvariant) {
    RngStream rng(44);
    const EncoderNet net = random_net({6, 4}, 3, Activation::softplus, rng);
    Matrix batch(5, 3);
    Vector delta(5);
    for (Eigen::Index i = 0; i < batch.size(); ++i) batch(i) = rng.normal();
    for (Eigen::Index i = 0; i < 5; ++i) delta(i) = 0.2 + rng.uniform01();

    Matrix perm(5, 3);
    Vector pdelta(5);
    const int order[5] = {4, 2, 0, 3, 1};
    for (Eigen::Index i = 0; i < 5; ++i) {
        perm.row(i) = batch.row(order[i]);
        pdelta(i) = delta(order[i]);
    }
    ForwardCache cache;
    const double a = bptf::forward_entity(net, batch, delta, cache);
    const double b = bptf::forward_entity(net, perm, pdelta, cache);
    EXPECT_NEAR(a, b, 1e-12 * std::max(1.0, std::fabs(a)));
}

TEST(Forward, PositiveWithSoftplusOutput) {
    RngStream rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        const EncoderNet net = random_net({4}, 3, Activation::softplus, rng);
        Matrix batch(2, 3);
        for (Eigen::Index i = 0; i < batch.size(); ++i) batch(i) = 5.0 * rng.normal();
        ForwardCache cache;
        EXPECT_GT(bptf::forward_entity(net, batch, Vector::Constant(2, 0.4), cache), 0.0);
    }
}

TEST(Forward, RejectsEmptyAndMismatchedBatches) {
    const EncoderNet net = zero_net(3, 2, Activation::softplus);
    ForwardCache cache;
    try {
        bptf::forward_entity(net, Matrix(0, 3), Vector(0), cache);
        FAIL() << "expected throw";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("cold entity"), std::string::npos);
    }
    EXPECT_THROW(bptf::forward_entity(net, Matrix::Ones(2, 4), Vector::Ones(2), cache),
                 std::invalid_argument);
    EXPECT_THROW(bptf::forward_entity(net, Matrix::Ones(2, 3), Vector::Ones(3), cache),
                 std::invalid_argument);
}

TEST(Backward, ZeroUpstreamGivesZeroGradient) {
    RngStream rng(15);
    const EncoderNet net = random_net({5}, 3, Activation::softplus, rng);
    Matrix batch = Matrix::Random(4, 3);
    ForwardCache cache;
    bptf::forward_entity(net, batch, Vector::Ones(4), cache);
    EncoderGrad grad = EncoderGrad::zeros_like(net);
    bptf::backward_entity(net, cache, 0.0, grad);
    for (double v : grad_values(grad)) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Backward, OutputBiasGradientClosedForm) {
    // L = 0, single row: d(value)/d(out_b) = delta * h'(w.x + b)
    EncoderNet net = zero_net(3, 0, Activation::softplus);
    net.out_w << 0.8, -0.4, 0.1;
    net.out_b = 0.3;
    Matrix batch(1, 3);
    batch << 1.0, 2.0, -0.5;
    Vector delta = Vector::Constant(1, 0.37);
    ForwardCache cache;
    bptf::forward_entity(net, batch, delta, cache);
    EncoderGrad grad = EncoderGrad::zeros_like(net);
    const double upstream = 2.5;
    bptf::backward_entity(net, cache, upstream, grad);
    const double pre = net.out_w.dot(batch.row(0)) + net.out_b;
    EXPECT_NEAR(grad.out_b, upstream * 0.37 * bptf::sigmoid(pre), 1e-12);
}

TEST(Backward, MatchesFiniteDifferenceOnFiftyRandomTriples) {
    RngStream rng(2718);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const Activation act = trial % 3 == 2 ? Activation::relu : Activation::softplus;
        const std::size_t input_dim = 3;
        std::vector<std::size_t> widths;
        if (trial % 4 != 0) widths.push_back(3 + trial % 5);
        if (trial % 4 == 2) widths.push_back(2 + trial % 3);
        EncoderNet net = random_net(widths, input_dim, act, rng);
        net.output_activation = Activation::softplus; // Gamma parameters need positive outputs

        const Eigen::Index rows = 1 + trial % 5;
        Matrix batch(rows, 3);
        Vector delta(rows);
        for (Eigen::Index i = 0; i < batch.size(); ++i) batch(i) = 1.5 * rng.normal();
        for (Eigen::Index i = 0; i < rows; ++i) delta(i) = 0.1 + rng.uniform01();

        ForwardCache cache;
        bptf::forward_entity(net, batch, delta, cache);
        if (act == Activation::relu) {
            // keep away from the kink so the derivative is classical
            bool near_kink = false;
            for (const Matrix& pre : cache.pre)
                near_kink = near_kink || (pre.array().abs() < 1e-3).any();
            if (near_kink) continue;
        }

        EncoderGrad grad = EncoderGrad::zeros_like(net);
        const double upstream = 0.5 + rng.uniform01();
        bptf::backward_entity(net, cache, upstream, grad);
        const std::vector<double> analytic = grad_values(grad);

        const std::vector<double*> ptrs = param_pointers(net);
        ASSERT_EQ(ptrs.size(), analytic.size());
        const double h = 1e-5;
        for (std::size_t i = 0; i < ptrs.size(); ++i) {
            const double saved = *ptrs[i];
            *ptrs[i] = saved + h;
            const double up = bptf::forward_entity(net, batch, delta, cache);
            *ptrs[i] = saved - h;
            const double dn = bptf::forward_entity(net, batch, delta, cache);
            *ptrs[i] = saved;
            const double fd = upstream * (up - dn) / (2.0 * h);
            const double rel =
                std::fabs(analytic[i] - fd) / std::max(1e-6, std::fabs(fd));
            worst = std::max(worst, rel);
        }
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(Backward, RejectsCacheMismatch) {
    RngStream rng(5);
    const EncoderNet two_layers = random_net({4, 3}, 3, Activation::softplus, rng);
    const EncoderNet one_layer = random_net({4}, 3, Activation::softplus, rng);
    ForwardCache cache;
    bptf::forward_entity(one_layer, Matrix::Random(2, 3), Vector::Ones(2), cache);
    EncoderGrad grad = EncoderGrad::zeros_like(two_layers);
    EXPECT_THROW(bptf::backward_entity(two_layers, cache, 1.0, grad), std::invalid_argument);
}

TEST(Adam, ZeroLearningRateFreezesParameters) {
    RngStream rng(31);
    EncoderNet net = random_net({4}, 3, Activation::softplus, rng);
    const EncoderNet before = net;
    bptf::AdamState state = bptf::AdamState::zeros_like(net);
    EncoderGrad grad = EncoderGrad::zeros_like(net);
    grad.out_b = 5.0;
    grad.W[0].setConstant(1.0);
    bptf::ModelConfig cfg;
    cfg.adam_lr = 0.0;
    bptf::adam_step(net, grad, state, cfg);
    EXPECT_TRUE(net.layers[0].W == before.layers[0].W);
    EXPECT_TRUE(net.out_w == before.out_w);
    EXPECT_DOUBLE_EQ(net.out_b, before.out_b);
    EXPECT_EQ(state.t, 1);
}

TEST(Adam, FirstStepIsSignedAscent) {
    // With bias correction, the first update is ~ lr * g / (|g| + eps).
    RngStream rng(32);
    EncoderNet net = random_net({2}, 3, Activation::softplus, rng);
    const double b_before = net.out_b;
    bptf::AdamState state = bptf::AdamState::zeros_like(net);
    EncoderGrad grad = EncoderGrad::zeros_like(net);
    grad.out_b = 4.0;
    bptf::ModelConfig cfg;
    cfg.adam_lr = 0.01;
    bptf::adam_step(net, grad, state, cfg);
    EXPECT_NEAR(net.out_b - b_before, 0.01, 1e-6);

    grad.out_b = -4.0;
    EncoderNet net2 = net;
    bptf::AdamState s2 = bptf::AdamState::zeros_like(net2);
    bptf::adam_step(net2, grad, s2, cfg);
    EXPECT_NEAR(net2.out_b - net.out_b, -0.01, 1e-6);
}
