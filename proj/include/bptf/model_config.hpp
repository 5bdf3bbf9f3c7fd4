#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "math.hpp"

namespace bptf {

/** Which fitting procedure a command drives. */
enum class ModelKind { vae, gibbs };

inline std::string to_string(ModelKind k) {
    return k == ModelKind::vae ? "vae-bptf" : "gibbs-bptf";
}

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "vae-bptf") return ModelKind::vae;
    if (s == "gibbs-bptf") return ModelKind::gibbs;
    throw std::invalid_argument("unknown model '" + s + "' (expected vae-bptf or gibbs-bptf)");
}

/**
 * All model and trainer hyperparameters. The number of hidden layers L is
 * the length of layer_widths (empty list = the output layer reads the raw
 * input row). Defaults follow the toolkit's documented baseline settings.
 */
struct ModelConfig {
    std::size_t k = 5;
    std::vector<std::size_t> layer_widths = {10};
    Activation hidden_activation = Activation::softplus;
    Activation output_activation = Activation::softplus;

    double theta = 1.0;
    double eta = 5.0;
    bool reweight = true;

    double prior_shape = 1.0;
    double prior_rate = 1.0;
    double sigma_sq = 1.0;

    double adam_lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    std::size_t max_iters = 300;
    std::size_t conv_window = 10;
    double conv_tol = 1e-4;

    std::uint64_t seed = 1;
    std::size_t mean_sweeps = 20;  // posterior-mean averaging sweeps after convergence
    std::size_t gibbs_burn_in = 0; // 0 = half of max_iters
    std::size_t threads = 1;

    std::size_t n_layers() const { return layer_widths.size(); }

    GammaParams prior() const { return {prior_shape, prior_rate}; }

    void validate() const {
        auto req = [](bool ok, const char* msg) {
            if (!ok) throw std::invalid_argument(msg);
        };
        req(k >= 1, "config: k must be >= 1");
        for (std::size_t w : layer_widths) req(w >= 1, "config: layer widths must be >= 1");
        req(theta > 0.0, "config: theta must be > 0");
        req(eta > 0.0, "config: eta must be > 0");
        req(prior_shape > 0.0, "config: prior_shape must be > 0");
        req(prior_rate > 0.0, "config: prior_rate must be > 0");
        req(sigma_sq > 0.0, "config: sigma_sq must be > 0");
        req(adam_lr >= 0.0, "config: adam_lr must be >= 0");
        req(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "config: adam_beta1 must lie in [0,1)");
        req(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "config: adam_beta2 must lie in [0,1)");
        req(adam_eps > 0.0, "config: adam_eps must be > 0");
        req(max_iters >= 1, "config: max_iters must be >= 1");
        req(conv_window >= 2, "config: conv_window must be >= 2");
        req(conv_tol > 0.0, "config: conv_tol must be > 0");
        req(mean_sweeps >= 1, "config: mean_sweeps must be >= 1");
        req(threads >= 1, "config: threads must be >= 1");
    }
};

} // namespace bptf
