#pragma once

#include <vector>

#include "bet/tensor.hpp"

namespace bet {

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double clip_norm = 0.0;  // global gradient norm bound; <= 0 disables
};

struct AdamState {
    long step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

double global_grad_norm(const std::vector<Tensor>& params);

// Bias-corrected Adam over leaf tensors, updated in place.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamOptions options);
    Adam(std::vector<Tensor> params, AdamOptions options, AdamState state);

    // Returns the pre-clipping global gradient norm.
    double step();
    void zero_grad();

    const AdamState& state() const { return state_; }
    const AdamOptions& options() const { return options_; }

private:
    std::vector<Tensor> params_;
    AdamOptions options_;
    AdamState state_;
};

}  // namespace bet
