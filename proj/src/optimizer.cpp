#include "bet/optimizer.hpp"

#include <cmath>

#include "bet/errors.hpp"

namespace bet {

double global_grad_norm(const std::vector<Tensor>& params) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) sq += g * g;
    }
    return std::sqrt(sq);
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : Adam(std::move(params), options, AdamState{}) {}

Adam::Adam(std::vector<Tensor> params, AdamOptions options, AdamState state)
    : params_(std::move(params)), options_(options), state_(std::move(state)) {
    if (state_.m.empty() && state_.v.empty()) {
        for (const auto& p : params_) {
            state_.m.emplace_back(p.size(), 0.0);
            state_.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state_.m.size() != params_.size() || state_.v.size() != params_.size()) {
        throw DimensionError("Adam state does not match the parameter list");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (state_.m[i].size() != params_[i].size() || state_.v[i].size() != params_[i].size()) {
            throw DimensionError("Adam moment size mismatch for parameter " + std::to_string(i));
        }
    }
}

double Adam::step() {
    const double norm = global_grad_norm(params_);
    const double coef = options_.clip_norm > 0 && norm > options_.clip_norm ? options_.clip_norm / norm : 1.0;
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double bc1 = 1.0 - std::pow(options_.beta1, t);
    const double bc2 = 1.0 - std::pow(options_.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        const auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = state_.m[i];
        auto& v = state_.v[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double gk = g[k] * coef;
            m[k] = options_.beta1 * m[k] + (1.0 - options_.beta1) * gk;
            v[k] = options_.beta2 * v[k] + (1.0 - options_.beta2) * gk * gk;
            const double m_hat = m[k] / bc1;
            const double v_hat = v[k] / bc2;
            w[k] -= options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.eps);
        }
    }
    return norm;
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

}  // namespace bet
