#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "activegan/error.hpp"
#include "activegan/tensor.hpp"

namespace activegan {

struct AdamOptions {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Per-parameter moment estimates for one parameter set. Moments are sized on
// the first update.
struct AdamState {
    AdamOptions options;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::uint64_t step = 0;

    AdamState() = default;
    explicit AdamState(AdamOptions opts) : options(opts) {}
};

// One descent step with bias correction:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
inline void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads) {
    if (!(state.options.learning_rate > 0.0)) throw ContractError("Adam learning rate must be positive");
    if (params.size() != grads.size()) {
        throw ShapeError("Adam got " + std::to_string(params.size()) + " parameters and " +
                         std::to_string(grads.size()) + " gradients");
    }
    if (state.first_moment.empty()) {
        for (const Tensor* p : params) {
            state.first_moment.emplace_back(p->shape(), 0.0);
            state.second_moment.emplace_back(p->shape(), 0.0);
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw ShapeError("Adam state tracks " + std::to_string(state.first_moment.size()) + " tensors, got " +
                         std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != grads[i].shape() || state.first_moment[i].shape() != grads[i].shape()) {
            throw ShapeError("Adam shape mismatch at tensor " + std::to_string(i) + ": parameter " +
                             shape_string(params[i]->shape()) + ", gradient " + shape_string(grads[i].shape()));
        }
        if (!grads[i].all_finite()) throw NumericError("Adam received a non-finite gradient at tensor " + std::to_string(i));
    }

    const auto& o = state.options;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(o.beta1, t);
    const double c2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        Tensor& m = state.first_moment[i];
        Tensor& v = state.second_moment[i];
        const Tensor& g = grads[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g[k];
            v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g[k] * g[k];
            const double m_hat = m[k] / c1;
            const double v_hat = v[k] / c2;
            p[k] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
        }
    }
}

}  // namespace activegan
