#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace ynet {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Moment estimates for one parameter set. m and v are lazily shaped on the
/// first step to mirror the parameters they track.
template <typename T>
struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<Tensor<T>> first_moment;
    std::vector<Tensor<T>> second_moment;

    explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}
};

/// One bias-corrected Adam update over aligned parameter/gradient lists.
/// A null gradient entry marks a frozen parameter; it is skipped.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads, AdamState<T>& state) {
    if (params.size() != grads.size()) {
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
    }
    if (state.first_moment.empty()) {
        for (const auto* p : params) {
            state.first_moment.push_back(zeros_like(*p));
            state.second_moment.push_back(zeros_like(*p));
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw ShapeError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!grads[i]) continue;
        require_shape(params[i]->shape() == grads[i]->shape(), "adam_step: parameter/gradient shape", params[i]->shape(),
                      grads[i]->shape());
        require_shape(params[i]->shape() == state.first_moment[i].shape(), "adam_step: parameter/state shape",
                      params[i]->shape(), state.first_moment[i].shape());
    }

    const auto& c = state.config;
    const std::uint64_t t = ++state.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
    const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
    const T lr = static_cast<T>(c.learning_rate), eps = static_cast<T>(c.epsilon);

    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!grads[i]) continue;
        T* theta = params[i]->data();
        const T* g = grads[i]->data();
        T* m = state.first_moment[i].data();
        T* v = state.second_moment[i].data();
        for (std::size_t j = 0; j < params[i]->size(); ++j) {
            m[j] = b1 * m[j] + (T{1} - b1) * g[j];
            v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
            const T m_hat = m[j] * inv_bc1;
            const T v_hat = v[j] * inv_bc2;
            theta[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

}  // namespace ynet
