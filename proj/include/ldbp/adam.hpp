#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace ldbp {

/// Bias-corrected Adam. Moment vectors track exactly the currently
/// trainable real parameters; when pruning removes parameters the caller
/// gathers the surviving moments (see train.hpp).
struct AdamState {
    double learning_rate = 7e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;

    explicit AdamState(std::size_t n_params = 0, double lr = 7e-4)
        : learning_rate(lr), m(n_params, 0.0), v(n_params, 0.0) {}
};

inline void adam_step(AdamState& state, const std::vector<double>& grads,
                      std::vector<double>& params) {
    if (grads.size() != params.size() || state.m.size() != params.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
}

}  // namespace ldbp
