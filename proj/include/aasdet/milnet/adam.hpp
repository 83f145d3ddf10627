#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace aas::mil {

struct AdamConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    long step = 0;
};

/// One bias-corrected Adam update over every parameter group.
template <typename T>
void adam_step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads,
               AdamState<T>& state, const AdamConfig& cfg) {
    if (params.size() != grads.size()) throw MilError("adam: parameter/gradient group count mismatch");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t g = 0; g < params.size(); ++g) {
            state.m[g].assign(params[g].size(), T(0));
            state.v[g].assign(params[g].size(), T(0));
        }
    }
    if (state.m.size() != params.size()) throw MilError("adam: state does not match parameter groups");
    for (std::size_t g = 0; g < params.size(); ++g)
        if (params[g].size() != grads[g].size() || state.m[g].size() != params[g].size())
            throw MilError("adam: shape mismatch in group " + std::to_string(g));

    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t g = 0; g < params.size(); ++g) {
        auto& m = state.m[g];
        auto& v = state.v[g];
        for (std::size_t i = 0; i < params[g].size(); ++i) {
            const double gi = static_cast<double>(grads[g][i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double update = cfg.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.epsilon);
            params[g][i] = static_cast<T>(static_cast<double>(params[g][i]) - update);
        }
    }
}

}  // namespace aas::mil
