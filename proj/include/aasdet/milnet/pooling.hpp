#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace aas::mil {

template <typename T>
struct AdaptivePoolResult {
    T value{};
    std::vector<T> d_scores;  // dP/dp_i
    T d_alpha{};              // dP/dalpha
    std::vector<T> weights;   // softmax(alpha * p)
};

/// P = sum_i p_i softmax(alpha p)_i. alpha = 0 is the mean, alpha -> inf the max.
///   dP/dp_i   = w_i (1 + alpha (p_i - P))
///   dP/dalpha = sum_i w_i p_i^2 - P^2   (weighted variance, >= 0)
template <typename T>
AdaptivePoolResult<T> adaptive_pool(std::span<const T> p, T alpha) {
    if (p.empty()) throw MilError("adaptive_pool: empty score list");
    for (T v : p)
        if (!std::isfinite(v)) throw MilError("adaptive_pool: non-finite score");
    const std::size_t n = p.size();
    AdaptivePoolResult<T> r;
    r.weights.resize(n);
    T top = alpha * p[0];
    for (std::size_t i = 1; i < n; ++i) top = std::max(top, alpha * p[i]);
    T z = 0;
    for (std::size_t i = 0; i < n; ++i) {
        r.weights[i] = std::exp(alpha * p[i] - top);
        z += r.weights[i];
    }
    T P = 0, second = 0;
    for (std::size_t i = 0; i < n; ++i) {
        r.weights[i] /= z;
        P += r.weights[i] * p[i];
    }
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    P = std::clamp(P, *lo, *hi);
    for (std::size_t i = 0; i < n; ++i) second += r.weights[i] * (p[i] - P) * (p[i] - P);
    r.value = P;
    r.d_alpha = second;
    r.d_scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) r.d_scores[i] = r.weights[i] * (T(1) + alpha * (p[i] - P));
    return r;
}

template <typename T>
AdaptivePoolResult<T> adaptive_pool(const std::vector<T>& p, T alpha) {
    return adaptive_pool(std::span<const T>(p), alpha);
}

inline constexpr double kProbClamp = 1e-7;

template <typename T>
struct LossResult {
    T loss{};
    T d_prob{};
};

/// Binary cross-entropy on a probability clamped to [1e-7, 1 - 1e-7].
template <typename T>
LossResult<T> bce_loss(T prob, int label) {
    const T P = std::clamp(prob, T(kProbClamp), T(1 - kProbClamp));
    const T y = label ? T(1) : T(0);
    return {-(y * std::log(P) + (T(1) - y) * std::log(T(1) - P)), (P - y) / (P * (T(1) - P))};
}

template <typename T>
T sigmoid(T x) noexcept {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

/// Mean of per-direction volume scores.
inline double ensemble(std::span<const double> predictions) {
    if (predictions.empty()) throw MilError("ensemble: no predictions");
    return std::accumulate(predictions.begin(), predictions.end(), 0.0) / static_cast<double>(predictions.size());
}

inline double ensemble(const std::vector<double>& predictions) { return ensemble(std::span<const double>(predictions)); }

}  // namespace aas::mil
