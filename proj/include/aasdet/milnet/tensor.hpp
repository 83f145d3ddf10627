#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "../common.hpp"

namespace aas::mil {

class MilError : public Error {
public:
    explicit MilError(const std::string& what) : Error("milnet", what) {}
};

/// Dense row-major array with an explicit shape.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, T value = T(0))
        : shape(std::move(s)), data(product(shape), value) {}

    static std::size_t product(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }
    [[nodiscard]] std::size_t size() const noexcept { return data.size(); }
};

/// One image, stored [row][col][channel].
template <typename T>
struct FeatureMap {
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t c = 0;
    std::vector<T> data;

    FeatureMap() = default;
    FeatureMap(std::size_t h_, std::size_t w_, std::size_t c_, T value = T(0))
        : h(h_), w(w_), c(c_), data(h_ * w_ * c_, value) {}

    [[nodiscard]] std::size_t pixels() const noexcept { return h * w; }
    [[nodiscard]] T& at(std::size_t r, std::size_t col, std::size_t ch) noexcept { return data[(r * w + col) * c + ch]; }
    [[nodiscard]] const T& at(std::size_t r, std::size_t col, std::size_t ch) const noexcept {
        return data[(r * w + col) * c + ch];
    }
};

template <typename T>
void require_finite(const std::vector<T>& v, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!std::isfinite(v[i]))
            throw MilError(std::string("non-finite value in ") + what + " at element " + std::to_string(i));
}

}  // namespace aas::mil
