#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "tensor.hpp"

namespace aas::mil {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, zero padding 1. Kernels are stored
// [ky][kx][in_channel][out_channel].

template <typename T>
void im2col3x3(const FeatureMap<T>& x, RowMatrix<T>& cols) {
    const std::size_t C = x.c;
    cols.setZero(static_cast<Eigen::Index>(x.pixels()), static_cast<Eigen::Index>(9 * C));
    for (std::size_t r = 0; r < x.h; ++r)
        for (std::size_t c = 0; c < x.w; ++c) {
            T* row = cols.data() + (r * x.w + c) * 9 * C;
            for (int ky = 0; ky < 3; ++ky) {
                const long rr = static_cast<long>(r) + ky - 1;
                if (rr < 0 || rr >= static_cast<long>(x.h)) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const long cc = static_cast<long>(c) + kx - 1;
                    if (cc < 0 || cc >= static_cast<long>(x.w)) continue;
                    const T* src = x.data.data() + (static_cast<std::size_t>(rr) * x.w + static_cast<std::size_t>(cc)) * C;
                    std::copy(src, src + C, row + (ky * 3 + kx) * C);
                }
            }
        }
}

template <typename T>
void col2im3x3(const RowMatrix<T>& cols, FeatureMap<T>& dx) {
    const std::size_t C = dx.c;
    for (std::size_t r = 0; r < dx.h; ++r)
        for (std::size_t c = 0; c < dx.w; ++c) {
            const T* row = cols.data() + (r * dx.w + c) * 9 * C;
            for (int ky = 0; ky < 3; ++ky) {
                const long rr = static_cast<long>(r) + ky - 1;
                if (rr < 0 || rr >= static_cast<long>(dx.h)) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const long cc = static_cast<long>(c) + kx - 1;
                    if (cc < 0 || cc >= static_cast<long>(dx.w)) continue;
                    T* dst = dx.data.data() + (static_cast<std::size_t>(rr) * dx.w + static_cast<std::size_t>(cc)) * C;
                    const T* src = row + (ky * 3 + kx) * C;
                    for (std::size_t ch = 0; ch < C; ++ch) dst[ch] += src[ch];
                }
            }
        }
}

inline void check_conv_shapes(std::size_t in_ch, std::size_t kernel_size, std::size_t bias_size, std::size_t out_ch) {
    if (out_ch == 0) throw MilError("conv2d: zero output channels");
    if (kernel_size != 9 * in_ch * out_ch)
        throw MilError("conv2d: kernel has " + std::to_string(kernel_size) + " weights, expected 3x3x" +
                       std::to_string(in_ch) + "x" + std::to_string(out_ch));
    if (bias_size != out_ch) throw MilError("conv2d: bias length does not match output channels");
}

template <typename T>
FeatureMap<T> conv2d_forward(const FeatureMap<T>& x, std::span<const T> kernel, std::span<const T> bias,
                             std::size_t out_ch) {
    check_conv_shapes(x.c, kernel.size(), bias.size(), out_ch);
    RowMatrix<T> cols;
    im2col3x3(x, cols);
    Eigen::Map<const RowMatrix<T>> K(kernel.data(), static_cast<Eigen::Index>(9 * x.c),
                                     static_cast<Eigen::Index>(out_ch));
    FeatureMap<T> y(x.h, x.w, out_ch);
    Eigen::Map<RowMatrix<T>> Y(y.data.data(), static_cast<Eigen::Index>(x.pixels()), static_cast<Eigen::Index>(out_ch));
    Y.noalias() = cols * K;
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data(), static_cast<Eigen::Index>(out_ch));
    Y.rowwise() += b;
    return y;
}

/// Gradients of one image's convolution. dkernel/dbias receive this image's
/// contribution only (overwritten, not accumulated); dx is skipped when null.
template <typename T>
void conv2d_backward(const FeatureMap<T>& x, std::span<const T> kernel, const FeatureMap<T>& dy,
                     std::span<T> dkernel, std::span<T> dbias, FeatureMap<T>* dx) {
    const std::size_t F = dy.c;
    check_conv_shapes(x.c, kernel.size(), dbias.size(), F);
    RowMatrix<T> cols;
    im2col3x3(x, cols);
    Eigen::Map<const RowMatrix<T>> DY(dy.data.data(), static_cast<Eigen::Index>(dy.pixels()),
                                      static_cast<Eigen::Index>(F));
    Eigen::Map<RowMatrix<T>> DK(dkernel.data(), static_cast<Eigen::Index>(9 * x.c), static_cast<Eigen::Index>(F));
    DK.noalias() = cols.transpose() * DY;
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> DB(dbias.data(), static_cast<Eigen::Index>(F));
    DB = DY.colwise().sum();
    if (dx) {
        Eigen::Map<const RowMatrix<T>> K(kernel.data(), static_cast<Eigen::Index>(9 * x.c), static_cast<Eigen::Index>(F));
        RowMatrix<T> dcols = DY * K.transpose();
        *dx = FeatureMap<T>(x.h, x.w, x.c);
        col2im3x3(dcols, *dx);
    }
}

/// Direct six-loop convolution, used as an independent reference.
template <typename T>
FeatureMap<T> conv2d_reference(const FeatureMap<T>& x, std::span<const T> kernel, std::span<const T> bias,
                               std::size_t out_ch) {
    check_conv_shapes(x.c, kernel.size(), bias.size(), out_ch);
    FeatureMap<T> y(x.h, x.w, out_ch);
    for (std::size_t r = 0; r < x.h; ++r)
        for (std::size_t c = 0; c < x.w; ++c)
            for (std::size_t f = 0; f < out_ch; ++f) {
                T acc = bias[f];
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx)
                        for (std::size_t ch = 0; ch < x.c; ++ch) {
                            const long rr = static_cast<long>(r) + ky - 1, cc = static_cast<long>(c) + kx - 1;
                            if (rr < 0 || cc < 0 || rr >= static_cast<long>(x.h) || cc >= static_cast<long>(x.w))
                                continue;
                            acc += x.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc), ch) *
                                   kernel[((ky * 3 + kx) * x.c + ch) * out_ch + f];
                        }
                y.at(r, c, f) = acc;
            }
    return y;
}

// ---------------------------------------------------------------------------
// Batch normalisation over every pixel of every image in the batch.

enum class BnMode { Train, Infer };

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.9;

template <typename T>
struct BnCache {
    std::vector<FeatureMap<T>> xhat;
    std::vector<T> inv_std;      // per channel
    std::vector<double> mean;    // batch statistics (train mode)
    std::vector<double> var;     // biased batch variance
    std::size_t count = 0;       // pixels per channel
};

/// Normalises in place. In train mode uses batch statistics (at least two
/// images required) and reports them through the cache; running statistics are
/// left to the caller so that evaluation passes never mutate a model.
template <typename T>
void batchnorm_forward(std::vector<FeatureMap<T>>& xs, std::span<const T> gamma, std::span<const T> beta,
                       std::span<const T> running_mean, std::span<const T> running_var, BnMode mode,
                       BnCache<T>* cache, double eps = kBnEpsilon) {
    if (xs.empty()) throw MilError("batchnorm: empty batch");
    const std::size_t C = xs.front().c;
    if (gamma.size() != C || beta.size() != C || running_mean.size() != C || running_var.size() != C)
        throw MilError("batchnorm: parameter length does not match channels");
    std::vector<double> mean(C, 0.0), var(C, 0.0);
    std::size_t count = 0;
    for (const auto& x : xs) {
        if (x.c != C) throw MilError("batchnorm: channel mismatch in batch");
        count += x.pixels();
    }
    if (mode == BnMode::Train) {
        if (xs.size() < 2) throw MilError("batchnorm: train mode needs a batch of at least 2");
        for (const auto& x : xs)
            for (std::size_t p = 0; p < x.pixels(); ++p)
                for (std::size_t ch = 0; ch < C; ++ch) mean[ch] += static_cast<double>(x.data[p * C + ch]);
        for (auto& m : mean) m /= static_cast<double>(count);
        for (const auto& x : xs)
            for (std::size_t p = 0; p < x.pixels(); ++p)
                for (std::size_t ch = 0; ch < C; ++ch) {
                    const double d = static_cast<double>(x.data[p * C + ch]) - mean[ch];
                    var[ch] += d * d;
                }
        for (auto& v : var) v /= static_cast<double>(count);
    } else {
        for (std::size_t ch = 0; ch < C; ++ch) {
            mean[ch] = static_cast<double>(running_mean[ch]);
            var[ch] = std::max(0.0, static_cast<double>(running_var[ch]));
        }
    }
    std::vector<T> inv_std(C);
    for (std::size_t ch = 0; ch < C; ++ch) inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var[ch] + eps));

    if (cache) {
        cache->xhat.resize(xs.size());
        cache->inv_std = inv_std;
        cache->mean = mean;
        cache->var = var;
        cache->count = count;
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
        auto& x = xs[i];
        if (cache) cache->xhat[i] = FeatureMap<T>(x.h, x.w, C);
        for (std::size_t p = 0; p < x.pixels(); ++p)
            for (std::size_t ch = 0; ch < C; ++ch) {
                const T xh = (x.data[p * C + ch] - static_cast<T>(mean[ch])) * inv_std[ch];
                if (cache) cache->xhat[i].data[p * C + ch] = xh;
                x.data[p * C + ch] = gamma[ch] * xh + beta[ch];
            }
    }
}

/// In-place backward: dys become dxs; dgamma/dbeta are overwritten.
template <typename T>
void batchnorm_backward(std::vector<FeatureMap<T>>& dys, const BnCache<T>& cache, std::span<const T> gamma,
                        BnMode mode, std::span<T> dgamma, std::span<T> dbeta) {
    const std::size_t C = gamma.size();
    std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
    for (std::size_t i = 0; i < dys.size(); ++i)
        for (std::size_t p = 0; p < dys[i].pixels(); ++p)
            for (std::size_t ch = 0; ch < C; ++ch) {
                const double dy = static_cast<double>(dys[i].data[p * C + ch]);
                sum_dy[ch] += dy;
                sum_dy_xhat[ch] += dy * static_cast<double>(cache.xhat[i].data[p * C + ch]);
            }
    for (std::size_t ch = 0; ch < C; ++ch) {
        dgamma[ch] = static_cast<T>(sum_dy_xhat[ch]);
        dbeta[ch] = static_cast<T>(sum_dy[ch]);
    }
    const double n = static_cast<double>(cache.count);
    for (std::size_t i = 0; i < dys.size(); ++i)
        for (std::size_t p = 0; p < dys[i].pixels(); ++p)
            for (std::size_t ch = 0; ch < C; ++ch) {
                T& d = dys[i].data[p * C + ch];
                const double g = static_cast<double>(gamma[ch]) * static_cast<double>(cache.inv_std[ch]);
                if (mode == BnMode::Infer) {
                    d = static_cast<T>(g * static_cast<double>(d));
                } else {
                    const double xh = static_cast<double>(cache.xhat[i].data[p * C + ch]);
                    d = static_cast<T>(g / n * (n * static_cast<double>(d) - sum_dy[ch] - xh * sum_dy_xhat[ch]));
                }
            }
}

/// running <- momentum * running + (1 - momentum) * batch, with the unbiased
/// batch variance.
template <typename T>
void update_running_stats(const BnCache<T>& cache, std::span<T> running_mean, std::span<T> running_var,
                          double momentum = kBnMomentum) {
    const double n = static_cast<double>(cache.count);
    const double unbias = n > 1 ? n / (n - 1) : 1.0;
    for (std::size_t ch = 0; ch < running_mean.size(); ++ch) {
        running_mean[ch] = static_cast<T>(momentum * running_mean[ch] + (1 - momentum) * cache.mean[ch]);
        running_var[ch] = static_cast<T>(momentum * running_var[ch] + (1 - momentum) * cache.var[ch] * unbias);
    }
}

// ---------------------------------------------------------------------------

template <typename T>
void relu_inplace(FeatureMap<T>& x) {
    for (auto& v : x.data) v = v > T(0) ? v : T(0);
}

/// Appends a row and/or column so both dims are even. Padding uses each
/// channel's minimum, so it can never win a max-pool window.
template <typename T>
FeatureMap<T> pad_to_even(const FeatureMap<T>& x) {
    if (x.h % 2 == 0 && x.w % 2 == 0) return x;
    std::vector<T> mins(x.c, std::numeric_limits<T>::max());
    for (std::size_t p = 0; p < x.pixels(); ++p)
        for (std::size_t ch = 0; ch < x.c; ++ch) mins[ch] = std::min(mins[ch], x.data[p * x.c + ch]);
    FeatureMap<T> y(x.h + x.h % 2, x.w + x.w % 2, x.c);
    for (std::size_t r = 0; r < y.h; ++r)
        for (std::size_t c = 0; c < y.w; ++c)
            for (std::size_t ch = 0; ch < x.c; ++ch)
                y.at(r, c, ch) = (r < x.h && c < x.w) ? x.at(r, c, ch) : mins[ch];
    return y;
}

template <typename T>
struct PoolResult {
    FeatureMap<T> out;
    std::vector<std::uint32_t> argmax;  // flat index into the pooled input's data
};

/// Non-overlapping 2x2 max pool; ties go to the first element in row-major order.
template <typename T>
PoolResult<T> maxpool2x2(const FeatureMap<T>& x) {
    if (x.h % 2 != 0 || x.w % 2 != 0) throw MilError("maxpool2x2: odd spatial dimensions");
    PoolResult<T> res{FeatureMap<T>(x.h / 2, x.w / 2, x.c), {}};
    res.argmax.resize(res.out.data.size());
    for (std::size_t r = 0; r < res.out.h; ++r)
        for (std::size_t c = 0; c < res.out.w; ++c)
            for (std::size_t ch = 0; ch < x.c; ++ch) {
                std::size_t best = ((2 * r) * x.w + 2 * c) * x.c + ch;
                for (std::size_t dr = 0; dr < 2; ++dr)
                    for (std::size_t dc = 0; dc < 2; ++dc) {
                        const std::size_t idx = ((2 * r + dr) * x.w + 2 * c + dc) * x.c + ch;
                        if (x.data[idx] > x.data[best]) best = idx;
                    }
                const std::size_t o = (r * res.out.w + c) * x.c + ch;
                res.out.data[o] = x.data[best];
                res.argmax[o] = static_cast<std::uint32_t>(best);
            }
    return res;
}

template <typename T>
FeatureMap<T> maxpool2x2_backward(const FeatureMap<T>& dy, const std::vector<std::uint32_t>& argmax,
                                  std::size_t in_h, std::size_t in_w) {
    FeatureMap<T> dx(in_h, in_w, dy.c);
    for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[argmax[o]] += dy.data[o];
    return dx;
}

}  // namespace aas::mil
