#pragma once

// Brute-force reference implementations used only by the tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace oracle {

/// Exhaustive pair count: P(pos > neg) + 0.5 P(pos == neg).
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

/// P = sum p_i exp(a p_i) / sum exp(a p_i), long double, no max shift.
inline double softmax_pool(const std::vector<double>& p, double alpha) {
    long double num = 0, den = 0;
    for (double v : p) {
        const long double w = std::exp(static_cast<long double>(alpha) * v);
        num += w * v;
        den += w;
    }
    return static_cast<double>(num / den);
}

/// Zero-padded 3x3 "same" convolution, HWC input, kernel [ky][kx][ci][co].
inline std::vector<double> conv3x3(const std::vector<double>& x, std::size_t h, std::size_t w, std::size_t ci,
                                   const std::vector<double>& k, const std::vector<double>& b, std::size_t co) {
    std::vector<double> y(h * w * co, 0.0);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
            for (std::size_t o = 0; o < co; ++o) {
                double acc = b[o];
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const long rr = static_cast<long>(r) + dy, cc = static_cast<long>(c) + dx;
                        if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
                        for (std::size_t i = 0; i < ci; ++i)
                            acc += x[(static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc)) * ci + i] *
                                   k[((static_cast<std::size_t>(dy + 1) * 3 + static_cast<std::size_t>(dx + 1)) * ci + i) * co + o];
                    }
                y[(r * w + c) * co + o] = acc;
            }
    return y;
}

/// Window max over non-overlapping 2x2 blocks, HWC.
inline std::vector<double> maxpool2x2(const std::vector<double>& x, std::size_t h, std::size_t w, std::size_t ch) {
    std::vector<double> y((h / 2) * (w / 2) * ch, -std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
            for (std::size_t k = 0; k < ch; ++k) {
                auto& o = y[((r / 2) * (w / 2) + c / 2) * ch + k];
                o = std::max(o, x[(r * w + c) * ch + k]);
            }
    return y;
}

}  // namespace oracle
