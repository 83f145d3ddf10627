#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "common.hpp"
#include "volume.hpp"

namespace aas {

class EvalError : public Error {
public:
    explicit EvalError(const std::string& what) : Error("eval", what) {}
};

struct RocPoint {
    double threshold = 0.0;  // +inf for the (0,0) origin
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocResult {
    double auc = 0.0;
    double ci_low = std::numeric_limits<double>::quiet_NaN();
    double ci_high = std::numeric_limits<double>::quiet_NaN();
    std::vector<RocPoint> curve;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;

    /// Percentile intervals can miss the point estimate on tiny samples.
    [[nodiscard]] bool ci_brackets_auc() const noexcept { return ci_low <= auc && auc <= ci_high; }
};

namespace detail {

struct Counts {
    std::size_t pos = 0;
    std::size_t neg = 0;
};

inline Counts count_labels(const std::vector<int>& labels) {
    Counts c;
    for (int y : labels) {
        if (y == 1) ++c.pos;
        else if (y == 0) ++c.neg;
        else throw EvalError("labels must be 0 or 1");
    }
    return c;
}

/// AUC from (score, label) pairs sorted ascending by score. Ties in score get
/// half credit; the count of correctly ordered pairs is accumulated exactly in
/// integers.
inline double auc_sorted(const std::vector<std::pair<double, int>>& sorted, std::size_t npos, std::size_t nneg) {
    unsigned long long twice_u = 0;
    std::size_t neg_below = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i, gp = 0, gn = 0;
        while (j < sorted.size() && sorted[j].first == sorted[i].first) {
            (sorted[j].second == 1 ? gp : gn)++;
            ++j;
        }
        twice_u += 2ULL * gp * neg_below + static_cast<unsigned long long>(gp) * gn;
        neg_below += gn;
        i = j;
    }
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(npos) * static_cast<double>(nneg));
}

}  // namespace detail

/// Mann-Whitney AUC plus the ROC curve swept over every distinct threshold
/// (predict positive when score >= threshold).
inline RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw EvalError("scores and labels differ in length");
    const auto counts = detail::count_labels(labels);
    if (counts.pos == 0 || counts.neg == 0) throw EvalError("ROC needs at least one positive and one negative");
    for (double s : scores)
        if (!std::isfinite(s)) throw EvalError("non-finite score");

    std::vector<std::pair<double, int>> v(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) v[i] = {scores[i], labels[i]};
    std::sort(v.begin(), v.end());

    RocResult r;
    r.n_pos = counts.pos;
    r.n_neg = counts.neg;
    r.auc = detail::auc_sorted(v, counts.pos, counts.neg);

    r.curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = v.size(); i > 0;) {
        const double thr = v[i - 1].first;
        while (i > 0 && v[i - 1].first == thr) {
            (v[i - 1].second == 1 ? tp : fp)++;
            --i;
        }
        r.curve.push_back({thr, static_cast<double>(fp) / static_cast<double>(counts.neg),
                           static_cast<double>(tp) / static_cast<double>(counts.pos)});
    }
    return r;
}

/// Trapezoidal area under a ROC curve.
inline double trapezoid_auc(const std::vector<RocPoint>& curve) {
    double a = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i)
        a += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) * 0.5;
    return a;
}

/// Linear-interpolation percentile of sorted data, q in [0, 1].
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw EvalError("quantile of empty data");
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct BootstrapOptions {
    std::size_t n_boot = 2000;
    double level = 0.95;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

/// Resampled AUCs. Positives and negatives are resampled separately with
/// replacement; replicate b uses its own generator seeded from (seed, b).
inline std::vector<double> bootstrap_aucs(const std::vector<double>& scores, const std::vector<int>& labels,
                                          const BootstrapOptions& opt) {
    if (opt.n_boot < 100) throw EvalError("n_boot must be at least 100");
    if (scores.size() != labels.size()) throw EvalError("scores and labels differ in length");
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(scores[i]);
    (void)detail::count_labels(labels);
    if (pos.empty() || neg.empty()) throw EvalError("bootstrap needs at least one positive and one negative");

    std::vector<double> aucs(opt.n_boot);
    parallel_for(opt.n_boot, opt.threads, [&](std::size_t b) {
        std::mt19937_64 rng(derive_seed(opt.seed, static_cast<std::uint64_t>(b)));
        std::uniform_int_distribution<std::size_t> pick_pos(0, pos.size() - 1), pick_neg(0, neg.size() - 1);
        std::vector<std::pair<double, int>> v;
        v.reserve(pos.size() + neg.size());
        for (std::size_t i = 0; i < pos.size(); ++i) v.emplace_back(pos[pick_pos(rng)], 1);
        for (std::size_t i = 0; i < neg.size(); ++i) v.emplace_back(neg[pick_neg(rng)], 0);
        std::sort(v.begin(), v.end());
        aucs[b] = detail::auc_sorted(v, pos.size(), neg.size());
    });
    return aucs;
}

inline std::pair<double, double> bootstrap_ci(const std::vector<double>& scores, const std::vector<int>& labels,
                                              const BootstrapOptions& opt = {}) {
    if (!(opt.level > 0.0 && opt.level < 1.0)) throw EvalError("level must be in (0, 1)");
    auto aucs = bootstrap_aucs(scores, labels, opt);
    std::sort(aucs.begin(), aucs.end());
    const double tail = (1.0 - opt.level) / 2.0;
    return {quantile_sorted(aucs, tail), quantile_sorted(aucs, 1.0 - tail)};
}

inline RocResult evaluate_scores(const std::vector<double>& scores, const std::vector<int>& labels,
                                 const BootstrapOptions& opt = {}) {
    auto r = roc_auc(scores, labels);
    std::tie(r.ci_low, r.ci_high) = bootstrap_ci(scores, labels, opt);
    return r;
}

inline void write_curve_csv(const RocResult& r, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw EvalError("cannot write '" + path.string() + "'");
    out << "threshold,fpr,tpr\n";
    for (const auto& p : r.curve)
        out << (std::isinf(p.threshold) ? std::string("inf") : detail::format_double(p.threshold)) << ','
            << detail::format_double(p.fpr) << ',' << detail::format_double(p.tpr) << '\n';
}

struct SummaryRow {
    std::string model;
    std::string direction;
    RocResult result;
};

inline void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw EvalError("cannot write '" + path.string() + "'");
    out << "model,direction,auc,ci_low,ci_high,n_pos,n_neg\n";
    for (const auto& r : rows)
        out << r.model << ',' << r.direction << ',' << detail::format_double(r.result.auc) << ','
            << detail::format_double(r.result.ci_low) << ',' << detail::format_double(r.result.ci_high) << ','
            << r.result.n_pos << ',' << r.result.n_neg << '\n';
}

}  // namespace aas
