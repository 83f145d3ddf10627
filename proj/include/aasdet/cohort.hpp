#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "common.hpp"
#include "csv.hpp"
#include "volume.hpp"

namespace aas {

class CohortError : public Error {
public:
    explicit CohortError(const std::string& what) : Error("cohort", what) {}
};

enum class Label { Positive, Negative, Uncertain };
enum class Split { Train, Val, Test, Excluded, Unassigned };

inline const char* to_string(Label l) noexcept {
    switch (l) {
        case Label::Positive: return "positive";
        case Label::Negative: return "negative";
        case Label::Uncertain: return "uncertain";
    }
    return "?";
}

inline const char* to_string(Split s) noexcept {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
        case Split::Excluded: return "excluded";
        case Split::Unassigned: return "unassigned";
    }
    return "?";
}

inline Label parse_label(const std::string& s) {
    if (s == "positive") return Label::Positive;
    if (s == "negative") return Label::Negative;
    if (s == "uncertain") return Label::Uncertain;
    throw CohortError("unknown label '" + s + "'");
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    if (s == "excluded") return Split::Excluded;
    if (s == "unassigned" || s.empty()) return Split::Unassigned;
    throw CohortError("unknown split '" + s + "'");
}

struct CohortRecord {
    std::string scan_id;
    std::string patient_id;
    Label label = Label::Negative;
    std::optional<double> mean_hu;
    Split split = Split::Unassigned;
};

using Cohort = std::vector<CohortRecord>;

inline void validate(const Cohort& records) {
    std::set<std::string> ids;
    for (const auto& r : records) {
        if (r.scan_id.empty()) throw CohortError("empty scan_id");
        if (!ids.insert(r.scan_id).second) throw CohortError("duplicate scan_id '" + r.scan_id + "'");
        if (r.label == Label::Uncertain && r.split != Split::Excluded && r.split != Split::Unassigned)
            throw CohortError("uncertain scan '" + r.scan_id + "' assigned to a split");
    }
}

// --- manifest IO -----------------------------------------------------------

inline Cohort load_manifest(const std::filesystem::path& path) {
    const auto t = csv::read(path, "cohort");
    const auto c_scan = t.column("scan_id", "cohort");
    const auto c_pat = t.column("patient_id", "cohort");
    const auto c_label = t.column("label", "cohort");
    const auto c_hu = t.column("mean_hu", "cohort");
    const auto c_split = t.column("split", "cohort");
    Cohort out;
    for (const auto& row : t.rows) {
        CohortRecord r;
        r.scan_id = row[c_scan];
        r.patient_id = row[c_pat];
        r.label = parse_label(row[c_label]);
        if (!row[c_hu].empty()) r.mean_hu = detail::parse_double(row[c_hu], "mean_hu");
        r.split = parse_split(row[c_split]);
        out.push_back(std::move(r));
    }
    validate(out);
    return out;
}

inline void save_manifest(const Cohort& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw CohortError("cannot write '" + path.string() + "'");
    out << "scan_id,patient_id,label,mean_hu,split\n";
    for (const auto& r : records) {
        out << r.scan_id << ',' << r.patient_id << ',' << to_string(r.label) << ','
            << (r.mean_hu ? detail::format_double(*r.mean_hu) : std::string{}) << ',' << to_string(r.split) << '\n';
    }
    if (!out) throw CohortError("write failed for '" + path.string() + "'");
}

// --- histogram matching ------------------------------------------------------

struct HistogramPair {
    std::vector<double> bin_edges;
    std::vector<std::size_t> pos_counts;
    std::vector<std::size_t> neg_counts;

    [[nodiscard]] std::size_t bins() const noexcept { return pos_counts.size(); }
};

/// Equal-width bins over [lo, hi); bins are half-open [e_i, e_{i+1}) except
/// that values outside the range clamp into the edge bins (so hi lands in the
/// last bin).
inline std::size_t bin_of(double v, std::size_t bins, double lo, double hi) noexcept {
    const double pos = (v - lo) / (hi - lo) * static_cast<double>(bins);
    if (!(pos > 0.0)) return 0;
    return std::min(static_cast<std::size_t>(std::floor(pos)), bins - 1);
}

inline void check_hist_args(std::size_t bins, double lo, double hi) {
    if (bins < 2) throw CohortError("need at least 2 bins");
    if (!(lo < hi)) throw CohortError("histogram range must satisfy lo < hi");
}

inline double record_hu(const CohortRecord& r) {
    if (!r.mean_hu) throw CohortError("scan '" + r.scan_id + "' has no mean_hu");
    return *r.mean_hu;
}

inline HistogramPair build_histograms(const Cohort& records, std::size_t bins, double lo, double hi) {
    check_hist_args(bins, lo, hi);
    if (records.empty()) throw CohortError("no records");
    HistogramPair h;
    h.bin_edges.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i)
        h.bin_edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
    h.pos_counts.assign(bins, 0);
    h.neg_counts.assign(bins, 0);
    for (const auto& r : records) {
        if (r.label == Label::Uncertain || r.split == Split::Excluded) continue;
        auto& counts = r.label == Label::Positive ? h.pos_counts : h.neg_counts;
        ++counts[bin_of(record_hu(r), bins, lo, hi)];
    }
    return h;
}

/// Cosine similarity between the two density-normalised histograms.
inline double cross_correlation(const HistogramPair& h) {
    double tp = 0, tn = 0;
    for (std::size_t i = 0; i < h.bins(); ++i) {
        tp += static_cast<double>(h.pos_counts[i]);
        tn += static_cast<double>(h.neg_counts[i]);
    }
    if (tp <= 0 || tn <= 0) throw CohortError("cross correlation needs both classes non-empty");
    double pn = 0, pp = 0, nn = 0;
    for (std::size_t i = 0; i < h.bins(); ++i) {
        const double p = static_cast<double>(h.pos_counts[i]) / tp;
        const double n = static_cast<double>(h.neg_counts[i]) / tn;
        pn += p * n;
        pp += p * p;
        nn += n * n;
    }
    return std::clamp(pn / std::sqrt(pp * nn), 0.0, 1.0);
}

enum class MatchStatus { Converged, NoPositiveDiscrepancy, BudgetExhausted };

inline const char* to_string(MatchStatus s) noexcept {
    switch (s) {
        case MatchStatus::Converged: return "converged";
        case MatchStatus::NoPositiveDiscrepancy: return "no_positive_discrepancy";
        case MatchStatus::BudgetExhausted: return "budget_exhausted";
    }
    return "?";
}

struct MatchOptions {
    std::size_t bins = 32;
    double lo = 0.0;
    double hi = 800.0;
    double threshold = 0.95;
    double max_removed_fraction = 0.5;
};

struct MatchResult {
    std::vector<std::string> removed;  // in removal order
    HistogramPair initial;
    HistogramPair final;
    double initial_correlation = 0.0;
    double final_correlation = 0.0;
    MatchStatus status = MatchStatus::Converged;
};

/// Greedy equalisation: repeatedly drops one negative from the bin where the
/// negative density most exceeds the positive density (lowest bin index on
/// ties, lexicographically smallest scan_id within the bin).
inline MatchResult match_histograms(const Cohort& records, const MatchOptions& opt = {}) {
    check_hist_args(opt.bins, opt.lo, opt.hi);
    if (!(opt.threshold > 0.0 && opt.threshold <= 1.0)) throw CohortError("threshold must be in (0, 1]");
    if (!(opt.max_removed_fraction >= 0.0 && opt.max_removed_fraction <= 1.0))
        throw CohortError("max_removed_fraction must be in [0, 1]");

    std::vector<std::vector<std::string>> neg_by_bin(opt.bins);
    for (const auto& r : records) {
        if (r.label != Label::Negative || r.split == Split::Excluded) continue;
        neg_by_bin[bin_of(record_hu(r), opt.bins, opt.lo, opt.hi)].push_back(r.scan_id);
    }
    // Reverse-sorted so the smallest id pops from the back.
    for (auto& b : neg_by_bin) std::sort(b.begin(), b.end(), std::greater<>());

    MatchResult res;
    res.initial = build_histograms(records, opt.bins, opt.lo, opt.hi);
    HistogramPair h = res.initial;
    std::size_t npos = 0, nneg = 0;
    for (std::size_t i = 0; i < h.bins(); ++i) {
        npos += h.pos_counts[i];
        nneg += h.neg_counts[i];
    }
    if (npos == 0 || nneg == 0) throw CohortError("histogram matching needs both classes non-empty");
    res.initial_correlation = cross_correlation(h);
    const std::size_t initial_neg = nneg;

    for (;;) {
        if (cross_correlation(h) >= opt.threshold) {
            res.status = MatchStatus::Converged;
            break;
        }
        if (static_cast<double>(res.removed.size()) >= opt.max_removed_fraction * static_cast<double>(initial_neg) ||
            nneg <= 1) {
            res.status = MatchStatus::BudgetExhausted;
            break;
        }
        std::size_t best = 0;
        double best_gap = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < h.bins(); ++i) {
            const double gap = static_cast<double>(h.neg_counts[i]) / static_cast<double>(nneg) -
                               static_cast<double>(h.pos_counts[i]) / static_cast<double>(npos);
            if (gap > best_gap) {
                best_gap = gap;
                best = i;
            }
        }
        if (best_gap <= 0.0) {
            res.status = MatchStatus::NoPositiveDiscrepancy;
            break;
        }
        res.removed.push_back(neg_by_bin[best].back());
        neg_by_bin[best].pop_back();
        --h.neg_counts[best];
        --nneg;
    }
    res.final = h;
    res.final_correlation = cross_correlation(h);
    return res;
}

/// Marks every removed scan as excluded.
inline Cohort apply_exclusions(Cohort records, const std::vector<std::string>& removed) {
    const std::set<std::string> drop(removed.begin(), removed.end());
    for (auto& r : records)
        if (drop.count(r.scan_id)) r.split = Split::Excluded;
    return records;
}

// --- patient-level splitting ---------------------------------------------------

namespace detail {

struct PatientGroup {
    std::string patient_id;
    std::vector<std::size_t> members;
};

inline std::vector<PatientGroup> group_by_patient(const Cohort& records, Split eligible) {
    std::map<std::string, std::size_t> pos;
    std::vector<PatientGroup> groups;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].split != eligible || records[i].label == Label::Uncertain) continue;
        auto [it, inserted] = pos.emplace(records[i].patient_id, groups.size());
        if (inserted) groups.push_back({records[i].patient_id, {}});
        groups[it->second].members.push_back(i);
    }
    // Deterministic base order independent of manifest row order.
    std::sort(groups.begin(), groups.end(),
              [](const PatientGroup& a, const PatientGroup& b) { return a.patient_id < b.patient_id; });
    return groups;
}

}  // namespace detail

/// Reserves whole patients for the test split until at least `n_pos` positive
/// and `n_neg` negative scans are held out. A patient counts as positive if
/// any of their scans is positive.
inline Cohort mark_test_holdout(Cohort records, std::size_t n_pos, std::size_t n_neg, std::uint64_t seed) {
    validate(records);
    for (auto& r : records)
        if (r.label == Label::Uncertain) r.split = Split::Excluded;
    auto groups = detail::group_by_patient(records, Split::Unassigned);
    std::mt19937_64 rng(seed);
    std::shuffle(groups.begin(), groups.end(), rng);
    std::size_t got_pos = 0, got_neg = 0;
    for (const auto& g : groups) {
        const bool positive = std::any_of(g.members.begin(), g.members.end(),
                                          [&](std::size_t i) { return records[i].label == Label::Positive; });
        auto& got = positive ? got_pos : got_neg;
        const std::size_t want = positive ? n_pos : n_neg;
        if (got >= want) continue;
        for (auto i : g.members) {
            records[i].split = Split::Test;
            ++(records[i].label == Label::Positive ? got_pos : got_neg);
        }
    }
    if (got_pos < n_pos || got_neg < n_neg)
        throw CohortError("not enough patients for the requested test holdout");
    return records;
}

/// Assigns unassigned records to train/val by whole patient groups. Groups are
/// shuffled with `seed`; train receives ceil(train_frac * patients) groups.
inline Cohort patient_level_split(Cohort records, double train_frac = 0.8, std::uint64_t seed = 0) {
    validate(records);
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw CohortError("train_frac must be in (0, 1)");
    for (auto& r : records)
        if (r.label == Label::Uncertain) r.split = Split::Excluded;
    auto groups = detail::group_by_patient(records, Split::Unassigned);
    if (groups.size() < 2) throw CohortError("need at least 2 patients to split");
    std::mt19937_64 rng(seed);
    std::shuffle(groups.begin(), groups.end(), rng);
    const double target = train_frac * static_cast<double>(groups.size());
    std::size_t n_train = 0;
    while (static_cast<double>(n_train) < target - 1e-9) ++n_train;
    n_train = std::clamp<std::size_t>(n_train, 1, groups.size() - 1);
    for (std::size_t g = 0; g < groups.size(); ++g)
        for (auto i : groups[g].members) records[i].split = g < n_train ? Split::Train : Split::Val;
    return records;
}

}  // namespace aas
