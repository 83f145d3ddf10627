#pragma once

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "centerline.hpp"
#include "cohort.hpp"
#include "common.hpp"
#include "eval.hpp"
#include "milnet/train.hpp"
#include "reports.hpp"
#include "straighten.hpp"
#include "synth.hpp"
#include "volume.hpp"

namespace aas::pipeline {

namespace fs = std::filesystem;

/// Malformed or out-of-range configuration; the CLI reports it as a usage error.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

struct PathsConfig {
    fs::path volumes;      // <scan_id>.mhd
    fs::path centerlines;  // <scan_id>.txt polyline, or <scan_id>.mhd mask
    fs::path reports;      // optional; <scan_id>.txt
    fs::path manifest;     // optional when reports are given
    fs::path workdir = "aasdet_work";
};

struct StraightenConfig {
    std::size_t patch_size = 114;
    double spacing_mm = 0.7;
    int smoothing_window = 5;
};

struct CohortConfig {
    bool match = true;
    MatchOptions match_options;
    std::size_t test_pos = 30;
    std::size_t test_neg = 30;
    double train_fraction = 0.8;
};

struct EvalConfig {
    std::size_t n_boot = 2000;
    double level = 0.95;
};

struct PipelineConfig {
    PathsConfig paths;
    bool synthetic = false;
    synth::SynthParams synth;
    StraightenConfig straighten;
    CohortConfig cohort;
    mil::TrainConfig train;
    std::vector<Direction> directions{Direction::XY, Direction::YZ, Direction::XZ};
    EvalConfig eval;
    std::uint64_t seed = 0;
    unsigned threads = 0;  // 0: all hardware threads

    /// Reduced setup for the synthetic benchmark: small patches at 1 mm
    /// and a narrow network of the default depth.
    static PipelineConfig desk_synthetic() {
        PipelineConfig c;
        c.synthetic = true;
        c.straighten.patch_size = 24;
        c.straighten.spacing_mm = 1.0;
        c.train.model = {4, 3, 8, 3};
        c.train.learning_rate = 1e-3;
        c.train.epochs = 30;
        c.train.patience = 10;
        c.train.slice_count = 16;
        c.cohort.match_options.bins = 16;
        c.cohort.match_options.lo = 200.0;
        c.cohort.match_options.hi = 450.0;
        c.cohort.match_options.threshold = 0.9;
        c.cohort.match_options.max_removed_fraction = 0.3;
        c.eval.n_boot = 1000;
        c.seed = 7;
        return c;
    }

    [[nodiscard]] unsigned effective_threads() const { return threads == 0 ? default_threads() : threads; }

    void validate() const {
        try {
            if (synthetic) synth.validate();
            train.validate();
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
        if (straighten.patch_size < 2) throw ConfigError("straighten.patch_size must be >= 2");
        if (!(straighten.spacing_mm > 0.0)) throw ConfigError("straighten.spacing_mm must be > 0");
        if (straighten.smoothing_window < 1) throw ConfigError("straighten.smoothing_window must be >= 1");
        if (!(cohort.train_fraction > 0.0 && cohort.train_fraction < 1.0))
            throw ConfigError("cohort.train_fraction must be in (0, 1)");
        const auto& m = cohort.match_options;
        if (m.bins < 1 || !(m.lo < m.hi)) throw ConfigError("cohort histogram range is invalid");
        if (!(m.threshold > 0.0 && m.threshold <= 1.0)) throw ConfigError("cohort.threshold must be in (0, 1]");
        if (!(m.max_removed_fraction >= 0.0 && m.max_removed_fraction <= 1.0))
            throw ConfigError("cohort.max_removed_fraction must be in [0, 1]");
        if (eval.n_boot < 100) throw ConfigError("eval.n_boot must be >= 100");
        if (!(eval.level > 0.0 && eval.level < 1.0)) throw ConfigError("eval.level must be in (0, 1)");
        if (directions.empty()) throw ConfigError("train.directions must not be empty");
    }
};

// --- config file ---------------------------------------------------------------
//
//   # comment            ; also a comment
//   [section]
//   key = value
//
// Keys are looked up as "section.key"; unknown keys are errors.

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    std::istringstream in(v);
    in >> out;
    if (!in || !(in >> std::ws).eof()) throw ConfigError("invalid value '" + v + "' for " + key);
    return out;
}

inline std::vector<Direction> parse_directions(const std::string& key, const std::string& v) {
    std::vector<Direction> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = aas::detail::trim(tok);
        if (tok.empty()) continue;
        try {
            out.push_back(parse_direction(tok));
        } catch (const Error&) {
            throw ConfigError("invalid direction '" + tok + "' for " + key);
        }
    }
    return out;
}

using Setter = std::function<void(PipelineConfig&, const std::string&)>;

inline const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto size = [&t](const std::string& k, auto member) {
            t[k] = [k, member](PipelineConfig& c, const std::string& v) {
                const auto n = parse_number<long long>(k, v);
                if (n < 0) throw ConfigError(k + " must be >= 0");
                member(c) = static_cast<std::size_t>(n);
            };
        };
        auto real = [&t](const std::string& k, auto member) {
            t[k] = [k, member](PipelineConfig& c, const std::string& v) { member(c) = parse_number<double>(k, v); };
        };
        auto flag = [&t](const std::string& k, auto member) {
            t[k] = [k, member](PipelineConfig& c, const std::string& v) {
                try {
                    member(c) = aas::detail::parse_bool(v);
                } catch (const Error&) {
                    throw ConfigError("invalid boolean '" + v + "' for " + k);
                }
            };
        };
        auto path = [&t](const std::string& k, auto member) {
            t[k] = [member](PipelineConfig& c, const std::string& v) { member(c) = fs::path(v); };
        };
        path("paths.volumes", [](PipelineConfig& c) -> fs::path& { return c.paths.volumes; });
        path("paths.centerlines", [](PipelineConfig& c) -> fs::path& { return c.paths.centerlines; });
        path("paths.reports", [](PipelineConfig& c) -> fs::path& { return c.paths.reports; });
        path("paths.manifest", [](PipelineConfig& c) -> fs::path& { return c.paths.manifest; });
        path("paths.workdir", [](PipelineConfig& c) -> fs::path& { return c.paths.workdir; });

        flag("synth.enabled", [](PipelineConfig& c) -> bool& { return c.synthetic; });
        size("synth.n_pos", [](PipelineConfig& c) -> std::size_t& { return c.synth.n_pos; });
        size("synth.n_neg", [](PipelineConfig& c) -> std::size_t& { return c.synth.n_neg; });
        size("synth.dim_x", [](PipelineConfig& c) -> std::size_t& { return c.synth.dims[0]; });
        size("synth.dim_y", [](PipelineConfig& c) -> std::size_t& { return c.synth.dims[1]; });
        size("synth.dim_z", [](PipelineConfig& c) -> std::size_t& { return c.synth.dims[2]; });
        real("synth.spacing_mm", [](PipelineConfig& c) -> double& { return c.synth.spacing_mm; });
        real("synth.radius_min_mm", [](PipelineConfig& c) -> double& { return c.synth.radius_min_mm; });
        real("synth.radius_max_mm", [](PipelineConfig& c) -> double& { return c.synth.radius_max_mm; });
        real("synth.lumen_hu_min", [](PipelineConfig& c) -> double& { return c.synth.lumen_hu_min; });
        real("synth.lumen_hu_max", [](PipelineConfig& c) -> double& { return c.synth.lumen_hu_max; });
        real("synth.background_hu", [](PipelineConfig& c) -> double& { return c.synth.background_hu; });
        real("synth.flap_width_px", [](PipelineConfig& c) -> double& { return c.synth.flap_width_px; });
        real("synth.flap_delta_hu", [](PipelineConfig& c) -> double& { return c.synth.flap_delta_hu; });
        real("synth.false_lumen_delta_hu", [](PipelineConfig& c) -> double& { return c.synth.false_lumen_delta_hu; });
        real("synth.flap_span_fraction", [](PipelineConfig& c) -> double& { return c.synth.flap_span_fraction; });
        real("synth.noise_sigma_hu", [](PipelineConfig& c) -> double& { return c.synth.noise_sigma_hu; });
        flag("synth.multi_scan", [](PipelineConfig& c) -> bool& { return c.synth.multi_scan; });

        size("straighten.patch_size", [](PipelineConfig& c) -> std::size_t& { return c.straighten.patch_size; });
        real("straighten.spacing_mm", [](PipelineConfig& c) -> double& { return c.straighten.spacing_mm; });
        t["straighten.smoothing_window"] = [](PipelineConfig& c, const std::string& v) {
            c.straighten.smoothing_window = parse_number<int>("straighten.smoothing_window", v);
        };
        size("straighten.slice_count", [](PipelineConfig& c) -> std::size_t& { return c.train.slice_count; });

        flag("cohort.match", [](PipelineConfig& c) -> bool& { return c.cohort.match; });
        size("cohort.bins", [](PipelineConfig& c) -> std::size_t& { return c.cohort.match_options.bins; });
        real("cohort.hu_min", [](PipelineConfig& c) -> double& { return c.cohort.match_options.lo; });
        real("cohort.hu_max", [](PipelineConfig& c) -> double& { return c.cohort.match_options.hi; });
        real("cohort.threshold", [](PipelineConfig& c) -> double& { return c.cohort.match_options.threshold; });
        real("cohort.max_removed_fraction",
             [](PipelineConfig& c) -> double& { return c.cohort.match_options.max_removed_fraction; });
        size("cohort.test_pos", [](PipelineConfig& c) -> std::size_t& { return c.cohort.test_pos; });
        size("cohort.test_neg", [](PipelineConfig& c) -> std::size_t& { return c.cohort.test_neg; });
        real("cohort.train_fraction", [](PipelineConfig& c) -> double& { return c.cohort.train_fraction; });

        size("train.blocks", [](PipelineConfig& c) -> std::size_t& { return c.train.model.blocks; });
        size("train.convs_per_block", [](PipelineConfig& c) -> std::size_t& { return c.train.model.convs_per_block; });
        size("train.filters", [](PipelineConfig& c) -> std::size_t& { return c.train.model.filters; });
        real("train.learning_rate", [](PipelineConfig& c) -> double& { return c.train.learning_rate; });
        size("train.batch_size", [](PipelineConfig& c) -> std::size_t& { return c.train.batch_size; });
        size("train.epochs", [](PipelineConfig& c) -> std::size_t& { return c.train.epochs; });
        size("train.patience", [](PipelineConfig& c) -> std::size_t& { return c.train.patience; });
        size("train.slice_count", [](PipelineConfig& c) -> std::size_t& { return c.train.slice_count; });
        real("train.beta1", [](PipelineConfig& c) -> double& { return c.train.beta1; });
        real("train.beta2", [](PipelineConfig& c) -> double& { return c.train.beta2; });
        real("train.adam_epsilon", [](PipelineConfig& c) -> double& { return c.train.adam_epsilon; });
        t["train.directions"] = [](PipelineConfig& c, const std::string& v) {
            c.directions = parse_directions("train.directions", v);
        };

        size("eval.n_boot", [](PipelineConfig& c) -> std::size_t& { return c.eval.n_boot; });
        real("eval.level", [](PipelineConfig& c) -> double& { return c.eval.level; });

        t["run.seed"] = [](PipelineConfig& c, const std::string& v) {
            c.seed = parse_number<std::uint64_t>("run.seed", v);
        };
        t["run.threads"] = [](PipelineConfig& c, const std::string& v) {
            c.threads = parse_number<unsigned>("run.threads", v);
        };
        return t;
    }();
    return table;
}

}  // namespace detail

/// (section.key, value) pairs in file order.
inline std::vector<std::pair<std::string, std::string>> read_ini(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigINI().from_config(in);
    } catch (const CLI::Error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& it : items) {
        if (it.name == "++" || it.name == "--") continue;
        std::string value;
        for (std::size_t i = 0; i < it.inputs.size(); ++i) value += (i ? "," : "") + it.inputs[i];
        out.emplace_back(it.fullname(), value);
    }
    return out;
}

inline void apply_setting(PipelineConfig& c, const std::string& key, const std::string& value) {
    const auto& t = detail::setters();
    const auto it = t.find(key);
    if (it == t.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(c, value);
}

inline bool config_requests_synthetic(const std::vector<std::pair<std::string, std::string>>& kv) {
    for (const auto& [k, v] : kv)
        if (k == "synth.enabled") return aas::detail::parse_bool(v);
    return false;
}

/// Starting point is the synthetic desk preset when the file (or the caller)
/// asks for synthetic data, the module defaults otherwise.
inline PipelineConfig load_config(const fs::path& path, bool force_synthetic = false) {
    const auto kv = path.empty() ? std::vector<std::pair<std::string, std::string>>{} : read_ini(path);
    PipelineConfig c = (force_synthetic || config_requests_synthetic(kv)) ? PipelineConfig::desk_synthetic()
                                                                          : PipelineConfig{};
    for (const auto& [k, v] : kv) apply_setting(c, k, v);
    if (force_synthetic) c.synthetic = true;
    return c;
}

/// Effective configuration in the file grammar; load_config() reads it back.
inline std::string to_ini(const PipelineConfig& c) {
    using aas::detail::format_double;
    std::ostringstream o;
    auto b = [](bool v) { return v ? "true" : "false"; };
    o << "[paths]\nvolumes = " << c.paths.volumes.string() << "\ncenterlines = " << c.paths.centerlines.string()
      << "\nreports = " << c.paths.reports.string() << "\nmanifest = " << c.paths.manifest.string()
      << "\nworkdir = " << c.paths.workdir.string() << "\n\n";
    const auto& s = c.synth;
    o << "[synth]\nenabled = " << b(c.synthetic) << "\nn_pos = " << s.n_pos << "\nn_neg = " << s.n_neg
      << "\ndim_x = " << s.dims[0] << "\ndim_y = " << s.dims[1] << "\ndim_z = " << s.dims[2]
      << "\nspacing_mm = " << format_double(s.spacing_mm) << "\nradius_min_mm = " << format_double(s.radius_min_mm)
      << "\nradius_max_mm = " << format_double(s.radius_max_mm) << "\nlumen_hu_min = " << format_double(s.lumen_hu_min)
      << "\nlumen_hu_max = " << format_double(s.lumen_hu_max) << "\nbackground_hu = " << format_double(s.background_hu)
      << "\nflap_width_px = " << format_double(s.flap_width_px) << "\nflap_delta_hu = " << format_double(s.flap_delta_hu)
      << "\nfalse_lumen_delta_hu = " << format_double(s.false_lumen_delta_hu)
      << "\nflap_span_fraction = " << format_double(s.flap_span_fraction)
      << "\nnoise_sigma_hu = " << format_double(s.noise_sigma_hu) << "\nmulti_scan = " << b(s.multi_scan) << "\n\n";
    o << "[straighten]\npatch_size = " << c.straighten.patch_size
      << "\nspacing_mm = " << format_double(c.straighten.spacing_mm)
      << "\nsmoothing_window = " << c.straighten.smoothing_window << "\n\n";
    const auto& m = c.cohort.match_options;
    o << "[cohort]\nmatch = " << b(c.cohort.match) << "\nbins = " << m.bins << "\nhu_min = " << format_double(m.lo)
      << "\nhu_max = " << format_double(m.hi) << "\nthreshold = " << format_double(m.threshold)
      << "\nmax_removed_fraction = " << format_double(m.max_removed_fraction) << "\ntest_pos = " << c.cohort.test_pos
      << "\ntest_neg = " << c.cohort.test_neg << "\ntrain_fraction = " << format_double(c.cohort.train_fraction)
      << "\n\n";
    const auto& t = c.train;
    std::string dirs;
    for (auto d : c.directions) dirs += (dirs.empty() ? "" : ",") + std::string(to_string(d));
    o << "[train]\nblocks = " << t.model.blocks << "\nconvs_per_block = " << t.model.convs_per_block
      << "\nfilters = " << t.model.filters << "\nlearning_rate = " << format_double(t.learning_rate)
      << "\nbatch_size = " << t.batch_size << "\nepochs = " << t.epochs << "\npatience = " << t.patience
      << "\nslice_count = " << t.slice_count << "\nbeta1 = " << format_double(t.beta1)
      << "\nbeta2 = " << format_double(t.beta2) << "\nadam_epsilon = " << format_double(t.adam_epsilon)
      << "\ndirections = " << dirs << "\n\n";
    o << "[eval]\nn_boot = " << c.eval.n_boot << "\nlevel = " << format_double(c.eval.level) << "\n\n";
    o << "[run]\nseed = " << c.seed << "\nthreads = " << c.threads << "\n";
    return o.str();
}

// --- stages ------------------------------------------------------------------------

inline fs::path straightened_path(const fs::path& dir, const std::string& scan_id) { return dir / (scan_id + ".mhd"); }

/// Polyline file if present, otherwise a binary centreline mask volume.
inline Polyline load_centerline_input(const fs::path& dir, const std::string& scan_id) {
    const auto txt = dir / (scan_id + ".txt");
    if (fs::exists(txt)) return load_polyline(txt);
    const auto mask = dir / (scan_id + ".mhd");
    if (fs::exists(mask)) return order_centerline_voxels(load_volume(mask));
    throw CenterlineError("no centerline for '" + scan_id + "' in '" + dir.string() + "'");
}

/// Straightens every non-uncertain scan into out_dir and fills in mean_hu
/// (mean raw HU along the centreline). Scans are processed in parallel, one
/// worker per scan.
inline Cohort straighten_cohort(Cohort cohort, const fs::path& volumes, const fs::path& centerlines,
                                const fs::path& out_dir, const StraightenConfig& sc, unsigned threads,
                                std::ostream* warnings = &std::cerr) {
    fs::create_directories(out_dir);
    std::vector<std::string> notes(cohort.size());
    parallel_for(cohort.size(), threads, [&](std::size_t i) {
        auto& r = cohort[i];
        if (r.label == Label::Uncertain) return;
        const auto vol = load_volume(volumes / (r.scan_id + ".mhd"));
        const auto c = smooth_and_resample(load_centerline_input(centerlines, r.scan_id), sc.spacing_mm,
                                           sc.smoothing_window);
        const auto frames = compute_frames(c);
        std::ostringstream w;
        StraightenOptions opt{sc.patch_size, sc.spacing_mm, 1, &w};
        auto sv = straighten_aorta(vol, c, frames, opt, r.scan_id);
        r.mean_hu = mean_centerline_hu(vol, c);
        save_straightened(clip_and_scale(std::move(sv)), straightened_path(out_dir, r.scan_id));
        notes[i] = w.str();
    });
    if (warnings) {
        std::size_t atypical = 0;
        std::string first;
        for (const auto& n : notes)
            if (!n.empty() && atypical++ == 0) first = n;
        if (atypical == 1) *warnings << first;
        else if (atypical > 1)
            *warnings << "straighten: warning: " << atypical << " volumes have slice counts outside ["
                      << kTypicalMinSlices << ", " << kTypicalMaxSlices << "]\n";
    }
    return cohort;
}

/// Removal log: one line per removed scan, in removal order.
inline void write_match_report(const MatchResult& m, const Cohort& cohort, const fs::path& path) {
    std::map<std::string, double> hu;
    for (const auto& r : cohort)
        if (r.mean_hu) hu[r.scan_id] = *r.mean_hu;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw CohortError("cannot write '" + path.string() + "'");
    out << "# status " << to_string(m.status) << " initial_cc " << aas::detail::format_double(m.initial_correlation)
        << " final_cc " << aas::detail::format_double(m.final_correlation) << "\n";
    out << "order,scan_id,mean_hu\n";
    for (std::size_t i = 0; i < m.removed.size(); ++i)
        out << i + 1 << ',' << m.removed[i] << ',' << aas::detail::format_double(hu[m.removed[i]]) << '\n';
}

inline Cohort assign_splits(Cohort cohort, const CohortConfig& cc, std::uint64_t seed) {
    if (cc.test_pos + cc.test_neg > 0)
        cohort = mark_test_holdout(std::move(cohort), cc.test_pos, cc.test_neg, derive_seed(seed, "holdout"));
    return patient_level_split(std::move(cohort), cc.train_fraction, derive_seed(seed, "split"));
}

struct SplitData {
    std::vector<StraightenedVolume> volumes;
    std::vector<mil::TrainExample> examples;
};

/// Loads the straightened volumes of one split, resliced for `dir`.
inline SplitData load_split(const Cohort& cohort, Split split, const fs::path& straightened, Direction dir) {
    SplitData d;
    for (const auto& r : cohort)
        if (r.split == split && r.label != Label::Uncertain)
            d.volumes.push_back(reslice(load_straightened(straightened_path(straightened, r.scan_id)), dir));
    std::size_t k = 0;
    for (const auto& r : cohort)
        if (r.split == split && r.label != Label::Uncertain)
            d.examples.push_back({&d.volumes[k++], r.label == Label::Positive ? 1 : 0, r.scan_id});
    return d;
}

struct ScoredScan {
    std::string scan_id;
    int label = 0;
    double score = 0.0;
};

inline std::uint64_t prediction_seed(std::uint64_t seed, Direction d, const std::string& scan_id) {
    return derive_seed(seed, std::string("predict-") + to_string(d), scan_id);
}

inline std::vector<ScoredScan> predict_split(const mil::MILModel<float>& m, const SplitData& data, Direction d,
                                             std::size_t slice_count, std::uint64_t seed, unsigned threads) {
    std::vector<ScoredScan> out;
    for (const auto& ex : data.examples)
        out.push_back({ex.id, ex.label,
                       mil::predict(m, *ex.volume, slice_count, prediction_seed(seed, d, ex.id), threads).score});
    return out;
}

inline void write_predictions(const std::vector<ScoredScan>& p, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw EvalError("cannot write '" + path.string() + "'");
    out << "scan_id,label,score\n";
    for (const auto& s : p) out << s.scan_id << ',' << s.label << ',' << aas::detail::format_double(s.score) << '\n';
}

inline std::vector<ScoredScan> read_predictions(const fs::path& path) {
    const auto t = csv::read(path, "eval");
    const auto ci = t.column("scan_id", "eval"), cl = t.column("label", "eval"), cs = t.column("score", "eval");
    std::vector<ScoredScan> out;
    for (const auto& r : t.rows) {
        ScoredScan s;
        s.scan_id = r[ci];
        if (r[cl] == "1" || r[cl] == "positive") s.label = 1;
        else if (r[cl] == "0" || r[cl] == "negative") s.label = 0;
        else throw EvalError("invalid label '" + r[cl] + "' in '" + path.string() + "'");
        s.score = aas::detail::parse_double(r[cs], "score");
        out.push_back(std::move(s));
    }
    return out;
}

/// Per-scan mean of the given prediction sets; all sets must cover the same scans.
inline std::vector<ScoredScan> ensemble_predictions(const std::vector<std::vector<ScoredScan>>& sets) {
    if (sets.empty()) throw EvalError("ensemble of zero prediction sets");
    std::vector<ScoredScan> out = sets.front();
    for (std::size_t k = 1; k < sets.size(); ++k) {
        std::map<std::string, const ScoredScan*> by_id;
        for (const auto& s : sets[k]) by_id[s.scan_id] = &s;
        if (by_id.size() != out.size()) throw EvalError("prediction sets cover different scans");
        for (auto& s : out) {
            const auto it = by_id.find(s.scan_id);
            if (it == by_id.end()) throw EvalError("scan '" + s.scan_id + "' missing from a prediction set");
            if (it->second->label != s.label) throw EvalError("label mismatch for '" + s.scan_id + "'");
            s.score += it->second->score;
        }
    }
    for (auto& s : out) s.score /= static_cast<double>(sets.size());
    return out;
}

/// One summary row per named set plus an "ensemble" row when there are
/// several; ROC curves go to <out_dir>/roc_<name>.csv.
inline std::vector<SummaryRow> evaluate_sets(const std::vector<std::pair<std::string, std::vector<ScoredScan>>>& sets,
                                             const EvalConfig& ec, std::uint64_t seed, unsigned threads,
                                             const fs::path& out_dir) {
    fs::create_directories(out_dir);
    auto named = sets;
    if (sets.size() > 1) {
        std::vector<std::vector<ScoredScan>> all;
        for (const auto& [n, s] : sets) all.push_back(s);
        named.emplace_back("ensemble", ensemble_predictions(all));
    }
    std::vector<SummaryRow> rows;
    for (const auto& [name, preds] : named) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (const auto& p : preds) {
            scores.push_back(p.score);
            labels.push_back(p.label);
        }
        BootstrapOptions bo;
        bo.n_boot = ec.n_boot;
        bo.level = ec.level;
        bo.seed = derive_seed(seed, "bootstrap", name);
        bo.threads = threads;
        const auto r = evaluate_scores(scores, labels, bo);
        write_curve_csv(r, out_dir / ("roc_" + name + ".csv"));
        rows.push_back({"mil", name, r});
    }
    write_summary_csv(rows, out_dir / "summary.csv");
    return rows;
}

struct LocalizationRow {
    std::string scan_id;
    double inside_mean = 0.0;
    double outside_mean = 0.0;
    [[nodiscard]] bool elevated() const noexcept { return inside_mean > outside_mean; }
};

/// Compares mean per-slice scores inside and outside the planted span.
/// Slice i of an axial (XY) straightened volume sits at arc length i * spacing.
inline std::vector<LocalizationRow> localize(const mil::MILModel<float>& m, const SplitData& xy,
                                             const std::map<std::string, synth::FlapSpan>& truth, unsigned threads) {
    std::vector<LocalizationRow> out;
    for (const auto& ex : xy.examples) {
        const auto it = truth.find(ex.id);
        if (ex.label != 1 || it == truth.end()) continue;
        const auto scores = mil::score_all_slices(m, *ex.volume, threads);
        double in = 0, outside = 0;
        std::size_t n_in = 0, n_out = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const double s_mm = static_cast<double>(i) * ex.volume->spacing_mm;
            if (s_mm >= it->second.start_mm && s_mm <= it->second.end_mm) in += scores[i], ++n_in;
            else outside += scores[i], ++n_out;
        }
        out.push_back({ex.id, n_in ? in / n_in : 0.0, n_out ? outside / n_out : 0.0});
    }
    return out;
}

inline void write_localization(const std::vector<LocalizationRow>& rows, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw EvalError("cannot write '" + path.string() + "'");
    out << "scan_id,inside_mean,outside_mean,elevated\n";
    for (const auto& r : rows)
        out << r.scan_id << ',' << aas::detail::format_double(r.inside_mean) << ','
            << aas::detail::format_double(r.outside_mean) << ',' << (r.elevated() ? 1 : 0) << '\n';
}

// --- end to end --------------------------------------------------------------------

struct PipelineResult {
    Cohort cohort;
    MatchResult match;
    std::vector<SummaryRow> summary;
    std::vector<LocalizationRow> localization;
    double seconds = 0.0;

    [[nodiscard]] double ensemble_auc() const {
        for (const auto& r : summary)
            if (r.direction == "ensemble") return r.result.auc;
        return summary.empty() ? std::numeric_limits<double>::quiet_NaN() : summary.front().result.auc;
    }
    [[nodiscard]] double localized_fraction() const {
        if (localization.empty()) return std::numeric_limits<double>::quiet_NaN();
        std::size_t n = 0;
        for (const auto& r : localization) n += r.elevated() ? 1 : 0;
        return static_cast<double>(n) / static_cast<double>(localization.size());
    }
};

/// Output layout under the workdir:
///   config.ini, synth/, straightened/, cohort/{manifest_hu,match,manifest_split}.csv,
///   models/<dir>.ckpt (+.txt, _history.csv), predictions/<dir>.csv,
///   eval/{summary,roc_*,localization}.csv
inline PipelineResult run_pipeline(PipelineConfig cfg, std::ostream& log = std::cerr) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    auto stamp = [&] {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char buf[32];
        std::snprintf(buf, sizeof buf, "[%7.1fs] ", s);
        return std::string(buf);
    };
    const unsigned threads = cfg.effective_threads();
    const fs::path work = cfg.paths.workdir;
    fs::create_directories(work);
    {
        std::ofstream(work / "config.ini", std::ios::trunc) << to_ini(cfg);
    }

    PipelineResult res;
    Cohort cohort;
    std::map<std::string, synth::FlapSpan> truth;
    if (cfg.synthetic) {
        log << stamp() << "synth: generating " << cfg.synth.n_pos << " positive + " << cfg.synth.n_neg
            << " negative scans\n";
        auto sp = cfg.synth;
        sp.seed = derive_seed(cfg.seed, "synth");
        const synth::SynthLayout layout{work / "synth"};
        cohort = synth::generate_synthetic_cohort(sp, layout.root, threads);
        cfg.paths.volumes = layout.volumes();
        cfg.paths.centerlines = layout.centerlines();
        truth = synth::load_flap_truth(layout.truth());
    } else {
        if (cfg.paths.volumes.empty()) throw ConfigError("paths.volumes is required without synth.enabled");
        if (cfg.paths.manifest.empty() && cfg.paths.reports.empty())
            throw ConfigError("paths.manifest or paths.reports is required");
        if (!cfg.paths.manifest.empty()) {
            cohort = load_manifest(cfg.paths.manifest);
        } else {
            cohort = label_report_directory(cfg.paths.reports, {});
        }
        if (cfg.paths.centerlines.empty()) throw ConfigError("paths.centerlines is required");
    }

    log << stamp() << "straighten: " << cohort.size() << " scans at " << cfg.straighten.patch_size << "x"
        << cfg.straighten.patch_size << " / " << cfg.straighten.spacing_mm << " mm\n";
    const auto straightened = work / "straightened";
    cohort = straighten_cohort(std::move(cohort), cfg.paths.volumes, cfg.paths.centerlines, straightened,
                               cfg.straighten, threads, &log);
    fs::create_directories(work / "cohort");
    save_manifest(cohort, work / "cohort" / "manifest_hu.csv");

    if (cfg.cohort.match) {
        res.match = match_histograms(cohort, cfg.cohort.match_options);
        cohort = apply_exclusions(std::move(cohort), res.match.removed);
        write_match_report(res.match, cohort, work / "cohort" / "match.csv");
        log << stamp() << "match: removed " << res.match.removed.size() << " negatives, cc "
            << res.match.initial_correlation << " -> " << res.match.final_correlation << " ("
            << to_string(res.match.status) << ")\n";
    }
    cohort = assign_splits(std::move(cohort), cfg.cohort, cfg.seed);
    save_manifest(cohort, work / "cohort" / "manifest_split.csv");
    {
        std::map<Split, std::size_t> n;
        for (const auto& r : cohort) ++n[r.split];
        log << stamp() << "split: train " << n[Split::Train] << ", val " << n[Split::Val] << ", test "
            << n[Split::Test] << ", excluded " << n[Split::Excluded] << "\n";
    }

    fs::create_directories(work / "models");
    fs::create_directories(work / "predictions");
    std::vector<std::pair<std::string, std::vector<ScoredScan>>> sets;
    for (const auto dir : cfg.directions) {
        const std::string name = to_string(dir);
        const auto train_data = load_split(cohort, Split::Train, straightened, dir);
        const auto val_data = load_split(cohort, Split::Val, straightened, dir);
        auto tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, "train", name);
        tc.threads = threads;
        log << stamp() << "train " << name << ": " << train_data.examples.size() << " train / "
            << val_data.examples.size() << " val bags\n";
        std::ostringstream epoch_log;
        auto tr = mil::train(train_data.examples, val_data.examples, tc, &epoch_log);
        log << epoch_log.str();
        log << stamp() << "train " << name << ": best epoch " << tr.best_epoch << ", val loss " << tr.best_val_loss
            << "\n";
        const auto ckpt = work / "models" / (name + ".ckpt");
        mil::save_checkpoint(tr.model, ckpt);
        mil::write_history_csv(tr.history, work / "models" / (name + "_history.csv"));

        const auto test_data = load_split(cohort, Split::Test, straightened, dir);
        auto preds = predict_split(tr.model, test_data, dir, cfg.train.slice_count, cfg.seed, threads);
        write_predictions(preds, work / "predictions" / (name + ".csv"));
        sets.emplace_back(name, std::move(preds));
        if (dir == Direction::XY && !truth.empty()) res.localization = localize(tr.model, test_data, truth, threads);
    }

    res.summary = evaluate_sets(sets, cfg.eval, cfg.seed, threads, work / "eval");
    if (!res.localization.empty()) write_localization(res.localization, work / "eval" / "localization.csv");
    for (const auto& r : res.summary)
        log << stamp() << "evaluate " << r.direction << ": AUC " << r.result.auc << " (" << r.result.ci_low << ", "
            << r.result.ci_high
            << ")\n";
    if (!res.localization.empty())
        log << stamp() << "localization: " << res.localized_fraction() * 100.0
            << "% of test positives score higher inside the flap span\n";
    res.cohort = std::move(cohort);
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace aas::pipeline
