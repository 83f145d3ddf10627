// aasdet: command-line front end for the straightening / cohort / MIL pipeline.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "aasdet/pipeline.hpp"

namespace fs = std::filesystem;
using namespace aas;
using pipeline::PipelineConfig;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;
constexpr const char* kWorkdirEnv = "AASDET_WORKDIR";

/// Flags that overwrite config values only when given on the command line.
class Overrides {
public:
    template <typename T, typename Get>
    void option(CLI::App* app, const std::string& name, const std::string& help, Get get) {
        auto value = std::make_shared<T>();
        CLI::Option* opt = app->add_option(name, *value, help);
        fns_.push_back([value, opt, get](PipelineConfig& c) {
            if (opt->count()) get(c) = *value;
        });
    }
    template <typename Get>
    void flag(CLI::App* app, const std::string& name, const std::string& help, Get get) {
        auto value = std::make_shared<bool>(false);
        CLI::Option* opt = app->add_flag(name, *value, help);
        fns_.push_back([value, opt, get](PipelineConfig& c) {
            if (opt->count()) get(c) = *value;
        });
    }
    void apply(PipelineConfig& c) const {
        for (const auto& f : fns_) f(c);
    }

private:
    std::vector<std::function<void(PipelineConfig&)>> fns_;
};

struct Common {
    std::string config;
    Overrides over;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "Config file ([section] key = value)")->check(CLI::ExistingFile);
    c.over.option<std::uint64_t>(app, "--seed", "Master seed", [](PipelineConfig& p) -> std::uint64_t& { return p.seed; });
    c.over.option<unsigned>(app, "--threads", "Worker threads (0 = all cores)",
                            [](PipelineConfig& p) -> unsigned& { return p.threads; });
}

PipelineConfig resolve(const Common& c, bool synthetic = false) {
    auto cfg = pipeline::load_config(c.config, synthetic);
    c.over.apply(cfg);
    return cfg;
}

void add_straighten_flags(CLI::App* app, Overrides& o) {
    o.option<std::size_t>(app, "--patch-size", "Cross-section size in pixels",
                          [](PipelineConfig& p) -> std::size_t& { return p.straighten.patch_size; });
    o.option<double>(app, "--spacing", "Cross-section pixel spacing and slice step (mm)",
                     [](PipelineConfig& p) -> double& { return p.straighten.spacing_mm; });
    o.option<int>(app, "--smoothing-window", "Centerline moving-average window (points)",
                  [](PipelineConfig& p) -> int& { return p.straighten.smoothing_window; });
}

void add_match_flags(CLI::App* app, Overrides& o) {
    o.option<std::size_t>(app, "--bins", "Histogram bins",
                          [](PipelineConfig& p) -> std::size_t& { return p.cohort.match_options.bins; });
    o.option<double>(app, "--hu-min", "Histogram lower edge (HU)",
                     [](PipelineConfig& p) -> double& { return p.cohort.match_options.lo; });
    o.option<double>(app, "--hu-max", "Histogram upper edge (HU)",
                     [](PipelineConfig& p) -> double& { return p.cohort.match_options.hi; });
    o.option<double>(app, "--threshold", "Target cross-correlation",
                     [](PipelineConfig& p) -> double& { return p.cohort.match_options.threshold; });
    o.option<double>(app, "--max-removed-fraction", "Largest fraction of negatives that may be removed",
                     [](PipelineConfig& p) -> double& { return p.cohort.match_options.max_removed_fraction; });
}

void add_train_flags(CLI::App* app, Overrides& o) {
    o.option<double>(app, "--lr", "Adam learning rate (0 freezes the model)",
                     [](PipelineConfig& p) -> double& { return p.train.learning_rate; });
    o.option<std::size_t>(app, "--epochs", "Maximum epochs", [](PipelineConfig& p) -> std::size_t& { return p.train.epochs; });
    o.option<std::size_t>(app, "--batch-size", "Bags per minibatch",
                          [](PipelineConfig& p) -> std::size_t& { return p.train.batch_size; });
    o.option<std::size_t>(app, "--patience", "Early-stopping patience (epochs)",
                          [](PipelineConfig& p) -> std::size_t& { return p.train.patience; });
    o.option<std::size_t>(app, "--slice-count", "Slices sampled per volume",
                          [](PipelineConfig& p) -> std::size_t& { return p.train.slice_count; });
    o.option<std::size_t>(app, "--blocks", "Conv blocks", [](PipelineConfig& p) -> std::size_t& { return p.train.model.blocks; });
    o.option<std::size_t>(app, "--convs-per-block", "Conv layers per block",
                          [](PipelineConfig& p) -> std::size_t& { return p.train.model.convs_per_block; });
    o.option<std::size_t>(app, "--filters", "Filters per conv layer",
                          [](PipelineConfig& p) -> std::size_t& { return p.train.model.filters; });
}

void add_synth_flags(CLI::App* app, Overrides& o) {
    o.option<std::size_t>(app, "--n-pos", "Positive scans", [](PipelineConfig& p) -> std::size_t& { return p.synth.n_pos; });
    o.option<std::size_t>(app, "--n-neg", "Negative scans", [](PipelineConfig& p) -> std::size_t& { return p.synth.n_neg; });
    o.option<double>(app, "--noise-sigma", "Gaussian noise sigma (HU)",
                     [](PipelineConfig& p) -> double& { return p.synth.noise_sigma_hu; });
    o.option<double>(app, "--flap-delta", "Flap intensity relative to lumen (HU)",
                     [](PipelineConfig& p) -> double& { return p.synth.flap_delta_hu; });
    o.option<double>(app, "--flap-width", "Flap thickness (voxels)",
                     [](PipelineConfig& p) -> double& { return p.synth.flap_width_px; });
    o.option<double>(app, "--flap-span-fraction", "Fraction of the centerline covered by the flap",
                     [](PipelineConfig& p) -> double& { return p.synth.flap_span_fraction; });
    o.flag(app, "--multi-scan", "Give every fourth patient a second scan",
           [](PipelineConfig& p) -> bool& { return p.synth.multi_scan; });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Aortic syndrome detection: straightening, cohort curation, MIL training and evaluation"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    // synth -------------------------------------------------------------------
    Common c_synth;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic tube-phantom cohort");
    synth->add_option("--out", synth_out, "Output directory")->required();
    add_common(synth, c_synth);
    add_synth_flags(synth, c_synth.over);

    // straighten ----------------------------------------------------------------
    Common c_str;
    std::string str_manifest, str_volumes, str_centerlines, str_out, str_manifest_out;
    auto* straighten = app.add_subcommand("straighten", "Straighten volumes along their centerlines");
    straighten->add_option("--manifest", str_manifest, "Cohort manifest")->required()->check(CLI::ExistingFile);
    straighten->add_option("--volumes", str_volumes, "Directory of <scan_id>.mhd")->required()->check(CLI::ExistingDirectory);
    straighten->add_option("--centerlines", str_centerlines, "Directory of <scan_id>.txt polylines or .mhd masks")
        ->required()
        ->check(CLI::ExistingDirectory);
    straighten->add_option("--out", str_out, "Output directory for straightened volumes")->required();
    straighten->add_option("--manifest-out", str_manifest_out, "Manifest with mean_hu filled (default <out>/manifest.csv)");
    add_common(straighten, c_str);
    add_straighten_flags(straighten, c_str.over);

    // match-cohort ---------------------------------------------------------------
    Common c_match;
    std::string match_in, match_out, match_report;
    auto* match = app.add_subcommand("match-cohort", "Exclude negatives until mean-HU histograms match");
    match->add_option("--manifest", match_in, "Manifest with mean_hu")->required()->check(CLI::ExistingFile);
    match->add_option("--out", match_out, "Output manifest (removed scans marked excluded)")->required();
    match->add_option("--report", match_report, "Removal log CSV");
    add_common(match, c_match);
    add_match_flags(match, c_match.over);

    // label-reports --------------------------------------------------------------
    std::string rep_dir, rep_out, rep_overrides, rep_keywords, rep_hits;
    bool rep_substring = false;
    auto* label = app.add_subcommand("label-reports", "Keyword-screen radiology reports into a manifest");
    label->add_option("--reports", rep_dir, "Directory of <scan_id>.txt reports")->required()->check(CLI::ExistingDirectory);
    label->add_option("--out", rep_out, "Output manifest")->required();
    label->add_option("--overrides", rep_overrides, "CSV scan_id,label from manual review")->check(CLI::ExistingFile);
    label->add_option("--keywords", rep_keywords, "Comma-separated keywords (default dissection,hematoma,ulcer)");
    label->add_flag("--substring", rep_substring, "Match keywords anywhere, not only as whole words");
    label->add_option("--hits", rep_hits, "CSV of keyword hits (scan_id,keyword,section,offset)");

    // split ----------------------------------------------------------------------
    Common c_split;
    std::string split_in, split_out;
    auto* split = app.add_subcommand("split", "Patient-level test holdout and train/val split");
    split->add_option("--manifest", split_in, "Input manifest")->required()->check(CLI::ExistingFile);
    split->add_option("--out", split_out, "Output manifest")->required();
    add_common(split, c_split);
    c_split.over.option<std::size_t>(split, "--test-pos", "Positive scans held out for test",
                                     [](PipelineConfig& p) -> std::size_t& { return p.cohort.test_pos; });
    c_split.over.option<std::size_t>(split, "--test-neg", "Negative scans held out for test",
                                     [](PipelineConfig& p) -> std::size_t& { return p.cohort.test_neg; });
    c_split.over.option<double>(split, "--train-fraction", "Fraction of remaining patients used for training",
                                [](PipelineConfig& p) -> double& { return p.cohort.train_fraction; });

    // train ----------------------------------------------------------------------
    Common c_train;
    std::string tr_manifest, tr_dir, tr_direction = "XY", tr_out, tr_history;
    bool tr_verbose = false;
    auto* train = app.add_subcommand("train", "Train a MIL model on one reslicing direction");
    train->add_option("--manifest", tr_manifest, "Manifest with train/val splits")->required()->check(CLI::ExistingFile);
    train->add_option("--straightened", tr_dir, "Directory of straightened volumes")->required()->check(CLI::ExistingDirectory);
    train->add_option("--direction", tr_direction, "XY, YZ or XZ")->check(CLI::IsMember({"XY", "YZ", "XZ"}));
    train->add_option("--out", tr_out, "Checkpoint path")->required();
    train->add_option("--history", tr_history, "Epoch history CSV (default <out>_history.csv)");
    train->add_flag("--verbose", tr_verbose, "Log every epoch");
    add_common(train, c_train);
    add_train_flags(train, c_train.over);

    // predict --------------------------------------------------------------------
    Common c_pred;
    std::string pr_ckpt, pr_manifest, pr_dir, pr_direction = "XY", pr_out, pr_split = "test", pr_slices;
    auto* predict = app.add_subcommand("predict", "Score straightened volumes with a trained model");
    predict->add_option("--checkpoint", pr_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
    predict->add_option("--manifest", pr_manifest, "Manifest with splits")->required()->check(CLI::ExistingFile);
    predict->add_option("--straightened", pr_dir, "Directory of straightened volumes")->required()->check(CLI::ExistingDirectory);
    predict->add_option("--direction", pr_direction, "XY, YZ or XZ")->check(CLI::IsMember({"XY", "YZ", "XZ"}));
    predict->add_option("--split", pr_split, "Split to score")->check(CLI::IsMember({"train", "val", "test"}));
    predict->add_option("--out", pr_out, "Predictions CSV (scan_id,label,score)")->required();
    predict->add_option("--slice-scores", pr_slices, "Also score every slice (scan_id,slice,score)");
    add_common(predict, c_pred);
    c_pred.over.option<std::size_t>(predict, "--slice-count", "Slices sampled per volume",
                                    [](PipelineConfig& p) -> std::size_t& { return p.train.slice_count; });

    // evaluate -------------------------------------------------------------------
    Common c_eval;
    std::vector<std::string> ev_preds;
    std::string ev_out;
    auto* evaluate = app.add_subcommand("evaluate", "ROC AUC with bootstrap CIs, per direction and ensembled");
    evaluate->add_option("--pred", ev_preds, "NAME=predictions.csv (repeatable)")->required();
    evaluate->add_option("--out", ev_out, "Output directory (summary.csv, roc_<name>.csv)")->required();
    add_common(evaluate, c_eval);
    c_eval.over.option<std::size_t>(evaluate, "--n-boot", "Bootstrap replicates",
                                    [](PipelineConfig& p) -> std::size_t& { return p.eval.n_boot; });
    c_eval.over.option<double>(evaluate, "--level", "Confidence level", [](PipelineConfig& p) -> double& { return p.eval.level; });

    // pipeline -------------------------------------------------------------------
    Common c_pipe;
    bool pipe_synthetic = false;
    std::string pipe_workdir;
    auto* pipe = app.add_subcommand("pipeline", "synth -> straighten -> match -> split -> train x3 -> predict -> evaluate");
    pipe->add_flag("--synthetic", pipe_synthetic, "Generate a synthetic cohort (desk preset)");
    pipe->add_option("--workdir", pipe_workdir, std::string("Output directory (env ") + kWorkdirEnv + ")");
    add_common(pipe, c_pipe);
    add_synth_flags(pipe, c_pipe.over);
    add_straighten_flags(pipe, c_pipe.over);
    add_match_flags(pipe, c_pipe.over);
    add_train_flags(pipe, c_pipe.over);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    }

    try {
        if (*synth) {
            auto cfg = resolve(c_synth, true);
            cfg.validate();
            auto sp = cfg.synth;
            sp.seed = derive_seed(cfg.seed, "synth");
            const auto cohort = synth::generate_synthetic_cohort(sp, synth_out, cfg.effective_threads());
            std::cout << "synth: wrote " << cohort.size() << " scans to " << synth_out << "\n";
        } else if (*straighten) {
            const auto cfg = resolve(c_str);
            auto cohort = pipeline::straighten_cohort(load_manifest(str_manifest), str_volumes, str_centerlines,
                                                      str_out, cfg.straighten, cfg.effective_threads());
            const fs::path mout = str_manifest_out.empty() ? fs::path(str_out) / "manifest.csv" : fs::path(str_manifest_out);
            save_manifest(cohort, mout);
            std::cout << "straighten: " << cohort.size() << " scans -> " << str_out << "\n";
        } else if (*match) {
            const auto cfg = resolve(c_match);
            auto cohort = load_manifest(match_in);
            const auto res = match_histograms(cohort, cfg.cohort.match_options);
            cohort = apply_exclusions(std::move(cohort), res.removed);
            save_manifest(cohort, match_out);
            if (!match_report.empty()) pipeline::write_match_report(res, cohort, match_report);
            std::cout << "match-cohort: removed " << res.removed.size() << " negatives, cross-correlation "
                      << res.initial_correlation << " -> " << res.final_correlation << " (" << to_string(res.status)
                      << ")\n";
        } else if (*label) {
            std::vector<std::string> keywords = default_keywords();
            if (!rep_keywords.empty()) {
                keywords.clear();
                for (auto& k : CLI::detail::split(rep_keywords, ','))
                    if (!aas::detail::trim(k).empty()) keywords.push_back(aas::detail::trim(k));
            }
            const LabelOverrides ov = rep_overrides.empty() ? LabelOverrides{} : load_overrides(rep_overrides);
            std::vector<LabeledReport> details;
            const auto cohort = label_report_directory(rep_dir, ov, keywords,
                                                       rep_substring ? MatchMode::Substring : MatchMode::WholeWord,
                                                       &details);
            save_manifest(cohort, rep_out);
            if (!rep_hits.empty()) {
                std::ofstream h(rep_hits, std::ios::trunc);
                if (!h) throw ReportError("cannot write '" + rep_hits + "'");
                h << "scan_id,keyword,section,offset\n";
                for (const auto& d : details)
                    for (const auto& hit : d.doc.keyword_hits)
                        h << d.scan_id << ',' << hit.keyword << ',' << hit.section << ',' << hit.offset << '\n';
            }
            std::size_t flagged = 0;
            for (const auto& d : details) flagged += d.doc.flagged() ? 1 : 0;
            std::cout << "label-reports: " << cohort.size() << " reports, " << flagged << " flagged\n";
        } else if (*split) {
            const auto cfg = resolve(c_split);
            const auto cohort = pipeline::assign_splits(load_manifest(split_in), cfg.cohort, cfg.seed);
            save_manifest(cohort, split_out);
            std::cout << "split: wrote " << split_out << "\n";
        } else if (*train) {
            auto cfg = resolve(c_train);
            cfg.validate();
            const auto dir = parse_direction(tr_direction);
            const auto cohort = load_manifest(tr_manifest);
            const auto tdata = pipeline::load_split(cohort, Split::Train, tr_dir, dir);
            const auto vdata = pipeline::load_split(cohort, Split::Val, tr_dir, dir);
            auto tc = cfg.train;
            tc.seed = derive_seed(cfg.seed, "train", tr_direction);
            tc.threads = cfg.effective_threads();
            const auto res = mil::train(tdata.examples, vdata.examples, tc, tr_verbose ? &std::cerr : nullptr);
            mil::save_checkpoint(res.model, tr_out);
            const fs::path hist = tr_history.empty() ? fs::path(tr_out + "_history.csv") : fs::path(tr_history);
            mil::write_history_csv(res.history, hist);
            std::cout << "train: " << res.history.size() << " epochs, best epoch " << res.best_epoch << ", val loss "
                      << res.best_val_loss << "\n";
        } else if (*predict) {
            const auto cfg = resolve(c_pred);
            const auto dir = parse_direction(pr_direction);
            const auto model = mil::load_checkpoint<float>(pr_ckpt);
            const auto data =
                pipeline::load_split(load_manifest(pr_manifest), parse_split(pr_split), pr_dir, dir);
            const auto preds = pipeline::predict_split(model, data, dir, cfg.train.slice_count, cfg.seed,
                                                       cfg.effective_threads());
            pipeline::write_predictions(preds, pr_out);
            if (!pr_slices.empty()) {
                std::ofstream o(pr_slices, std::ios::trunc);
                if (!o) throw EvalError("cannot write '" + pr_slices + "'");
                o << "scan_id,slice,score\n";
                for (const auto& ex : data.examples) {
                    const auto s = mil::score_all_slices(model, *ex.volume, cfg.effective_threads());
                    for (std::size_t i = 0; i < s.size(); ++i)
                        o << ex.id << ',' << i << ',' << aas::detail::format_double(s[i]) << '\n';
                }
            }
            std::cout << "predict: scored " << preds.size() << " scans\n";
        } else if (*evaluate) {
            const auto cfg = resolve(c_eval);
            std::vector<std::pair<std::string, std::vector<pipeline::ScoredScan>>> sets;
            for (const auto& p : ev_preds) {
                const auto eq = p.find('=');
                if (eq == std::string::npos || eq == 0 || eq + 1 == p.size()) {
                    std::cerr << "evaluate: --pred expects NAME=PATH, got '" << p << "'\n";
                    return kUsageError;
                }
                sets.emplace_back(p.substr(0, eq), pipeline::read_predictions(p.substr(eq + 1)));
            }
            const auto rows = pipeline::evaluate_sets(sets, cfg.eval, cfg.seed, cfg.effective_threads(), ev_out);
            for (const auto& r : rows)
                std::cout << r.direction << ": AUC " << r.result.auc << " (" << r.result.ci_low << ", "
                          << r.result.ci_high << ")\n";
        } else if (*pipe) {
            auto cfg = resolve(c_pipe, pipe_synthetic);
            if (const char* env = std::getenv(kWorkdirEnv); env && *env) cfg.paths.workdir = env;
            if (!pipe_workdir.empty()) cfg.paths.workdir = pipe_workdir;
            const auto res = pipeline::run_pipeline(cfg, std::cerr);
            std::cout << "pipeline: ensemble AUC " << res.ensemble_auc() << " in " << res.seconds << " s; outputs in "
                      << cfg.paths.workdir.string() << "\n";
        }
    } catch (const pipeline::ConfigError& e) {
        std::cerr << "aasdet: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "aasdet: " << e.what() << "\n";
        return kDataError;
    }
    return 0;
}
