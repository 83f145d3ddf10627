#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "aasdet/pipeline.hpp"

using namespace aas;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("aasdet_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

synth::SynthParams small_synth() {
    synth::SynthParams p;
    p.n_pos = 3;
    p.n_neg = 3;
    p.dims = {24, 24, 32};
    p.radius_min_mm = 4.0;
    p.radius_max_mm = 5.0;
    p.amplitude_min_mm = 1.0;
    p.amplitude_max_mm = 2.0;
    p.seed = 5;
    return p;
}

pipeline::PipelineConfig tiny_config(const fs::path& work) {
    auto c = pipeline::PipelineConfig::desk_synthetic();
    c.paths.workdir = work;
    c.synth = small_synth();
    c.synth.n_pos = 8;
    c.synth.n_neg = 8;
    c.straighten.patch_size = 8;
    c.cohort.test_pos = 2;
    c.cohort.test_neg = 2;
    c.cohort.match_options.bins = 4;
    c.train.model = {1, 1, 2, 3};
    c.train.epochs = 2;
    c.train.slice_count = 4;
    c.eval.n_boot = 100;
    c.threads = 1;
    return c;
}

}  // namespace

TEST(Synth, PlanHasRequestedLabels) {
    auto p = small_synth();
    p.n_pos = 4;
    p.n_neg = 6;
    const auto scans = synth::plan_cohort(p);
    ASSERT_EQ(scans.size(), 10u);
    std::size_t pos = 0;
    std::set<std::string> ids;
    for (const auto& s : scans) {
        pos += s.label == Label::Positive ? 1 : 0;
        ids.insert(s.scan_id);
    }
    EXPECT_EQ(pos, 4u);
    EXPECT_EQ(ids.size(), 10u);
    p.n_pos = 0;
    for (const auto& s : synth::plan_cohort(p)) EXPECT_EQ(s.label, Label::Negative);
}

TEST(Synth, MultiScanSharesPatients) {
    auto p = small_synth();
    p.n_pos = 4;
    p.n_neg = 4;
    p.multi_scan = true;
    const auto scans = synth::plan_cohort(p);
    EXPECT_EQ(scans.size(), 10u);
    std::map<std::string, std::set<Label>> labels;
    for (const auto& s : scans) labels[s.patient_id].insert(s.label);
    EXPECT_EQ(labels.size(), 8u);
    for (const auto& [pat, l] : labels) EXPECT_EQ(l.size(), 1u) << pat;
}

TEST(Synth, NoiselessFlapIntensity) {
    auto p = small_synth();
    p.noise_sigma_hu = 0.0;
    p.lumen_hu_min = p.lumen_hu_max = 300.0;
    p.flap_delta_hu = -200.0;
    p.false_lumen_delta_hu = -40.0;
    for (auto s : synth::plan_cohort(p)) {
        synth::render_scan(s, p);
        std::set<float> values(s.volume.data().begin(), s.volume.data().end());
        if (s.label == Label::Positive) {
            EXPECT_TRUE(values.count(100.0f)) << s.scan_id;
            EXPECT_TRUE(values.count(260.0f)) << s.scan_id;
            EXPECT_LE(values.size(), 4u);
        } else {
            EXPECT_EQ(values, (std::set<float>{0.0f, 300.0f})) << s.scan_id;
        }
    }
}

TEST(Synth, CenterlineStaysInTrueLumen) {
    auto p = small_synth();
    p.n_pos = 6;
    p.n_neg = 0;
    p.noise_sigma_hu = 0.0;
    p.lumen_hu_min = p.lumen_hu_max = 300.0;
    for (auto s : synth::plan_cohort(p)) {
        synth::render_scan(s, p);
        const auto line = s.curve.polyline(0.5);
        for (const auto& pt : line.points) {
            const auto v = s.volume.sample_trilinear(pt);
            EXPECT_NEAR(v, 300.0, 1e-3) << s.scan_id;
        }
    }
}

TEST(Synth, Validation) {
    auto p = small_synth();
    p.flap_width_px = 8.0;
    EXPECT_THROW(p.validate(), synth::SynthError);
    p = small_synth();
    p.amplitude_max_mm = 20.0;
    EXPECT_THROW(p.validate(), synth::SynthError);
}

TEST(Synth, DeterministicFiles) {
    const auto a = fresh_dir("synth_a"), b = fresh_dir("synth_b");
    const auto p = small_synth();
    synth::generate_synthetic_cohort(p, a, 1);
    synth::generate_synthetic_cohort(p, b, 2);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        ++files;
        const auto rel = fs::relative(e.path(), a);
        ASSERT_TRUE(fs::exists(b / rel)) << rel;
        EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    }
    EXPECT_EQ(files, 2u * 6u + 6u + 2u);
    const auto truth = synth::load_flap_truth(synth::SynthLayout{a}.truth());
    EXPECT_EQ(truth.size(), 3u);
    for (const auto& [id, span] : truth) EXPECT_LT(span.start_mm, span.end_mm);
}

TEST(Synth, HelixArcLength) {
    synth::HelixCurve c{0, 0, 3.0, 0.2, 0.0, 0.0, 50.0};
    EXPECT_NEAR(c.length(), 50.0 * std::sqrt(1 + 0.36), 1e-9);
    const auto line = c.polyline(0.5);
    EXPECT_NEAR(line.length(), c.length(), 1e-2);
}

TEST(Config, ParsesSectionsAndComments) {
    const auto dir = fresh_dir("cfg");
    const auto path = dir / "a.ini";
    std::ofstream(path) << "# header\n[train]\nlearning_rate = 0.01\nepochs = 7\ndirections = XY,XZ\n\n"
                           "; other comment\n[run]\nseed = 12\n[cohort]\nmatch = false\n";
    const auto c = pipeline::load_config(path);
    EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.01);
    EXPECT_EQ(c.train.epochs, 7u);
    EXPECT_EQ(c.seed, 12u);
    EXPECT_FALSE(c.cohort.match);
    EXPECT_EQ(c.directions, (std::vector<Direction>{Direction::XY, Direction::XZ}));
    EXPECT_EQ(c.straighten.patch_size, 114u);
}

TEST(Config, SyntheticStartsFromDeskPreset) {
    const auto dir = fresh_dir("cfg_synth");
    const auto path = dir / "s.ini";
    std::ofstream(path) << "[synth]\nenabled = true\nn_pos = 12\n";
    const auto c = pipeline::load_config(path);
    EXPECT_TRUE(c.synthetic);
    EXPECT_EQ(c.synth.n_pos, 12u);
    EXPECT_EQ(c.straighten.patch_size, pipeline::PipelineConfig::desk_synthetic().straighten.patch_size);
}

TEST(Config, Errors) {
    const auto dir = fresh_dir("cfg_err");
    std::ofstream(dir / "unknown.ini") << "[train]\nlearnin_rate = 0.1\n";
    EXPECT_THROW(pipeline::load_config(dir / "unknown.ini"), pipeline::ConfigError);
    std::ofstream(dir / "bad.ini") << "[train]\nepochs = many\n";
    EXPECT_THROW(pipeline::load_config(dir / "bad.ini"), pipeline::ConfigError);
    std::ofstream(dir / "neg.ini") << "[train]\nepochs = -3\n";
    EXPECT_THROW(pipeline::load_config(dir / "neg.ini"), pipeline::ConfigError);
    EXPECT_THROW(pipeline::load_config(dir / "missing.ini"), pipeline::ConfigError);
    pipeline::PipelineConfig c;
    c.train.learning_rate = -1;
    EXPECT_THROW(c.validate(), pipeline::ConfigError);
    c = {};
    c.cohort.train_fraction = 1.0;
    EXPECT_THROW(c.validate(), pipeline::ConfigError);
}

TEST(Config, RoundTrip) {
    const auto dir = fresh_dir("cfg_rt");
    auto c = pipeline::PipelineConfig::desk_synthetic();
    c.paths.workdir = dir / "work";
    c.train.learning_rate = 2.5e-4;
    c.directions = {Direction::YZ};
    c.seed = 99;
    c.synth.multi_scan = true;
    std::ofstream(dir / "rt.ini") << pipeline::to_ini(c);
    const auto back = pipeline::load_config(dir / "rt.ini");
    EXPECT_EQ(pipeline::to_ini(back), pipeline::to_ini(c));
    EXPECT_EQ(back.directions, c.directions);
    EXPECT_DOUBLE_EQ(back.train.learning_rate, 2.5e-4);
}

TEST(Config, SamplesLoad) {
    const fs::path samples = AASDET_SAMPLES;
    auto synthetic = pipeline::load_config(samples / "pipeline_synthetic.ini");
    auto desk = pipeline::PipelineConfig::desk_synthetic();
    desk.paths.workdir = synthetic.paths.workdir;
    EXPECT_EQ(pipeline::to_ini(synthetic), pipeline::to_ini(desk));

    auto ct = pipeline::load_config(samples / "pipeline_ct.ini");
    EXPECT_FALSE(ct.synthetic);
    EXPECT_EQ(ct.straighten.patch_size, 114u);
    EXPECT_EQ(ct.train.model.filters, 64u);
    EXPECT_NO_THROW(ct.validate());
}

TEST(Pipeline, EnsembleAndSummary) {
    const auto dir = fresh_dir("eval_sets");
    std::vector<pipeline::ScoredScan> a{{"s1", 1, 0.9}, {"s2", 0, 0.2}, {"s3", 1, 0.4}, {"s4", 0, 0.5}};
    std::vector<pipeline::ScoredScan> b{{"s4", 0, 0.1}, {"s3", 1, 0.8}, {"s2", 0, 0.3}, {"s1", 1, 0.7}};
    const auto e = pipeline::ensemble_predictions({a, b});
    EXPECT_NEAR(e[0].score, 0.8, 1e-12);
    EXPECT_NEAR(e[3].score, 0.3, 1e-12);
    pipeline::EvalConfig ec;
    ec.n_boot = 200;
    const auto rows = pipeline::evaluate_sets({{"XY", a}, {"YZ", b}}, ec, 1, 1, dir);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[2].direction, "ensemble");
    EXPECT_DOUBLE_EQ(rows[0].result.auc, 0.75);
    EXPECT_DOUBLE_EQ(rows[1].result.auc, 1.0);
    EXPECT_TRUE(fs::exists(dir / "summary.csv"));
    EXPECT_TRUE(fs::exists(dir / "roc_ensemble.csv"));
    std::vector<pipeline::ScoredScan> c{{"s1", 1, 0.9}};
    EXPECT_THROW(pipeline::ensemble_predictions({a, c}), EvalError);
}

TEST(Pipeline, PredictionsRoundTrip) {
    const auto dir = fresh_dir("preds");
    std::vector<pipeline::ScoredScan> a{{"x", 1, 0.123456789012}, {"y", 0, 1e-9}};
    pipeline::write_predictions(a, dir / "p.csv");
    const auto b = pipeline::read_predictions(dir / "p.csv");
    ASSERT_EQ(b.size(), 2u);
    EXPECT_EQ(b[0].scan_id, "x");
    EXPECT_EQ(b[1].label, 0);
    EXPECT_DOUBLE_EQ(b[0].score, a[0].score);
}

TEST(Pipeline, TinyEndToEnd) {
    const auto work = fresh_dir("tiny_pipeline");
    std::ostringstream log;
    const auto res = pipeline::run_pipeline(tiny_config(work), log);
    ASSERT_EQ(res.summary.size(), 4u);
    for (const auto& r : res.summary) {
        EXPECT_GE(r.result.auc, 0.0);
        EXPECT_LE(r.result.auc, 1.0);
        EXPECT_EQ(r.result.n_pos, 2u);
        EXPECT_EQ(r.result.n_neg, 2u);
    }
    for (const char* f : {"config.ini", "cohort/manifest_split.csv", "cohort/match.csv", "models/XY.ckpt",
                          "predictions/XZ.csv", "eval/summary.csv", "eval/localization.csv"})
        EXPECT_TRUE(fs::exists(work / f)) << f;
    std::size_t test = 0;
    for (const auto& r : load_manifest(work / "cohort/manifest_split.csv")) test += r.split == Split::Test ? 1 : 0;
    EXPECT_EQ(test, 4u);
    EXPECT_EQ(res.localization.size(), 2u);

    const auto again = fresh_dir("tiny_pipeline_again");
    const auto res2 = pipeline::run_pipeline(tiny_config(again), log);
    EXPECT_EQ(slurp(work / "eval/summary.csv"), slurp(again / "eval/summary.csv"));
}
