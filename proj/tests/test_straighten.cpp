#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

#include "aasdet/straighten.hpp"
#include "aasdet/synth.hpp"

using namespace aas;

namespace {

StraightenedVolume distinct(std::size_t s, std::size_t h, std::size_t w) {
    StraightenedVolume sv;
    sv.slices = s;
    sv.rows = h;
    sv.cols = w;
    sv.data.resize(s * h * w);
    std::iota(sv.data.begin(), sv.data.end(), 1.0f);
    sv.normalized = true;
    return sv;
}

const Frame kAxial{{0, 0, 1}, {1, 0, 0}, {0, 1, 0}};

/// Fraction of slices whose four central pixels all exceed 0.9 x lumen.
double centered_fraction(const StraightenedVolume& sv, float lumen) {
    std::size_t ok = 0;
    const std::size_t a = (sv.rows - 1) / 2, b = sv.rows / 2;
    for (std::size_t s = 0; s < sv.slices; ++s) {
        const double m = (sv.at(s, a, a) + sv.at(s, a, b) + sv.at(s, b, a) + sv.at(s, b, b)) / 4.0;
        if (m > 0.9 * lumen) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(sv.slices);
}

/// Disk centroid (pixels above the half-way level) in patch coordinates.
std::pair<double, double> disk_centroid(const StraightenedVolume& sv, std::size_t s, float level) {
    double r = 0, c = 0, n = 0;
    for (std::size_t i = 0; i < sv.rows; ++i)
        for (std::size_t j = 0; j < sv.cols; ++j)
            if (sv.at(s, i, j) > level) r += i, c += j, n += 1;
    return {r / n, c / n};
}

}  // namespace

TEST(CrossSection, ConstantVolumeGivesConstantPatch) {
    const auto v = Volume3D::filled({10, 10, 10}, {1, 1, 1}, {}, 42.0f);
    const auto p = extract_cross_section(v, {4.5, 4.5, 4.5}, kAxial, 6, 0.5);
    for (float x : p) EXPECT_EQ(x, 42.0f);
}

TEST(CrossSection, AffineFieldColumns) {
    std::vector<float> d(11 * 11 * 3);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t j = 0; j < 11; ++j)
            for (std::size_t i = 0; i < 11; ++i) d[i + 11 * (j + 11 * k)] = static_cast<float>(i) - 5.0f;
    const Volume3D v({11, 11, 3}, {1, 1, 1}, {-5, -5, -1}, d);
    const auto p = extract_cross_section(v, {0, 0, 0}, kAxial, 5, 1.0);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(p[r * 5 + c], static_cast<double>(c) - 2.0, 1e-6);
}

TEST(CrossSection, OutOfBoundsIsFill) {
    const auto v = Volume3D::filled({4, 4, 4}, {1, 1, 1}, {}, 10.0f, -1024.0);
    const auto p = extract_cross_section(v, {0, 0, 0}, kAxial, 5, 1.0);
    // Centre pixel (0,0,0) is inside; the corner (-2,-2,0) is not.
    EXPECT_EQ(p[2 * 5 + 2], 10.0f);
    EXPECT_EQ(p[0], -1024.0f);
}

TEST(CrossSection, RejectsNonOrthonormalFrame) {
    const auto v = Volume3D::filled({4, 4, 4}, {1, 1, 1}, {}, 0.0f);
    EXPECT_THROW(extract_cross_section(v, {}, Frame{{0, 0, 1}, {1, 0.1, 0}, {0, 1, 0}}, 4, 1.0), StraightenError);
}

TEST(Straighten, StraightTubeDiskIsCentered) {
    synth::HelixCurve axis{30, 30, 0, 0, 0, 2, 58};
    const auto vol = synth::make_tube_phantom(axis, 15.0, 300.0, -1000.0, {61, 61, 61}, {1, 1, 1});
    const auto c = smooth_and_resample(axis.polyline(0.5), 0.7, 5);
    std::ostringstream warn;
    const auto sv = clip_and_scale(straighten_aorta(vol, c, compute_frames(c), {50, 0.7, 1, &warn}));
    const float lumen = clip_and_scale_value(300.0), half = 0.5f * (lumen + clip_and_scale_value(-1000.0));
    for (std::size_t s = 0; s < sv.slices; ++s) {
        const auto [r, col] = disk_centroid(sv, s, half);
        EXPECT_NEAR(r, 24.5, 1.0);
        EXPECT_NEAR(col, 24.5, 1.0);
    }
    EXPECT_EQ(centered_fraction(sv, lumen), 1.0);
    EXPECT_NE(warn.str().find("outside the typical range"), std::string::npos);
}

TEST(Straighten, HelicalTubeDiskIsCentered) {
    synth::HelixCurve helix{40, 40, 15, 2 * std::numbers::pi / 120, 0, 3, 118};
    const auto vol = synth::make_tube_phantom(helix, 10.0, 300.0, -1000.0, {81, 81, 122}, {1, 1, 1});
    const auto c = smooth_and_resample(helix.polyline(0.5), 0.7, 5);
    const auto sv = clip_and_scale(straighten_aorta(vol, c, compute_frames(c), {40, 0.7, 2, nullptr}));
    EXPECT_GE(centered_fraction(sv, clip_and_scale_value(300.0)), 0.99);
}

TEST(Straighten, SliceCountPassThroughWithoutWarning) {
    const auto vol = Volume3D::filled({10, 10, 200}, {1, 1, 1}, {}, 0.0f);
    Centerline c;
    for (int i = 0; i < 200; ++i) c.points.push_back({5, 5, static_cast<double>(i)});
    std::ostringstream warn;
    const auto sv = straighten_aorta(vol, c, compute_frames(c), {4, 0.7, 1, &warn});
    EXPECT_EQ(sv.slices, 200u);
    EXPECT_TRUE(warn.str().empty());
}

TEST(Straighten, FrameCountMismatchIsError) {
    const auto vol = Volume3D::filled({4, 4, 4}, {1, 1, 1}, {}, 0.0f);
    Centerline c{{{1, 1, 1}, {1, 1, 2}}, 1.0};
    EXPECT_THROW(straighten_aorta(vol, c, FrameField{}, {}), StraightenError);
}

TEST(Normalize, ClipEndpoints) {
    EXPECT_EQ(clip_and_scale_value(-1024), 0.0f);
    EXPECT_EQ(clip_and_scale_value(2048), 1.0f);
    EXPECT_EQ(clip_and_scale_value(512), 0.5f);
    EXPECT_EQ(clip_and_scale_value(-3000), 0.0f);
    EXPECT_EQ(clip_and_scale_value(5000), 1.0f);
}

TEST(Normalize, RejectsDoubleNormalization) {
    auto sv = distinct(2, 2, 2);
    sv.normalized = false;
    auto once = clip_and_scale(sv);
    EXPECT_TRUE(once.normalized);
    EXPECT_THROW(clip_and_scale(once), StraightenError);
}

TEST(Sampling, ExhaustiveDrawWhenCountEqualsSlices) {
    const auto idx = draw_slice_indices(50, 50, 9);
    std::vector<std::size_t> expect(50);
    std::iota(expect.begin(), expect.end(), std::size_t{0});
    EXPECT_EQ(idx, expect);
}

TEST(Sampling, DistinctSortedAndEdgeClamped) {
    const auto sv = distinct(120, 3, 4);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto s = sample_slices(sv, 50, seed);
        ASSERT_EQ(s.count(), 50u);
        for (std::size_t i = 1; i < s.indices.size(); ++i) EXPECT_LT(s.indices[i - 1], s.indices[i]);
    }
    const auto s = gather_slices(sv, {0, 119});
    for (std::size_t p = 0; p < 12; ++p) {
        EXPECT_EQ(s.slice(0)[p * 3 + 0], s.slice(0)[p * 3 + 1]);  // i-1 clamps to 0
        EXPECT_EQ(s.slice(0)[p * 3 + 2], sv.data[1 * 12 + p]);
        EXPECT_EQ(s.slice(1)[p * 3 + 2], s.slice(1)[p * 3 + 1]);  // i+1 clamps to last
        EXPECT_EQ(s.slice(1)[p * 3 + 0], sv.data[118 * 12 + p]);
    }
}

TEST(Sampling, ShortVolumePadsWithRepeats) {
    const auto idx = draw_slice_indices(10, 50, 4);
    ASSERT_EQ(idx.size(), 50u);
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    const std::set<std::size_t> unique(idx.begin(), idx.end());
    EXPECT_EQ(unique.size(), 10u);
}

TEST(Sampling, DeterministicPerSeed) {
    EXPECT_EQ(draw_slice_indices(1000, 50, 77), draw_slice_indices(1000, 50, 77));
    int different = 0;
    for (std::uint64_t s = 0; s < 100; ++s) different += draw_slice_indices(1000, 50, s) != draw_slice_indices(1000, 50, s + 1000);
    EXPECT_EQ(different, 100);
}

TEST(Sampling, RequiresNormalizedVolume) {
    auto sv = distinct(5, 2, 2);
    sv.normalized = false;
    EXPECT_THROW(sample_slices(sv, 3, 1), StraightenError);
}

TEST(Reslice, YzMappingShapeAndMultiset) {
    const auto sv = distinct(2, 3, 4);
    const auto yz = reslice(sv, Direction::YZ);
    EXPECT_EQ(yz.slices, 4u);
    EXPECT_EQ(yz.rows, 2u);
    EXPECT_EQ(yz.cols, 3u);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t h = 0; h < 3; ++h)
            for (std::size_t w = 0; w < 4; ++w) EXPECT_EQ(yz.at(w, s, h), sv.at(s, h, w));
    auto a = sv.data, b = yz.data;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);

    const auto xz = reslice(sv, Direction::XZ);
    EXPECT_EQ(xz.slices, 3u);
    EXPECT_EQ(xz.rows, 4u);
    EXPECT_EQ(xz.cols, 2u);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t h = 0; h < 3; ++h)
            for (std::size_t w = 0; w < 4; ++w) EXPECT_EQ(xz.at(h, w, s), sv.at(s, h, w));
}

TEST(Reslice, XyIsIdentityAndInversesRoundTrip) {
    const auto sv = distinct(5, 3, 4);
    EXPECT_EQ(reslice(sv, Direction::XY).data, sv.data);
    for (auto d : {Direction::XY, Direction::YZ, Direction::XZ}) {
        const auto back = reslice_inverse(reslice(sv, d), d);
        EXPECT_EQ(back.data, sv.data);
        EXPECT_EQ(back.slices, sv.slices);
        EXPECT_EQ(back.rows, sv.rows);
        EXPECT_EQ(back.cols, sv.cols);
    }
}

TEST(Reslice, DirectionNames) {
    EXPECT_EQ(parse_direction("YZ"), Direction::YZ);
    EXPECT_STREQ(to_string(Direction::XZ), "XZ");
    EXPECT_THROW(parse_direction("ZZ"), StraightenError);
}

TEST(StraightenedIo, RoundTrip) {
    auto sv = distinct(4, 3, 2);
    for (auto& v : sv.data) v /= 24.0f;
    sv.source_id = "scan0007";
    sv.spacing_mm = 0.7;
    const auto path = std::filesystem::temp_directory_path() / "aasdet_sv.mhd";
    save_straightened(sv, path);
    const auto back = load_straightened(path);
    EXPECT_EQ(back.slices, 4u);
    EXPECT_EQ(back.rows, 3u);
    EXPECT_EQ(back.cols, 2u);
    EXPECT_EQ(back.data, sv.data);
    EXPECT_EQ(back.source_id, "scan0007");
    EXPECT_TRUE(back.normalized);
    EXPECT_EQ(back.spacing_mm, 0.7);
}
