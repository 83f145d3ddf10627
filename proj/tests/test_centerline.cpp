#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>

#include "aasdet/centerline.hpp"
#include "aasdet/synth.hpp"

using namespace aas;

namespace {

Volume3D mask_from(const std::vector<std::array<int, 3>>& voxels, Volume3D::Dims d, Vec3 spacing = {1, 1, 1}) {
    auto m = Volume3D::filled(d, spacing, {}, 0.0f);
    std::vector<float> data = m.data();
    for (const auto& v : voxels) data[m.index(v[0], v[1], v[2])] = 1.0f;
    return {d, spacing, {}, std::move(data)};
}

double max_perp_from_x_axis(const std::vector<Vec3>& pts) {
    double worst = 0.0;
    for (const auto& p : pts) worst = std::max(worst, std::hypot(p.y, p.z));
    return worst;
}

}  // namespace

TEST(Centerline, StraightChainInZOrder) {
    const auto m = mask_from({{0, 0, 2}, {0, 0, 0}, {0, 0, 1}}, {1, 1, 3});
    const auto p = order_centerline_voxels(m);
    ASSERT_EQ(p.points.size(), 3u);
    for (int k = 0; k < 3; ++k) EXPECT_EQ(p.points[k], (Vec3{0, 0, static_cast<double>(k)}));
}

TEST(Centerline, MaskErrors) {
    EXPECT_THROW(order_centerline_voxels(mask_from({}, {3, 3, 3})), CenterlineError);
    EXPECT_THROW(order_centerline_voxels(mask_from({{1, 1, 1}}, {3, 3, 3})), CenterlineError);
    // Y branch: stem along z, two arms at the top.
    EXPECT_THROW(order_centerline_voxels(mask_from({{2, 2, 0}, {2, 2, 1}, {2, 2, 2}, {1, 2, 3}, {3, 2, 3}, {0, 2, 4},
                                                    {4, 2, 4}},
                                                   {5, 5, 5})),
                 CenterlineError);
    // Two separate pieces.
    EXPECT_THROW(order_centerline_voxels(mask_from({{0, 0, 0}, {0, 0, 1}, {4, 4, 3}, {4, 4, 4}}, {5, 5, 5})),
                 CenterlineError);
    // Closed ring of 8 voxels has no endpoint.
    EXPECT_THROW(order_centerline_voxels(mask_from({{1, 0, 0}, {2, 0, 0}, {3, 1, 0}, {3, 2, 0}, {2, 3, 0}, {1, 3, 0},
                                                    {0, 2, 0}, {0, 1, 0}},
                                                   {4, 4, 1})),
                 CenterlineError);
}

TEST(Centerline, DigitizedHelixVisitsAllVoxelsInOrder) {
    // Digitize a helix into a 26-connected voxel path with no shortcuts.
    std::vector<std::array<int, 3>> chain;
    for (int k = 0; k < 100; ++k) {
        const double t = 0.15 * k;
        const std::array<int, 3> v{static_cast<int>(std::lround(6 + 5 * std::cos(t))),
                                   static_cast<int>(std::lround(6 + 5 * std::sin(t))), k / 4};
        if (chain.empty() || chain.back() != v) chain.push_back(v);
    }
    // Drop corner voxels whose neighbours already touch, so the path is simple.
    auto touches = [](const std::array<int, 3>& a, const std::array<int, 3>& b) {
        return std::abs(a[0] - b[0]) <= 1 && std::abs(a[1] - b[1]) <= 1 && std::abs(a[2] - b[2]) <= 1;
    };
    for (std::size_t i = 1; i + 1 < chain.size();) {
        if (touches(chain[i - 1], chain[i + 1])) chain.erase(chain.begin() + static_cast<std::ptrdiff_t>(i));
        else ++i;
    }
    // Sanity: the construction must be a simple 26-connected path.
    for (std::size_t i = 1; i < chain.size(); ++i)
        for (int a = 0; a < 3; ++a) ASSERT_LE(std::abs(chain[i][a] - chain[i - 1][a]), 1);
    for (std::size_t i = 0; i < chain.size(); ++i)
        for (std::size_t j = i + 2; j < chain.size(); ++j) {
            bool adj = true;
            for (int a = 0; a < 3; ++a) adj = adj && std::abs(chain[i][a] - chain[j][a]) <= 1;
            ASSERT_FALSE(adj) << "construction produced a shortcut";
        }

    std::vector<std::array<int, 3>> shuffled = chain;
    std::mt19937 rng(5);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto p = order_centerline_voxels(mask_from(shuffled, {13, 13, 26}));
    ASSERT_EQ(p.points.size(), chain.size());

    // Endpoint rule by brute force: smaller (z, y, x) of the two ends first.
    auto key = [](const std::array<int, 3>& v) { return std::make_tuple(v[2], v[1], v[0]); };
    const bool forward = key(chain.front()) < key(chain.back());
    std::set<std::tuple<double, double, double>> seen;
    double arc = 0.0;
    for (std::size_t i = 0; i < chain.size(); ++i) {
        const auto& expect = forward ? chain[i] : chain[chain.size() - 1 - i];
        EXPECT_EQ(p.points[i], (Vec3{double(expect[0]), double(expect[1]), double(expect[2])}));
        seen.insert({p.points[i].x, p.points[i].y, p.points[i].z});
        if (i) {
            const double step = distance(p.points[i], p.points[i - 1]);
            EXPECT_GT(step, 0.0);
            arc += step;
        }
    }
    EXPECT_EQ(seen.size(), chain.size());
    EXPECT_NEAR(arc, p.length(), 1e-9);
}

TEST(Centerline, MaskSpacingAndOriginApplied) {
    auto m = mask_from({{0, 0, 0}, {1, 0, 0}}, {2, 1, 1}, {0.5, 1, 1});
    const auto p = order_centerline_voxels(m);
    ASSERT_EQ(p.points.size(), 2u);
    EXPECT_EQ(p.points[1], (Vec3{0.5, 0, 0}));
}

TEST(Centerline, StraightSegmentResampling) {
    Polyline p{{{0, 0, 0}, {0, 0, 3.5}, {0, 0, 7}}};
    const auto c = smooth_and_resample(p, 0.7, 5);
    ASSERT_EQ(c.size(), 11u);
    for (std::size_t i = 0; i < c.size(); ++i) {
        EXPECT_NEAR(c.points[i].z, 0.7 * static_cast<double>(i), 1e-9);
        if (i) {
            EXPECT_NEAR(distance(c.points[i], c.points[i - 1]), 0.7, 1e-9);
        }
    }
}

TEST(Centerline, WindowOneIsPureResampling) {
    Polyline p{{{0, 0, 0}, {1, 0, 0}, {1, 2, 0}, {4, 2, 1}}};
    const auto c = smooth_and_resample(p, 0.5, 1);
    // Oracle: walk the raw polyline at multiples of 0.5.
    const double L = p.length();
    ASSERT_EQ(c.size(), static_cast<std::size_t>(std::floor(L / 0.5 + 1e-9)) + 1);
    for (std::size_t k = 0; k < c.size(); ++k) {
        double target = 0.5 * static_cast<double>(k), acc = 0.0;
        Vec3 expect = p.points.back();
        for (std::size_t s = 1; s < p.points.size(); ++s) {
            const double seg = distance(p.points[s - 1], p.points[s]);
            if (acc + seg >= target - 1e-12) {
                expect = p.points[s - 1] + (p.points[s] - p.points[s - 1]) * ((target - acc) / seg);
                break;
            }
            acc += seg;
        }
        EXPECT_NEAR(distance(c.points[k], expect), 0.0, 1e-9) << k;
    }
}

TEST(Centerline, SmoothingReducesJitter) {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> jitter(0.0, 0.3);
    int better = 0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
        Polyline noisy;
        for (int i = 0; i <= 100; ++i) noisy.points.push_back({0.7 * i, jitter(rng), jitter(rng)});
        const double raw = max_perp_from_x_axis(noisy.points);
        const auto smooth = smooth_and_resample(noisy, 0.7, 5);
        if (max_perp_from_x_axis(smooth.points) < raw) ++better;
    }
    EXPECT_EQ(better, trials);
}

TEST(Centerline, ResampleErrors) {
    EXPECT_THROW(smooth_and_resample(Polyline{{{0, 0, 0}}}, 0.7, 5), CenterlineError);
    EXPECT_THROW(smooth_and_resample(Polyline{{{0, 0, 0}, {0, 0, 1}}}, 0.0, 5), CenterlineError);
    EXPECT_THROW(smooth_and_resample(Polyline{{{0, 0, 0}, {0, 0, 1}}}, 0.7, 0), CenterlineError);
}

TEST(Frames, StraightLineHasNoTwist) {
    Centerline c;
    for (int i = 0; i < 20; ++i) c.points.push_back({1, 2, 0.7 * i});
    const auto f = compute_frames(c);
    ASSERT_EQ(f.size(), c.size());
    for (const auto& fr : f) {
        EXPECT_NEAR(distance(fr.tangent, {0, 0, 1}), 0.0, 1e-12);
        EXPECT_NEAR(distance(fr.normal, f.front().normal), 0.0, 1e-12);
        EXPECT_NEAR(distance(fr.binormal, f.front().binormal), 0.0, 1e-12);
    }
}

TEST(Frames, PlanarCircleHasConstantBinormalAxis) {
    // Circle in the plane z = 0, radius 30, step 0.5: the in-plane vector of
    // the frame stays in-plane, so the other is +-z throughout.
    Centerline c;
    const double R = 30.0;
    for (int i = 0; i < 300; ++i) {
        const double t = 0.5 * i / R;
        c.points.push_back({R * std::cos(t), R * std::sin(t), 0.0});
    }
    const auto f = compute_frames(c);
    const Vec3 plane_normal{0, 0, 1};
    const Vec3 first = std::abs(dot(f.front().normal, plane_normal)) > 0.5 ? f.front().normal : f.front().binormal;
    for (const auto& fr : f) {
        const Vec3 off_plane = std::abs(dot(fr.normal, plane_normal)) > 0.5 ? fr.normal : fr.binormal;
        EXPECT_NEAR(distance(off_plane, first), 0.0, 1e-4);
        EXPECT_NEAR(std::abs(dot(off_plane, plane_normal)), 1.0, 1e-4);
    }
}

TEST(Frames, OrthonormalRightHandedAndMinimalRotation) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        // Smooth random curve: low-frequency Fourier sum, radius of curvature >> step.
        double a[3][3], b[3][3];
        for (auto& r : a)
            for (auto& v : r) v = 10 * u(rng);
        for (auto& r : b)
            for (auto& v : r) v = u(rng);
        Polyline p;
        for (int i = 0; i <= 400; ++i) {
            const double t = i / 400.0 * 2.0;
            Vec3 q{40 * t, 0, 0};
            for (int h = 0; h < 3; ++h) {
                q.x += a[0][h] * std::sin((h + 1) * t + b[0][h]);
                q.y += a[1][h] * std::sin((h + 1) * t + b[1][h]);
                q.z += a[2][h] * std::sin((h + 1) * t + b[2][h]);
            }
            p.points.push_back(q);
        }
        const auto c = smooth_and_resample(p, 0.7, 5);
        const auto f = compute_frames(c);
        for (std::size_t i = 0; i < f.size(); ++i) {
            const auto& fr = f[i];
            EXPECT_NEAR(norm(fr.tangent), 1.0, 1e-9);
            EXPECT_NEAR(norm(fr.normal), 1.0, 1e-9);
            EXPECT_NEAR(norm(fr.binormal), 1.0, 1e-9);
            EXPECT_NEAR(dot(fr.tangent, fr.normal), 0.0, 1e-9);
            EXPECT_NEAR(dot(fr.tangent, fr.binormal), 0.0, 1e-9);
            EXPECT_NEAR(distance(cross(fr.tangent, fr.normal), fr.binormal), 0.0, 1e-9);
            // A minimal rotation turns the normal by no more than the tangent turns.
            if (i + 1 < f.size()) {
                EXPECT_GE(dot(fr.normal, f[i + 1].normal), dot(fr.tangent, f[i + 1].tangent) - 1e-3);
            }
        }
    }
}

TEST(MeanHu, ConstantVolume) {
    const auto v = Volume3D::filled({10, 10, 10}, {1, 1, 1}, {}, 300.0f);
    Centerline c{{{2, 2, 2}, {3, 4, 5}, {7, 7, 7}}, 0.7};
    EXPECT_DOUBLE_EQ(mean_centerline_hu(v, c), 300.0);
}

TEST(MeanHu, HalfAndHalf) {
    std::vector<float> d(10 * 2 * 2, 0.0f);
    Volume3D tmp = Volume3D::filled({10, 2, 2}, {1, 1, 1}, {}, 0.0f);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t i = 0; i < 5; ++i) d[tmp.index(i, j, k)] = 400.0f;
    const Volume3D v({10, 2, 2}, {1, 1, 1}, {}, d);
    Centerline c;
    for (int i = 0; i < 4; ++i) c.points.push_back({static_cast<double>(i), 0.5, 0.5});
    for (int i = 6; i < 10; ++i) c.points.push_back({static_cast<double>(i), 0.5, 0.5});
    EXPECT_DOUBLE_EQ(mean_centerline_hu(v, c), 200.0);
}

TEST(MeanHu, TubePhantomMatchesBruteForce) {
    synth::HelixCurve straight{20, 20, 0, 0, 0, 2, 60};
    const auto v = synth::make_tube_phantom(straight, 8.0, 350.0, 50.0, {41, 41, 63}, {1, 1, 1});
    const auto c = smooth_and_resample(straight.polyline(0.5), 0.7, 5);
    const double m = mean_centerline_hu(v, c);
    double brute = 0.0;
    for (const auto& p : c.points) brute += v.sample_trilinear(p);
    brute /= static_cast<double>(c.size());
    EXPECT_DOUBLE_EQ(m, brute);
    EXPECT_GE(m, 340.0);
    EXPECT_LE(m, 350.0);
}

TEST(MeanHu, EmptyCenterlineIsError) {
    const auto v = Volume3D::filled({2, 2, 2}, {1, 1, 1}, {}, 0.0f);
    EXPECT_THROW(mean_centerline_hu(v, Centerline{}), CenterlineError);
}

TEST(Polyline, FileRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "aasdet_poly.txt";
    Polyline p{{{0.1, 0.2, 0.3}, {1e-7, -4, 5.5}}};
    save_polyline(p, path);
    const auto q = load_polyline(path);
    ASSERT_EQ(q.points.size(), 2u);
    EXPECT_EQ(q.points[0], p.points[0]);
    EXPECT_EQ(q.points[1], p.points[1]);
}
