#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "centerline.hpp"
#include "cohort.hpp"
#include "common.hpp"
#include "csv.hpp"
#include "volume.hpp"

namespace aas::synth {

class SynthError : public Error {
public:
    explicit SynthError(const std::string& what) : Error("synth", what) {}
};

/// Helix around an axis parallel to z: c(z) = axis + a (cos(wz + phi), sin(wz + phi), 0) + (0, 0, z).
struct HelixCurve {
    double axis_x = 0.0;
    double axis_y = 0.0;
    double amplitude = 0.0;
    double omega = 0.0;
    double phase = 0.0;
    double z_begin = 0.0;
    double z_end = 1.0;

    [[nodiscard]] Vec3 at(double z) const noexcept {
        const double t = omega * z + phase;
        return {axis_x + amplitude * std::cos(t), axis_y + amplitude * std::sin(t), z};
    }
    [[nodiscard]] Vec3 derivative(double z) const noexcept {
        const double t = omega * z + phase;
        return {-amplitude * omega * std::sin(t), amplitude * omega * std::cos(t), 1.0};
    }
    /// |dc/dz|; the speed is constant along a helix.
    [[nodiscard]] double speed() const noexcept { return std::sqrt(1.0 + amplitude * amplitude * omega * omega); }
    [[nodiscard]] double arc_length(double z) const noexcept { return (z - z_begin) * speed(); }
    [[nodiscard]] double length() const noexcept { return arc_length(z_end); }

    [[nodiscard]] Polyline polyline(double step_mm = 0.5) const {
        Polyline p;
        const double dz = step_mm / speed();
        const auto n = static_cast<std::size_t>(std::floor((z_end - z_begin) / dz));
        for (std::size_t i = 0; i <= n; ++i) p.points.push_back(at(z_begin + dz * static_cast<double>(i)));
        if ((z_end - z_begin) - dz * static_cast<double>(n) > 1e-9) p.points.push_back(at(z_end));
        return p;
    }
};

struct NearestPoint {
    double z = 0.0;
    double distance = 0.0;
    Vec3 offset;  // p - c(z)
};

/// Closest curve point to p among samples with |z' - p.z| <= reach, refined by
/// a local golden-section search. Returns distance = +inf if the window misses
/// the curve's extent.
inline NearestPoint nearest_on_curve(const HelixCurve& c, const Vec3& p, double reach, double sample = 0.25) {
    const double lo = std::max(c.z_begin, p.z - reach), hi = std::min(c.z_end, p.z + reach);
    NearestPoint best{0.0, std::numeric_limits<double>::infinity(), {}};
    if (lo > hi) return best;
    auto dist2 = [&](double z) {
        const Vec3 d = p - c.at(z);
        return dot(d, d);
    };
    double bz = lo, bd = dist2(lo);
    const auto steps = static_cast<int>(std::ceil((hi - lo) / sample));
    for (int i = 1; i <= steps; ++i) {
        const double z = std::min(hi, lo + sample * i);
        const double d = dist2(z);
        if (d < bd) bd = d, bz = z;
    }
    double a = std::max(lo, bz - sample), b = std::min(hi, bz + sample);
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 40; ++it) {
        const double x1 = b - g * (b - a), x2 = a + g * (b - a);
        if (dist2(x1) < dist2(x2)) b = x2;
        else a = x1;
    }
    const double z = 0.5 * (a + b);
    best.z = dist2(z) <= bd ? z : bz;
    best.offset = p - c.at(best.z);
    best.distance = norm(best.offset);
    return best;
}

/// Binary tube of the given radius around a helix.
inline Volume3D make_tube_phantom(const HelixCurve& curve, double radius_mm, double lumen_hu, double background_hu,
                                  Volume3D::Dims dims, Vec3 spacing, Vec3 origin = {}) {
    std::vector<float> data(dims[0] * dims[1] * dims[2], static_cast<float>(background_hu));
    const double speed = curve.speed();
    for (std::size_t k = 0; k < dims[2]; ++k)
        for (std::size_t j = 0; j < dims[1]; ++j)
            for (std::size_t i = 0; i < dims[0]; ++i) {
                const Vec3 p{origin.x + spacing.x * i, origin.y + spacing.y * j, origin.z + spacing.z * k};
                const double rx = p.x - curve.axis_x, ry = p.y - curve.axis_y;
                if (std::abs(std::sqrt(rx * rx + ry * ry) - curve.amplitude) > radius_mm + 1.0) continue;
                const auto np = nearest_on_curve(curve, p, radius_mm * speed + 1.0);
                if (np.distance <= radius_mm) data[i + dims[0] * (j + dims[1] * k)] = static_cast<float>(lumen_hu);
            }
    return {dims, spacing, origin, std::move(data)};
}

struct SynthParams {
    std::size_t n_pos = 100;
    std::size_t n_neg = 100;
    Volume3D::Dims dims{48, 48, 96};
    double spacing_mm = 1.0;
    double radius_min_mm = 5.0;
    double radius_max_mm = 8.0;
    double lumen_hu_min = 250.0;
    double lumen_hu_max = 400.0;
    double background_hu = 0.0;
    double amplitude_min_mm = 2.0;
    double amplitude_max_mm = 6.0;
    double flap_width_px = 2.0;
    double flap_delta_hu = -200.0;
    double false_lumen_delta_hu = -40.0;
    double flap_span_fraction = 0.4;
    double noise_sigma_hu = 15.0;
    bool multi_scan = false;  // every fourth patient gets a second scan
    std::uint64_t seed = 1;

    void validate() const {
        if (n_pos + n_neg < 1) throw SynthError("need at least one scan");
        if (!(flap_span_fraction > 0.0 && flap_span_fraction <= 1.0))
            throw SynthError("flap span fraction must be in (0, 1]");
        if (!(radius_min_mm > 0.0 && radius_min_mm <= radius_max_mm)) throw SynthError("invalid lumen radius range");
        if (!(lumen_hu_min <= lumen_hu_max)) throw SynthError("invalid lumen HU range");
        if (!(spacing_mm > 0.0)) throw SynthError("spacing must be positive");
        if (!(noise_sigma_hu >= 0.0)) throw SynthError("noise sigma must be >= 0");
        if (flap_width_px * spacing_mm >= 2.0 * radius_min_mm) throw SynthError("flap wider than lumen");
        if (!(flap_width_px > 0.0)) throw SynthError("flap width must be positive");
        const double half_xy = 0.5 * spacing_mm * static_cast<double>(std::min(dims[0], dims[1]) - 1);
        if (amplitude_max_mm + radius_max_mm + 2.0 * spacing_mm > half_xy)
            throw SynthError("volume too small for the requested tube geometry");
        if (dims[2] < 8) throw SynthError("volume too short");
    }
};

struct FlapTruth {
    bool present = false;
    double start_mm = 0.0;  // arc-length span of the flap along the centreline
    double end_mm = 0.0;
    double offset_mm = 0.0;
    double angle_rad = 0.0;
};

struct SynthScan {
    std::string scan_id;
    std::string patient_id;
    Label label = Label::Negative;
    HelixCurve curve;
    double radius_mm = 0.0;
    double lumen_hu = 0.0;
    FlapTruth flap;
    Volume3D volume;
};

/// Scan ids and labels in generation order ("scan0001", ...); labels are a
/// seeded shuffle of n_pos positives and n_neg negatives.
inline std::vector<SynthScan> plan_cohort(const SynthParams& p) {
    p.validate();
    std::vector<Label> labels(p.n_pos, Label::Positive);
    labels.insert(labels.end(), p.n_neg, Label::Negative);
    std::mt19937_64 rng(derive_seed(p.seed, "synth-labels"));
    std::shuffle(labels.begin(), labels.end(), rng);
    std::vector<SynthScan> scans;
    char buf[32];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        SynthScan s;
        std::snprintf(buf, sizeof buf, "scan%04zu", i + 1);
        s.scan_id = buf;
        std::snprintf(buf, sizeof buf, "pat%04zu", i + 1);
        s.patient_id = buf;
        s.label = labels[i];
        scans.push_back(std::move(s));
        if (p.multi_scan && i % 4 == 3) {
            SynthScan again;
            std::snprintf(buf, sizeof buf, "scan%04zub", i + 1);
            again.scan_id = buf;
            again.patient_id = scans.back().patient_id;
            again.label = labels[i];
            scans.push_back(std::move(again));
        }
    }
    return scans;
}

/// Renders one scan: a helical tube of bright lumen; positives additionally
/// carry a dark planar flap across the lumen over a contiguous arc-length span,
/// with the far side of the flap (false lumen) slightly shifted in intensity.
inline void render_scan(SynthScan& s, const SynthParams& p) {
    std::mt19937_64 rng(derive_seed(p.seed, "synth-scan", s.scan_id));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uniform = [&](double a, double b) { return a + (b - a) * u01(rng); };

    const auto& d = p.dims;
    const double sp = p.spacing_mm;
    const double ext_x = sp * static_cast<double>(d[0] - 1), ext_y = sp * static_cast<double>(d[1] - 1);
    const double ext_z = sp * static_cast<double>(d[2] - 1);
    s.radius_mm = uniform(p.radius_min_mm, p.radius_max_mm);
    s.lumen_hu = uniform(p.lumen_hu_min, p.lumen_hu_max);
    auto& c = s.curve;
    c.axis_x = 0.5 * ext_x;
    c.axis_y = 0.5 * ext_y;
    c.amplitude = uniform(p.amplitude_min_mm, p.amplitude_max_mm);
    c.omega = 2.0 * std::numbers::pi / uniform(0.8 * ext_z, 1.6 * ext_z);
    c.phase = uniform(0.0, 2.0 * std::numbers::pi);
    c.z_begin = 3.0 * sp;
    c.z_end = ext_z - 3.0 * sp;

    const double length = c.length();
    if (s.label == Label::Positive) {
        auto& f = s.flap;
        f.present = true;
        const double span = p.flap_span_fraction * length;
        f.start_mm = uniform(0.0, length - span);
        f.end_mm = f.start_mm + span;
    }
    const double half_width = 0.5 * p.flap_width_px * sp;
    if (s.flap.present) {
        // The centreline stays in the true lumen, so mean HU sampled along it
        // does not depend on the label.
        const double lo = half_width + 2.0 * sp;
        s.flap.offset_mm = uniform(lo, std::max(lo, 0.6 * s.radius_mm));
        s.flap.angle_rad = uniform(0.0, 2.0 * std::numbers::pi);
    }

    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<float> data(d[0] * d[1] * d[2]);
    const double reach = s.radius_mm * c.speed() + 1.0;
    for (std::size_t k = 0; k < d[2]; ++k)
        for (std::size_t j = 0; j < d[1]; ++j)
            for (std::size_t i = 0; i < d[0]; ++i) {
                const Vec3 pt{sp * i, sp * j, sp * k};
                double v = p.background_hu;
                const double rx = pt.x - c.axis_x, ry = pt.y - c.axis_y;
                if (std::abs(std::sqrt(rx * rx + ry * ry) - c.amplitude) <= s.radius_mm + 1.0) {
                    const auto np = nearest_on_curve(c, pt, reach);
                    if (np.distance <= s.radius_mm) {
                        v = s.lumen_hu;
                        const double arc = c.arc_length(np.z);
                        if (s.flap.present && arc >= s.flap.start_mm && arc <= s.flap.end_mm) {
                            const Vec3 t = normalized(c.derivative(np.z));
                            const Vec3 n0 = normalized(Vec3{1, 0, 0} - t * t.x);
                            const Vec3 b0 = cross(t, n0);
                            const Vec3 m = n0 * std::cos(s.flap.angle_rad) + b0 * std::sin(s.flap.angle_rad);
                            const double side = dot(np.offset, m) - s.flap.offset_mm;
                            if (std::abs(side) <= half_width) v = s.lumen_hu + p.flap_delta_hu;
                            else if (side > 0) v = s.lumen_hu + p.false_lumen_delta_hu;
                        }
                    }
                }
                data[i + d[0] * (j + d[1] * k)] = static_cast<float>(v + p.noise_sigma_hu * noise(rng));
            }
    s.volume = Volume3D(d, {sp, sp, sp}, {}, std::move(data));
}

struct SynthLayout {
    std::filesystem::path root;
    [[nodiscard]] std::filesystem::path volumes() const { return root / "volumes"; }
    [[nodiscard]] std::filesystem::path centerlines() const { return root / "centerlines"; }
    [[nodiscard]] std::filesystem::path manifest() const { return root / "manifest.csv"; }
    [[nodiscard]] std::filesystem::path truth() const { return root / "flaps.csv"; }
};

/// Writes volumes/<id>.mhd+.raw, centerlines/<id>.txt (analytic curve at
/// 0.5 mm steps), manifest.csv (mean_hu blank) and flaps.csv
/// (scan_id,label,flap_start_mm,flap_end_mm).
inline Cohort generate_synthetic_cohort(const SynthParams& p, const std::filesystem::path& out_dir,
                                        unsigned threads = 1) {
    auto scans = plan_cohort(p);
    const SynthLayout layout{out_dir};
    std::filesystem::create_directories(layout.volumes());
    std::filesystem::create_directories(layout.centerlines());
    parallel_for(scans.size(), threads, [&](std::size_t i) {
        auto& s = scans[i];
        render_scan(s, p);
        save_volume(s.volume, layout.volumes() / (s.scan_id + ".mhd"));
        save_polyline(s.curve.polyline(0.5), layout.centerlines() / (s.scan_id + ".txt"));
        s.volume = Volume3D();
    });
    Cohort cohort;
    std::ofstream truth(layout.truth(), std::ios::trunc);
    if (!truth) throw SynthError("cannot write '" + layout.truth().string() + "'");
    truth << "scan_id,label,flap_start_mm,flap_end_mm\n";
    for (const auto& s : scans) {
        cohort.push_back({s.scan_id, s.patient_id, s.label, std::nullopt, Split::Unassigned});
        truth << s.scan_id << ',' << to_string(s.label) << ','
              << (s.flap.present ? aas::detail::format_double(s.flap.start_mm) : std::string{}) << ','
              << (s.flap.present ? aas::detail::format_double(s.flap.end_mm) : std::string{}) << '\n';
    }
    save_manifest(cohort, layout.manifest());
    return cohort;
}

struct FlapSpan {
    double start_mm = 0.0;
    double end_mm = 0.0;
};

inline std::map<std::string, FlapSpan> load_flap_truth(const std::filesystem::path& path) {
    const auto t = csv::read(path, "synth");
    const auto c_id = t.column("scan_id", "synth"), c_s = t.column("flap_start_mm", "synth"),
               c_e = t.column("flap_end_mm", "synth");
    std::map<std::string, FlapSpan> out;
    for (const auto& r : t.rows)
        if (!r[c_s].empty())
            out[r[c_id]] = {aas::detail::parse_double(r[c_s], "flap_start_mm"),
                            aas::detail::parse_double(r[c_e], "flap_end_mm")};
    return out;
}

}  // namespace aas::synth
