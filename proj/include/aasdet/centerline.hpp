#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "common.hpp"
#include "vec3.hpp"
#include "volume.hpp"

namespace aas {

class CenterlineError : public Error {
public:
    explicit CenterlineError(const std::string& what) : Error("centerline", what) {}
};

struct Polyline {
    std::vector<Vec3> points;

    [[nodiscard]] double length() const noexcept {
        double len = 0.0;
        for (std::size_t i = 1; i < points.size(); ++i) len += distance(points[i - 1], points[i]);
        return len;
    }
};

/// Points at a uniform arc-length step.
struct Centerline {
    std::vector<Vec3> points;
    double step_mm = 0.7;

    [[nodiscard]] std::size_t size() const noexcept { return points.size(); }
};

/// Orthonormal right-handed triad: tangent = normal x binormal.
struct Frame {
    Vec3 tangent;
    Vec3 normal;
    Vec3 binormal;
};

using FrameField = std::vector<Frame>;

/// Orders the voxels of a single-path centreline mask from one endpoint to the
/// other. The endpoint with the smaller world (z, y, x) comes first.
inline Polyline order_centerline_voxels(const Volume3D& mask, double threshold = 0.5) {
    const auto& d = mask.dims();
    std::map<std::tuple<long, long, long>, std::size_t> lookup;
    std::vector<std::array<long, 3>> voxels;
    for (std::size_t k = 0; k < d[2]; ++k)
        for (std::size_t j = 0; j < d[1]; ++j)
            for (std::size_t i = 0; i < d[0]; ++i)
                if (mask.at(i, j, k) > threshold) {
                    lookup.emplace(std::tuple<long, long, long>(i, j, k), voxels.size());
                    voxels.push_back({static_cast<long>(i), static_cast<long>(j), static_cast<long>(k)});
                }
    if (voxels.empty()) throw CenterlineError("empty mask");
    if (voxels.size() < 2) throw CenterlineError("mask has fewer than 2 centerline voxels");

    std::vector<std::vector<std::size_t>> adj(voxels.size());
    for (std::size_t n = 0; n < voxels.size(); ++n) {
        const auto& v = voxels[n];
        for (long dz = -1; dz <= 1; ++dz)
            for (long dy = -1; dy <= 1; ++dy)
                for (long dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0 && dz == 0) continue;
                    auto it = lookup.find({v[0] + dx, v[1] + dy, v[2] + dz});
                    if (it != lookup.end()) adj[n].push_back(it->second);
                }
        if (adj[n].size() >= 3)
            throw CenterlineError("branching at voxel (" + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," +
                                  std::to_string(v[2]) + ")");
    }

    std::vector<bool> seen(voxels.size(), false);
    std::queue<std::size_t> q;
    q.push(0);
    seen[0] = true;
    std::size_t reached = 1;
    while (!q.empty()) {
        const auto n = q.front();
        q.pop();
        for (auto m : adj[n])
            if (!seen[m]) {
                seen[m] = true;
                ++reached;
                q.push(m);
            }
    }
    if (reached != voxels.size()) throw CenterlineError("mask has disconnected components");

    std::vector<Vec3> world(voxels.size());
    for (std::size_t n = 0; n < voxels.size(); ++n)
        world[n] = mask.voxel_to_world(
            {static_cast<double>(voxels[n][0]), static_cast<double>(voxels[n][1]), static_cast<double>(voxels[n][2])});

    std::vector<std::size_t> ends;
    for (std::size_t n = 0; n < voxels.size(); ++n)
        if (adj[n].size() == 1) ends.push_back(n);
    if (ends.size() != 2) throw CenterlineError("mask is a closed loop, not a simple path");

    auto key = [&](std::size_t n) { return std::tuple(world[n].z, world[n].y, world[n].x); };
    std::size_t cur = key(ends[0]) <= key(ends[1]) ? ends[0] : ends[1];

    Polyline out;
    out.points.reserve(voxels.size());
    std::size_t prev = voxels.size();
    for (;;) {
        out.points.push_back(world[cur]);
        std::size_t next = voxels.size();
        for (auto m : adj[cur])
            if (m != prev) next = m;
        if (next == voxels.size()) break;
        prev = cur;
        cur = next;
    }
    return out;
}

/// Centred moving average (window shrinks symmetrically at the ends, so the
/// endpoints are fixed), then linear resampling at multiples of `step_mm`
/// along cumulative arc length.
inline Centerline smooth_and_resample(const Polyline& p, double step_mm = 0.7, int window = 5) {
    if (!(step_mm > 0.0)) throw CenterlineError("step_mm must be positive");
    if (window < 1 || window % 2 == 0) throw CenterlineError("window must be an odd positive integer");
    if (p.points.size() < 2) throw CenterlineError("polyline needs at least 2 points");
    const std::size_t n = p.points.size();

    std::vector<Vec3> smooth(n);
    const std::size_t half = static_cast<std::size_t>(window / 2);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t h = std::min({half, i, n - 1 - i});
        Vec3 acc{};
        for (std::size_t j = i - h; j <= i + h; ++j) acc += p.points[j];
        smooth[i] = acc * (1.0 / static_cast<double>(2 * h + 1));
    }

    std::vector<double> cum(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) cum[i] = cum[i - 1] + distance(smooth[i - 1], smooth[i]);
    const double total = cum.back();
    if (!(total > 0.0)) throw CenterlineError("degenerate zero-length polyline");
    if (total + 1e-9 < step_mm) throw CenterlineError("polyline shorter than one step");

    const auto count = static_cast<std::size_t>(std::floor(total / step_mm + 1e-9)) + 1;
    Centerline c;
    c.step_mm = step_mm;
    c.points.reserve(count);
    std::size_t seg = 0;
    for (std::size_t k = 0; k < count; ++k) {
        const double s = std::min(static_cast<double>(k) * step_mm, total);
        while (seg + 2 < n && cum[seg + 1] < s) ++seg;
        const double len = cum[seg + 1] - cum[seg];
        const double t = len > 0.0 ? std::clamp((s - cum[seg]) / len, 0.0, 1.0) : 0.0;
        c.points.push_back(smooth[seg] + (smooth[seg + 1] - smooth[seg]) * t);
    }
    return c;
}

/// Rotation-minimising frames by double reflection. The first normal is world
/// +x projected off the first tangent (+y when nearly parallel).
inline FrameField compute_frames(const Centerline& c) {
    const auto& pts = c.points;
    const std::size_t n = pts.size();
    if (n < 2) throw CenterlineError("need at least 2 centerline points for frames");
    for (std::size_t i = 1; i < n; ++i)
        if (distance(pts[i - 1], pts[i]) <= 1e-12) throw CenterlineError("coincident consecutive centerline points");

    std::vector<Vec3> tangents(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 d = i == 0 ? pts[1] - pts[0] : i == n - 1 ? pts[n - 1] - pts[n - 2] : pts[i + 1] - pts[i - 1];
        if (norm(d) <= 1e-12) throw CenterlineError("degenerate tangent at point " + std::to_string(i));
        tangents[i] = normalized(d);
    }

    auto orthonormal = [](const Vec3& t, const Vec3& r) {
        return normalized(r - t * dot(r, t));
    };

    FrameField frames(n);
    const Vec3 t0 = tangents[0];
    Vec3 r0 = std::abs(t0.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    r0 = orthonormal(t0, r0);
    frames[0] = {t0, r0, cross(t0, r0)};

    for (std::size_t i = 0; i + 1 < n; ++i) {
        const Vec3& ri = frames[i].normal;
        const Vec3& ti = tangents[i];
        const Vec3 v1 = pts[i + 1] - pts[i];
        const double c1 = dot(v1, v1);
        const Vec3 rl = ri - v1 * (2.0 / c1 * dot(v1, ri));
        const Vec3 tl = ti - v1 * (2.0 / c1 * dot(v1, ti));
        const Vec3 v2 = tangents[i + 1] - tl;
        const double c2 = dot(v2, v2);
        Vec3 r = c2 > 1e-24 ? rl - v2 * (2.0 / c2 * dot(v2, rl)) : rl;
        const Vec3& t = tangents[i + 1];
        r = orthonormal(t, r);
        frames[i + 1] = {t, r, cross(t, r)};
    }
    return frames;
}

inline double mean_centerline_hu(const Volume3D& vol, const Centerline& c) {
    if (c.points.empty()) throw CenterlineError("empty centerline");
    double acc = 0.0;
    for (const auto& p : c.points) acc += vol.sample_trilinear(p);
    return acc / static_cast<double>(c.points.size());
}

/// Plain-text polyline: one "x y z" triple (mm) per line; blank lines and
/// lines starting with '#' are skipped.
inline Polyline load_polyline(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CenterlineError("cannot open polyline '" + path.string() + "'");
    Polyline p;
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos || line[b] == '#') continue;
        std::istringstream is(line);
        Vec3 v;
        if (!(is >> v.x >> v.y >> v.z)) throw CenterlineError("malformed polyline line " + std::to_string(lineno));
        std::string rest;
        if (is >> rest) throw CenterlineError("trailing data on polyline line " + std::to_string(lineno));
        p.points.push_back(v);
    }
    if (p.points.size() < 2) throw CenterlineError("polyline needs at least 2 points");
    return p;
}

inline void save_polyline(const Polyline& p, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw CenterlineError("cannot write '" + path.string() + "'");
    for (const auto& v : p.points)
        out << detail::format_double(v.x) << ' ' << detail::format_double(v.y) << ' ' << detail::format_double(v.z)
            << '\n';
}

}  // namespace aas
