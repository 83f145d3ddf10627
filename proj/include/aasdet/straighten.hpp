#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "centerline.hpp"
#include "common.hpp"
#include "volume.hpp"

namespace aas {

class StraightenError : public Error {
public:
    explicit StraightenError(const std::string& what) : Error("straighten", what) {}
};

inline constexpr double kClipLowHu = -1024.0;
inline constexpr double kClipHighHu = 2048.0;
inline constexpr std::size_t kTypicalMinSlices = 150;
inline constexpr std::size_t kTypicalMaxSlices = 1000;

/// Stack of cross-sections, indexed [slice][row][col].
struct StraightenedVolume {
    std::size_t slices = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;
    double spacing_mm = 0.7;
    std::string source_id;
    bool normalized = false;

    [[nodiscard]] std::size_t index(std::size_t s, std::size_t r, std::size_t c) const noexcept {
        return (s * rows + r) * cols + c;
    }
    [[nodiscard]] float at(std::size_t s, std::size_t r, std::size_t c) const noexcept { return data[index(s, r, c)]; }
    [[nodiscard]] std::size_t slice_size() const noexcept { return rows * cols; }
};

enum class Direction { XY, YZ, XZ };

inline const char* to_string(Direction d) noexcept {
    switch (d) {
        case Direction::XY: return "XY";
        case Direction::YZ: return "YZ";
        case Direction::XZ: return "XZ";
    }
    return "?";
}

inline Direction parse_direction(const std::string& s) {
    if (s == "XY" || s == "xy") return Direction::XY;
    if (s == "YZ" || s == "yz") return Direction::YZ;
    if (s == "XZ" || s == "xz") return Direction::XZ;
    throw StraightenError("unknown direction '" + s + "' (expected XY, YZ or XZ)");
}

/// Samples an H x W patch in the plane spanned by the frame's normal (columns)
/// and binormal (rows). For even sizes the centre point falls between the
/// four middle pixels.
inline std::vector<float> extract_cross_section(const Volume3D& vol, const Vec3& center, const Frame& frame,
                                                std::size_t patch_size, double spacing_mm) {
    const auto check_unit = [](const Vec3& a) { return std::abs(dot(a, a) - 1.0) <= 1e-4; };
    if (!check_unit(frame.tangent) || !check_unit(frame.normal) || !check_unit(frame.binormal) ||
        std::abs(dot(frame.tangent, frame.normal)) > 1e-4 || std::abs(dot(frame.tangent, frame.binormal)) > 1e-4 ||
        std::abs(dot(frame.normal, frame.binormal)) > 1e-4)
        throw StraightenError("frame is not orthonormal");
    if (patch_size == 0) throw StraightenError("patch size must be positive");

    std::vector<float> out(patch_size * patch_size);
    const double mid = (static_cast<double>(patch_size) - 1.0) / 2.0;
    for (std::size_t r = 0; r < patch_size; ++r) {
        const Vec3 row_off = frame.binormal * ((static_cast<double>(r) - mid) * spacing_mm);
        for (std::size_t c = 0; c < patch_size; ++c) {
            const Vec3 p = center + row_off + frame.normal * ((static_cast<double>(c) - mid) * spacing_mm);
            out[r * patch_size + c] = static_cast<float>(vol.sample_trilinear(p));
        }
    }
    return out;
}

struct StraightenOptions {
    std::size_t patch_size = 114;
    double spacing_mm = 0.7;
    unsigned threads = 1;
    std::ostream* warnings = &std::cerr;
};

inline StraightenedVolume straighten_aorta(const Volume3D& vol, const Centerline& c, const FrameField& f,
                                           const StraightenOptions& opt = {}, std::string source_id = {}) {
    if (c.points.size() != f.size())
        throw StraightenError("centerline has " + std::to_string(c.points.size()) + " points but frame field has " +
                              std::to_string(f.size()));
    if (c.points.empty()) throw StraightenError("empty centerline");
    StraightenedVolume sv;
    sv.slices = c.points.size();
    sv.rows = sv.cols = opt.patch_size;
    sv.spacing_mm = opt.spacing_mm;
    sv.source_id = std::move(source_id);
    sv.data.resize(sv.slices * sv.slice_size());
    parallel_for(sv.slices, opt.threads, [&](std::size_t s) {
        auto patch = extract_cross_section(vol, c.points[s], f[s], opt.patch_size, opt.spacing_mm);
        std::copy(patch.begin(), patch.end(), sv.data.begin() + static_cast<std::ptrdiff_t>(s * sv.slice_size()));
    });
    if (opt.warnings && (sv.slices < kTypicalMinSlices || sv.slices > kTypicalMaxSlices))
        *opt.warnings << "straighten: warning: " << (sv.source_id.empty() ? "volume" : sv.source_id) << " has "
                      << sv.slices << " slices, outside the typical range [" << kTypicalMinSlices << ", "
                      << kTypicalMaxSlices << "]\n";
    return sv;
}

inline float clip_and_scale_value(double hu) noexcept {
    return static_cast<float>((std::clamp(hu, kClipLowHu, kClipHighHu) - kClipLowHu) / (kClipHighHu - kClipLowHu));
}

/// Clips to [-1024, 2048] HU and maps linearly onto [0, 1].
inline StraightenedVolume clip_and_scale(StraightenedVolume sv) {
    if (sv.normalized) throw StraightenError("volume is already normalized");
    for (auto& v : sv.data) v = clip_and_scale_value(v);
    sv.normalized = true;
    return sv;
}

/// Draw of `indices.size()` slices with three neighbour channels (i-1, i, i+1),
/// stored [slice][row][col][channel].
struct SliceSample {
    std::vector<std::size_t> indices;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;
    std::string source_id;

    static constexpr std::size_t channels = 3;
    [[nodiscard]] std::size_t count() const noexcept { return indices.size(); }
    [[nodiscard]] std::size_t slice_floats() const noexcept { return rows * cols * channels; }
    [[nodiscard]] const float* slice(std::size_t i) const noexcept { return data.data() + i * slice_floats(); }
};

using SliceBatch = std::vector<SliceSample>;

/// Sorted slice indices: distinct when S >= count, otherwise all S indices
/// padded with uniform draws (with replacement).
inline std::vector<std::size_t> draw_slice_indices(std::size_t slices, std::size_t count, std::uint64_t seed) {
    if (slices == 0) throw StraightenError("cannot sample from an empty volume");
    if (count == 0) throw StraightenError("slice count must be positive");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> idx(slices);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (slices >= count) {
        for (std::size_t i = 0; i < count; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, slices - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        idx.resize(count);
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, slices - 1);
        while (idx.size() < count) idx.push_back(pick(rng));
    }
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline SliceSample gather_slices(const StraightenedVolume& sv, const std::vector<std::size_t>& indices) {
    if (!sv.normalized) throw StraightenError("slice sampling requires a normalized volume");
    if (sv.slices == 0) throw StraightenError("cannot sample from an empty volume");
    SliceSample out;
    out.indices = indices;
    out.rows = sv.rows;
    out.cols = sv.cols;
    out.source_id = sv.source_id;
    out.data.resize(indices.size() * out.slice_floats());
    const std::size_t last = sv.slices - 1;
    float* dst = out.data.data();
    for (std::size_t i : indices) {
        if (i > last) throw StraightenError("slice index out of range");
        const std::size_t nb[3] = {i == 0 ? 0 : i - 1, i, std::min(i + 1, last)};
        for (std::size_t p = 0; p < sv.slice_size(); ++p)
            for (std::size_t ch = 0; ch < 3; ++ch) *dst++ = sv.data[nb[ch] * sv.slice_size() + p];
    }
    return out;
}

inline SliceSample sample_slices(const StraightenedVolume& sv, std::size_t count, std::uint64_t seed) {
    if (sv.slices == 0) throw StraightenError("cannot sample from an empty volume");
    return gather_slices(sv, draw_slice_indices(sv.slices, count, seed));
}

/// Axis permutation. With input indexed [s][h][w]:
///   YZ[s'][h'][w'] = in[h'][w'][s']   (new slice axis = old columns)
///   XZ[s'][h'][w'] = in[w'][s'][h']   (new slice axis = old rows)
/// YZ and XZ are mutually inverse.
inline StraightenedVolume reslice(const StraightenedVolume& sv, Direction axis) {
    if (axis == Direction::XY) return sv;
    StraightenedVolume out;
    out.spacing_mm = sv.spacing_mm;
    out.source_id = sv.source_id;
    out.normalized = sv.normalized;
    out.data.resize(sv.data.size());
    if (axis == Direction::YZ) {
        out.slices = sv.cols;
        out.rows = sv.slices;
        out.cols = sv.rows;
        for (std::size_t s = 0; s < sv.slices; ++s)
            for (std::size_t h = 0; h < sv.rows; ++h)
                for (std::size_t w = 0; w < sv.cols; ++w) out.data[out.index(w, s, h)] = sv.at(s, h, w);
    } else {
        out.slices = sv.rows;
        out.rows = sv.cols;
        out.cols = sv.slices;
        for (std::size_t s = 0; s < sv.slices; ++s)
            for (std::size_t h = 0; h < sv.rows; ++h)
                for (std::size_t w = 0; w < sv.cols; ++w) out.data[out.index(h, w, s)] = sv.at(s, h, w);
    }
    return out;
}

/// Inverse of reslice(sv, axis).
inline StraightenedVolume reslice_inverse(const StraightenedVolume& sv, Direction axis) {
    switch (axis) {
        case Direction::XY: return sv;
        case Direction::YZ: return reslice(sv, Direction::XZ);
        case Direction::XZ: return reslice(sv, Direction::YZ);
    }
    return sv;
}

/// Stored through the volume format with DimSize = W H S.
inline void save_straightened(const StraightenedVolume& sv, const std::filesystem::path& path) {
    Volume3D vol({sv.cols, sv.rows, sv.slices}, {sv.spacing_mm, sv.spacing_mm, sv.spacing_mm}, {}, sv.data, kAirHu);
    HeaderExtras extras;
    extras["Normalized"] = sv.normalized ? "True" : "False";
    if (!sv.source_id.empty()) extras["SourceId"] = sv.source_id;
    save_volume(vol, path, extras);
}

inline StraightenedVolume load_straightened(const std::filesystem::path& path) {
    auto [vol, extras] = load_volume_with_extras(path);
    StraightenedVolume sv;
    sv.cols = vol.dims()[0];
    sv.rows = vol.dims()[1];
    sv.slices = vol.dims()[2];
    sv.spacing_mm = vol.spacing().z;
    sv.data = vol.data();
    if (auto it = extras.find("Normalized"); it != extras.end()) sv.normalized = detail::parse_bool(it->second);
    if (auto it = extras.find("SourceId"); it != extras.end()) sv.source_id = it->second;
    if (sv.normalized)
        for (float v : sv.data)
            if (v < 0.0f || v > 1.0f) throw StraightenError("normalized volume has values outside [0,1]");
    return sv;
}

}  // namespace aas
