#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "common.hpp"
#include "vec3.hpp"

namespace aas {

inline constexpr double kAirHu = -1024.0;

class VolumeError : public Error {
public:
    explicit VolumeError(const std::string& what) : Error("volume", what) {}
};

/// Axis-aligned scalar volume. Integer indices address voxel centres; voxel
/// (i,j,k) sits at origin + spacing * (i,j,k). Data is x-fastest.
class Volume3D {
public:
    using Dims = std::array<std::size_t, 3>;

    Volume3D() = default;

    Volume3D(Dims dims, Vec3 spacing, Vec3 origin, std::vector<float> data,
             double fill_value = kAirHu)
        : dims_(dims), spacing_(spacing), origin_(origin), data_(std::move(data)),
          fill_value_(fill_value) {
        if (dims_[0] == 0 || dims_[1] == 0 || dims_[2] == 0)
            throw VolumeError("dimensions must be positive");
        if (data_.size() != dims_[0] * dims_[1] * dims_[2])
            throw VolumeError("data length " + std::to_string(data_.size()) +
                              " does not match dims product " +
                              std::to_string(dims_[0] * dims_[1] * dims_[2]));
        if (!(spacing_.x > 0.0 && spacing_.y > 0.0 && spacing_.z > 0.0))
            throw VolumeError("spacing components must be > 0");
        for (float v : data_)
            if (!std::isfinite(v)) throw VolumeError("non-finite voxel value");
        if (!std::isfinite(fill_value_)) throw VolumeError("non-finite fill value");
    }

    /// Volume filled with a constant.
    static Volume3D filled(Dims dims, Vec3 spacing, Vec3 origin, float value,
                           double fill_value = kAirHu) {
        return {dims, spacing, origin, std::vector<float>(dims[0] * dims[1] * dims[2], value),
                fill_value};
    }

    [[nodiscard]] const Dims& dims() const noexcept { return dims_; }
    [[nodiscard]] const Vec3& spacing() const noexcept { return spacing_; }
    [[nodiscard]] const Vec3& origin() const noexcept { return origin_; }
    [[nodiscard]] const std::vector<float>& data() const noexcept { return data_; }
    [[nodiscard]] double fill_value() const noexcept { return fill_value_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] std::size_t index(std::size_t i, std::size_t j, std::size_t k) const noexcept {
        return i + dims_[0] * (j + dims_[1] * k);
    }
    [[nodiscard]] float at(std::size_t i, std::size_t j, std::size_t k) const noexcept {
        return data_[index(i, j, k)];
    }

    [[nodiscard]] Vec3 voxel_to_world(const Vec3& ijk) const noexcept {
        return {origin_.x + spacing_.x * ijk.x, origin_.y + spacing_.y * ijk.y,
                origin_.z + spacing_.z * ijk.z};
    }
    [[nodiscard]] Vec3 world_to_voxel(const Vec3& p) const noexcept {
        return {(p.x - origin_.x) / spacing_.x, (p.y - origin_.y) / spacing_.y,
                (p.z - origin_.z) / spacing_.z};
    }

    /// Trilinear interpolation of the eight surrounding voxels. Returns the
    /// fill value whenever a required voxel lies outside the grid.
    [[nodiscard]] double sample_trilinear(const Vec3& p) const noexcept {
        const Vec3 c = world_to_voxel(p);
        std::size_t i0[3];
        double t[3];
        const double coord[3] = {c.x, c.y, c.z};
        for (int a = 0; a < 3; ++a) {
            const double n = static_cast<double>(dims_[a]);
            if (!(coord[a] >= 0.0 && coord[a] <= n - 1.0)) return fill_value_;
            if (dims_[a] == 1) {
                i0[a] = 0;
                t[a] = 0.0;
                continue;
            }
            const double f = std::min(std::floor(coord[a]), n - 2.0);
            i0[a] = static_cast<std::size_t>(f);
            t[a] = coord[a] - f;
        }
        const std::size_t sx = dims_[0] > 1 ? 1 : 0;
        const std::size_t sy = dims_[1] > 1 ? dims_[0] : 0;
        const std::size_t sz = dims_[2] > 1 ? dims_[0] * dims_[1] : 0;
        const std::size_t base = index(i0[0], i0[1], i0[2]);
        const double c000 = data_[base], c100 = data_[base + sx];
        const double c010 = data_[base + sy], c110 = data_[base + sy + sx];
        const double c001 = data_[base + sz], c101 = data_[base + sz + sx];
        const double c011 = data_[base + sz + sy], c111 = data_[base + sz + sy + sx];
        const double c00 = c000 + t[0] * (c100 - c000);
        const double c10 = c010 + t[0] * (c110 - c010);
        const double c01 = c001 + t[0] * (c101 - c001);
        const double c11 = c011 + t[0] * (c111 - c011);
        const double c0 = c00 + t[1] * (c10 - c00);
        const double c1 = c01 + t[1] * (c11 - c01);
        return c0 + t[2] * (c1 - c0);
    }

private:
    Dims dims_{1, 1, 1};
    Vec3 spacing_{1.0, 1.0, 1.0};
    Vec3 origin_{};
    std::vector<float> data_ = std::vector<float>(1, 0.0f);
    double fill_value_ = kAirHu;
};

inline Vec3 world_to_voxel(const Volume3D& vol, const Vec3& p) noexcept { return vol.world_to_voxel(p); }
inline Vec3 voxel_to_world(const Volume3D& vol, const Vec3& ijk) noexcept { return vol.voxel_to_world(ijk); }
inline double sample_trilinear(const Volume3D& vol, const Vec3& p) noexcept { return vol.sample_trilinear(p); }

// ---------------------------------------------------------------------------
// MetaImage (.mhd + .raw) subset IO

/// Header keys beyond the core MetaImage fields, preserved verbatim.
using HeaderExtras = std::map<std::string, std::string>;

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw VolumeError("cannot format number");
    return {buf, ptr};
}

inline double parse_double(const std::string& s, const std::string& key) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    while (first < last && *first == '+') ++first;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) throw VolumeError("malformed value for " + key + ": '" + s + "'");
    return v;
}

inline std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string tok; is >> tok;) out.push_back(tok);
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& s) {
    if (s == "True" || s == "true" || s == "1") return true;
    if (s == "False" || s == "false" || s == "0") return false;
    throw VolumeError("malformed boolean '" + s + "'");
}

inline std::uint32_t to_le(std::uint32_t v) noexcept {
    if constexpr (std::endian::native == std::endian::big)
        return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
    return v;
}

}  // namespace detail

struct LoadedVolume {
    Volume3D volume;
    HeaderExtras extras;
};

inline LoadedVolume load_volume_with_extras(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw VolumeError("cannot open header '" + path.string() + "'");

    std::map<std::string, std::string> fields;
    std::vector<std::string> order;
    for (std::string line; std::getline(in, line);) {
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw VolumeError("malformed header line '" + t + "'");
        const std::string key = detail::trim(t.substr(0, eq));
        if (key.empty()) throw VolumeError("malformed header line '" + t + "'");
        fields[key] = detail::trim(t.substr(eq + 1));
        order.push_back(key);
    }

    auto require = [&](const char* key) -> const std::string& {
        auto it = fields.find(key);
        if (it == fields.end()) throw VolumeError(std::string("header missing ") + key);
        return it->second;
    };
    auto triple = [&](const std::string& key, const std::string& val) {
        const auto toks = detail::split_ws(val);
        if (toks.size() != 3) throw VolumeError("expected 3 values for " + key);
        return std::array<double, 3>{detail::parse_double(toks[0], key), detail::parse_double(toks[1], key),
                                     detail::parse_double(toks[2], key)};
    };

    if (detail::trim(require("NDims")) != "3") throw VolumeError("only NDims = 3 is supported");
    const auto dimsd = triple("DimSize", require("DimSize"));
    Volume3D::Dims dims{};
    for (int a = 0; a < 3; ++a) {
        if (dimsd[a] < 1 || dimsd[a] != std::floor(dimsd[a])) throw VolumeError("malformed DimSize");
        dims[a] = static_cast<std::size_t>(dimsd[a]);
    }
    if (require("ElementType") != "MET_FLOAT")
        throw VolumeError("unsupported element type '" + fields["ElementType"] + "'");

    Vec3 spacing{1, 1, 1}, origin{};
    if (auto it = fields.find("ElementSpacing"); it != fields.end()) {
        auto s = triple(it->first, it->second);
        spacing = {s[0], s[1], s[2]};
    }
    for (const char* key : {"Offset", "Origin", "Position"}) {
        if (auto it = fields.find(key); it != fields.end()) {
            auto o = triple(it->first, it->second);
            origin = {o[0], o[1], o[2]};
            break;
        }
    }
    double fill = kAirHu;
    if (auto it = fields.find("FillValue"); it != fields.end()) fill = detail::parse_double(it->second, "FillValue");
    for (const char* key : {"BinaryDataByteOrderMSB", "ElementByteOrderMSB"})
        if (auto it = fields.find(key); it != fields.end() && detail::parse_bool(it->second))
            throw VolumeError("big-endian payloads are not supported");
    if (auto it = fields.find("CompressedData"); it != fields.end() && detail::parse_bool(it->second))
        throw VolumeError("compressed payloads are not supported");

    const std::string& data_file = require("ElementDataFile");
    if (data_file == "LOCAL") throw VolumeError("ElementDataFile = LOCAL is not supported");
    const auto raw_path = path.parent_path() / data_file;
    std::ifstream raw(raw_path, std::ios::binary);
    if (!raw) throw VolumeError("cannot open data file '" + raw_path.string() + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());

    const std::size_t n = dims[0] * dims[1] * dims[2];
    if (bytes.size() != n * sizeof(float))
        throw VolumeError("size mismatch: header declares " + std::to_string(n) + " voxels, payload has " +
                          std::to_string(bytes.size()) + " bytes");
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t u;
        std::memcpy(&u, bytes.data() + 4 * i, 4);
        u = detail::to_le(u);
        std::memcpy(&data[i], &u, 4);
    }

    static const char* const core[] = {"NDims", "DimSize", "ElementType", "ElementSpacing", "Offset", "Origin",
                                       "Position", "FillValue", "BinaryDataByteOrderMSB", "ElementByteOrderMSB",
                                       "CompressedData", "ElementDataFile", "ObjectType", "BinaryData"};
    HeaderExtras extras;
    for (const auto& [k, v] : fields)
        if (std::find(std::begin(core), std::end(core), k) == std::end(core)) extras[k] = v;

    return {Volume3D(dims, spacing, origin, std::move(data), fill), std::move(extras)};
}

inline Volume3D load_volume(const std::filesystem::path& path) { return load_volume_with_extras(path).volume; }

/// Writes `<path>` (header) and `<stem>.raw` next to it.
inline void save_volume(const Volume3D& vol, const std::filesystem::path& path, const HeaderExtras& extras = {}) {
    auto raw_path = path;
    raw_path.replace_extension(".raw");
    if (raw_path == path) throw VolumeError("header path must not end in .raw");

    std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
    if (!raw) throw VolumeError("cannot write '" + raw_path.string() + "'");
    std::vector<char> bytes(vol.size() * 4);
    for (std::size_t i = 0; i < vol.size(); ++i) {
        std::uint32_t u;
        std::memcpy(&u, &vol.data()[i], 4);
        u = detail::to_le(u);
        std::memcpy(bytes.data() + 4 * i, &u, 4);
    }
    raw.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!raw) throw VolumeError("write failed for '" + raw_path.string() + "'");

    std::ofstream hdr(path, std::ios::trunc);
    if (!hdr) throw VolumeError("cannot write '" + path.string() + "'");
    using detail::format_double;
    const auto& d = vol.dims();
    const auto& s = vol.spacing();
    const auto& o = vol.origin();
    hdr << "ObjectType = Image\n"
        << "NDims = 3\n"
        << "BinaryData = True\n"
        << "BinaryDataByteOrderMSB = False\n"
        << "CompressedData = False\n"
        << "DimSize = " << d[0] << ' ' << d[1] << ' ' << d[2] << '\n'
        << "ElementSpacing = " << format_double(s.x) << ' ' << format_double(s.y) << ' ' << format_double(s.z) << '\n'
        << "Offset = " << format_double(o.x) << ' ' << format_double(o.y) << ' ' << format_double(o.z) << '\n'
        << "FillValue = " << format_double(vol.fill_value()) << '\n';
    for (const auto& [k, v] : extras) hdr << k << " = " << v << '\n';
    hdr << "ElementType = MET_FLOAT\n"
        << "ElementDataFile = " << raw_path.filename().string() << '\n';
    if (!hdr) throw VolumeError("write failed for '" + path.string() + "'");
}

}  // namespace aas
