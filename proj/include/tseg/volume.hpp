#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tseg/common.hpp"

namespace tseg {

enum class ValueKind { intensity, probability, mask };

// 3-d scalar grid with physical spacing, voxels stored x-fastest.
struct Volume {
    std::int64_t nx = 0, ny = 0, nz = 0;
    double sx = 1.0, sy = 1.0, sz = 1.0;  // mm per voxel
    double ox = 0.0, oy = 0.0, oz = 0.0;  // mm origin
    ValueKind value_kind = ValueKind::intensity;
    std::vector<double> voxels;

    Volume() = default;
    Volume(std::int64_t x, std::int64_t y, std::int64_t z, ValueKind kind = ValueKind::intensity)
        : nx(x), ny(y), nz(z), value_kind(kind), voxels(static_cast<std::size_t>(x * y * z), 0.0) {
        if (x <= 0 || y <= 0 || z <= 0) throw std::invalid_argument("Volume: non-positive extents");
    }

    std::int64_t count() const { return nx * ny * nz; }
    std::size_t idx(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return static_cast<std::size_t>((z * ny + y) * nx + x);
    }
    double at(std::int64_t x, std::int64_t y, std::int64_t z) const { return voxels[idx(x, y, z)]; }
    double& at(std::int64_t x, std::int64_t y, std::int64_t z) { return voxels[idx(x, y, z)]; }
    double voxel_volume_mm3() const { return sx * sy * sz; }

    void validate() const {
        if (static_cast<std::int64_t>(voxels.size()) != count())
            throw std::invalid_argument("Volume: voxel count does not match extents");
        if (sx <= 0 || sy <= 0 || sz <= 0) throw std::invalid_argument("Volume: spacing must be > 0");
        if (value_kind == ValueKind::mask) {
            for (double v : voxels)
                if (v != 0.0 && v != 1.0)
                    throw std::invalid_argument("Volume: mask volumes may only hold 0 or 1");
        } else if (value_kind == ValueKind::probability) {
            for (double v : voxels)
                if (!(v >= 0.0 && v <= 1.0))
                    throw std::invalid_argument("Volume: probability volumes must lie in [0,1]");
        }
    }
};

namespace detail {
inline void write_le64(std::ofstream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}
}  // namespace detail

// Header/payload pair with MetaImage-compatible keys. Masks are stored as
// MET_UCHAR, everything else as little-endian MET_DOUBLE.
inline void write_volume(const Volume& v, const std::string& path) {
    v.validate();
    namespace fs = std::filesystem;
    const fs::path hp(path);
    const std::string raw_name = hp.stem().string() + ".raw";
    const fs::path rp = hp.parent_path() / raw_name;

    std::ofstream hf(hp);
    if (!hf) throw std::runtime_error("write_volume: cannot write " + path);
    char buf[256];
    hf << "NDims = 3\n";
    hf << "DimSize = " << v.nx << " " << v.ny << " " << v.nz << "\n";
    std::snprintf(buf, sizeof(buf), "ElementSpacing = %.17g %.17g %.17g\n", v.sx, v.sy, v.sz);
    hf << buf;
    std::snprintf(buf, sizeof(buf), "Offset = %.17g %.17g %.17g\n", v.ox, v.oy, v.oz);
    hf << buf;
    hf << "ElementType = " << (v.value_kind == ValueKind::mask ? "MET_UCHAR" : "MET_DOUBLE") << "\n";
    hf << "ElementDataFile = " << raw_name << "\n";

    std::ofstream rf(rp, std::ios::binary);
    if (!rf) throw std::runtime_error("write_volume: cannot write " + rp.string());
    if (v.value_kind == ValueKind::mask) {
        std::vector<unsigned char> bytes(v.voxels.size());
        for (std::size_t i = 0; i < v.voxels.size(); ++i) bytes[i] = v.voxels[i] != 0.0 ? 1 : 0;
        rf.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    } else {
        for (double d : v.voxels) detail::write_le64(rf, d);
    }
}

inline Volume read_volume(const std::string& path) {
    namespace fs = std::filesystem;
    std::ifstream hf(path);
    if (!hf) throw std::runtime_error("read_volume: cannot open " + path);
    Volume v;
    std::string element_type, data_file;
    bool have_dims = false, have_size = false, have_type = false, have_file = false;
    std::string line;
    while (std::getline(hf, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("read_volume: malformed header line '" + line + "'");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        std::istringstream vs(val);
        if (key == "NDims") {
            int nd = 0;
            vs >> nd;
            if (nd != 3) throw std::runtime_error("read_volume: NDims must be 3");
            have_dims = true;
        } else if (key == "DimSize") {
            if (!(vs >> v.nx >> v.ny >> v.nz) || v.nx <= 0 || v.ny <= 0 || v.nz <= 0)
                throw std::runtime_error("read_volume: bad DimSize '" + val + "'");
            have_size = true;
        } else if (key == "ElementSpacing") {
            if (!(vs >> v.sx >> v.sy >> v.sz)) throw std::runtime_error("read_volume: bad ElementSpacing");
        } else if (key == "Offset") {
            if (!(vs >> v.ox >> v.oy >> v.oz)) throw std::runtime_error("read_volume: bad Offset");
        } else if (key == "ElementType") {
            element_type = val;
            if (val != "MET_DOUBLE" && val != "MET_UCHAR")
                throw std::runtime_error("read_volume: unsupported ElementType '" + val + "'");
            have_type = true;
        } else if (key == "ElementDataFile") {
            data_file = val;
            have_file = true;
        } else {
            throw std::runtime_error("read_volume: unknown header key '" + key + "'");
        }
    }
    if (!have_dims || !have_size || !have_type || !have_file)
        throw std::runtime_error("read_volume: header " + path + " is missing required keys");

    const fs::path rp = fs::path(path).parent_path() / data_file;
    std::ifstream rf(rp, std::ios::binary);
    if (!rf) throw std::runtime_error("read_volume: cannot open payload " + rp.string());
    rf.seekg(0, std::ios::end);
    const std::int64_t bytes = static_cast<std::int64_t>(rf.tellg());
    rf.seekg(0);
    const std::int64_t n = v.count();
    const std::int64_t expect = element_type == "MET_UCHAR" ? n : n * 8;
    if (bytes != expect)
        throw std::runtime_error("read_volume: payload " + rp.string() + " holds " + std::to_string(bytes) +
                                 " bytes, header implies " + std::to_string(expect));
    v.voxels.resize(static_cast<std::size_t>(n));
    if (element_type == "MET_UCHAR") {
        std::vector<unsigned char> raw(static_cast<std::size_t>(n));
        rf.read(reinterpret_cast<char*>(raw.data()), bytes);
        for (std::int64_t i = 0; i < n; ++i) v.voxels[static_cast<std::size_t>(i)] = raw[static_cast<std::size_t>(i)];
        v.value_kind = ValueKind::mask;
    } else {
        std::vector<unsigned char> raw(static_cast<std::size_t>(bytes));
        rf.read(reinterpret_cast<char*>(raw.data()), bytes);
        for (std::int64_t i = 0; i < n; ++i) {
            std::uint64_t u = 0;
            for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(raw[static_cast<std::size_t>(i * 8 + b)]) << (8 * b);
            double d;
            std::memcpy(&d, &u, 8);
            v.voxels[static_cast<std::size_t>(i)] = d;
        }
        bool prob = true;
        for (double d : v.voxels)
            if (!(d >= 0.0 && d <= 1.0)) {
                prob = false;
                break;
            }
        v.value_kind = prob ? ValueKind::probability : ValueKind::intensity;
    }
    v.validate();
    return v;
}

}  // namespace tseg
