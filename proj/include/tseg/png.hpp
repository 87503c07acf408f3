#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

namespace tseg {

// Minimal 8-bit RGB PNG writer (one IDAT chunk, filter 0 rows) for the
// diagnostic contour overlays.
inline void write_png_rgb(const std::string& path, std::int64_t width, std::int64_t height,
                          const std::vector<unsigned char>& rgb) {
    if (static_cast<std::int64_t>(rgb.size()) != width * height * 3)
        throw std::invalid_argument("write_png_rgb: buffer size does not match extents");
    std::vector<unsigned char> raw(static_cast<std::size_t>(height * (width * 3 + 1)));
    for (std::int64_t y = 0; y < height; ++y) {
        raw[static_cast<std::size_t>(y * (width * 3 + 1))] = 0;  // filter: none
        std::memcpy(raw.data() + y * (width * 3 + 1) + 1, rgb.data() + y * width * 3,
                    static_cast<std::size_t>(width * 3));
    }
    uLongf zcap = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> zbuf(zcap);
    if (compress2(zbuf.data(), &zcap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("write_png_rgb: deflate failed");
    zbuf.resize(zcap);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_png_rgb: cannot write " + path);
    auto be32 = [](std::uint32_t v) {
        return std::array<unsigned char, 4>{static_cast<unsigned char>(v >> 24),
                                            static_cast<unsigned char>(v >> 16),
                                            static_cast<unsigned char>(v >> 8),
                                            static_cast<unsigned char>(v)};
    };
    auto chunk = [&](const char type[5], const unsigned char* data, std::size_t n) {
        const auto len = be32(static_cast<std::uint32_t>(n));
        os.write(reinterpret_cast<const char*>(len.data()), 4);
        std::vector<unsigned char> body(4 + n);
        std::memcpy(body.data(), type, 4);
        if (n) std::memcpy(body.data() + 4, data, n);
        os.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
        const auto crc = be32(static_cast<std::uint32_t>(crc32(0, body.data(), static_cast<uInt>(body.size()))));
        os.write(reinterpret_cast<const char*>(crc.data()), 4);
    };
    const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    os.write(reinterpret_cast<const char*>(sig), 8);
    unsigned char ihdr[13];
    const auto w = be32(static_cast<std::uint32_t>(width)), h = be32(static_cast<std::uint32_t>(height));
    std::memcpy(ihdr, w.data(), 4);
    std::memcpy(ihdr + 4, h.data(), 4);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // color type: RGB
    ihdr[10] = ihdr[11] = ihdr[12] = 0;
    chunk("IHDR", ihdr, 13);
    chunk("IDAT", zbuf.data(), zbuf.size());
    chunk("IEND", nullptr, 0);
}

}  // namespace tseg
