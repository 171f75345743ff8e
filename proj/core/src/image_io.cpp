#include "styleplane/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace styleplane {

namespace {

void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

void write_chunk(std::ofstream& os, const char type[4], const std::vector<unsigned char>& payload) {
    std::vector<unsigned char> head;
    put_u32_be(head, static_cast<std::uint32_t>(payload.size()));
    os.write(reinterpret_cast<const char*>(head.data()), 4);
    os.write(type, 4);
    if (!payload.empty()) os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
    if (!payload.empty()) crc = crc32(crc, payload.data(), static_cast<uInt>(payload.size()));
    std::vector<unsigned char> tail;
    put_u32_be(tail, crc);
    os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

void write_png_rgb8(const std::filesystem::path& path, const std::vector<unsigned char>& rgb, int H, int W) {
    // scanlines with filter byte 0
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(H) * (static_cast<std::size_t>(W) * 3 + 1));
    for (int r = 0; r < H; ++r) {
        raw.push_back(0);
        raw.insert(raw.end(), rgb.begin() + static_cast<std::ptrdiff_t>(r) * W * 3,
                   rgb.begin() + static_cast<std::ptrdiff_t>(r + 1) * W * 3);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw std::runtime_error("png: zlib compression failed");
    }
    comp.resize(comp_len);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path.string());
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    os.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<unsigned char> ihdr;
    put_u32_be(ihdr, static_cast<std::uint32_t>(W));
    put_u32_be(ihdr, static_cast<std::uint32_t>(H));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type RGB
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    write_chunk(os, "IHDR", ihdr);
    write_chunk(os, "IDAT", comp);
    write_chunk(os, "IEND", {});
    if (!os) throw std::runtime_error("png write failed: " + path.string());
}

unsigned char to_byte(float v) {
    v = std::clamp(v, 0.0f, 1.0f);
    return static_cast<unsigned char>(v * 255.0f + 0.5f);
}

}  // namespace

void save_png(const std::filesystem::path& path, const Tensorf& img) {
    if (img.rank() != 3 || img.dim(0) != 3) {
        throw std::invalid_argument("save_png: expected [3,H,W], got " + img.shape_str());
    }
    const int H = img.dim(1), W = img.dim(2);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<unsigned char> rgb(plane * 3);
    for (std::size_t s = 0; s < plane; ++s) {
        rgb[s * 3] = to_byte(img[s]);
        rgb[s * 3 + 1] = to_byte(img[plane + s]);
        rgb[s * 3 + 2] = to_byte(img[2 * plane + s]);
    }
    write_png_rgb8(path, rgb, H, W);
}

void save_png_gray(const std::filesystem::path& path, const Tensorf& map, float lo, float hi) {
    if (map.rank() != 2) throw std::invalid_argument("save_png_gray: expected [H,W], got " + map.shape_str());
    const int H = map.dim(0), W = map.dim(1);
    const float span = std::max(hi - lo, 1e-12f);
    std::vector<unsigned char> rgb(static_cast<std::size_t>(H) * W * 3);
    for (std::size_t s = 0; s < static_cast<std::size_t>(H) * W; ++s) {
        const unsigned char b = to_byte((map[s] - lo) / span);
        rgb[s * 3] = rgb[s * 3 + 1] = rgb[s * 3 + 2] = b;
    }
    write_png_rgb8(path, rgb, H, W);
}

}  // namespace styleplane
