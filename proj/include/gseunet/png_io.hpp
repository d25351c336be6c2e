#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "gseunet/errors.hpp"
#include "gseunet/image.hpp"
#include "gseunet/preprocess.hpp"

// 8-bit PNG in, 8-bit PNG out. Grayscale and RGB are the only accepted color
// types; anything else is rejected with a message naming what was found, so a
// stray 16-bit export fails loudly instead of silently losing precision.

namespace gseunet {

namespace detail {

struct PngHeader {
    int bit_depth = 0;
    int color_type = 0;
};

// The first 26 bytes of every PNG are fixed: 8 signature bytes, the IHDR
// length and tag, width, height, then bit depth and color type. Reading them
// directly lets error messages name the actual depth before any decode work.
inline PngHeader read_png_header(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open " + path);
    unsigned char buf[26];
    const std::size_t got = std::fread(buf, 1, sizeof buf, fp);
    std::fclose(fp);
    if (got < 8 || png_sig_cmp(buf, 0, 8) != 0) {
        throw FormatError(path + " is not a PNG file");
    }
    if (got < sizeof buf) throw FormatError(path + ": truncated PNG header");
    return {buf[24], buf[25]};
}

inline void check_loadable(const std::string& path, const PngHeader& hdr) {
    if (hdr.bit_depth != 8) {
        throw FormatError(path + ": unsupported PNG bit depth " +
                          std::to_string(hdr.bit_depth) + ", expected 8");
    }
    if (hdr.color_type != PNG_COLOR_TYPE_GRAY && hdr.color_type != PNG_COLOR_TYPE_RGB) {
        throw FormatError(path + ": unsupported PNG color type " +
                          std::to_string(hdr.color_type) + ", expected grayscale or RGB");
    }
}

inline std::vector<std::uint8_t> decode_png(const std::string& path, bool rgb, int* width,
                                            int* height) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw FormatError("cannot decode " + path + ": " + msg);
    }
    img.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw FormatError("cannot decode " + path + ": " + msg);
    }
    *width = static_cast<int>(img.width);
    *height = static_cast<int>(img.height);
    return pixels;
}

}  // namespace detail

// Grayscale files load as-is; RGB files go through to_grayscale, the same
// conversion the preprocessing pipeline uses.
inline GrayImage load_image(const std::string& path) {
    const auto hdr = detail::read_png_header(path);
    detail::check_loadable(path, hdr);
    int w = 0;
    int h = 0;
    if (hdr.color_type == PNG_COLOR_TYPE_GRAY) {
        GrayImage out;
        out.pixels = detail::decode_png(path, false, &w, &h);
        out.width = w;
        out.height = h;
        return out;
    }
    RgbImage rgb;
    rgb.pixels = detail::decode_png(path, true, &w, &h);
    rgb.width = w;
    rgb.height = h;
    return to_grayscale(rgb);
}

// Grayscale input replicates into the three channels.
inline RgbImage load_rgb(const std::string& path) {
    const auto hdr = detail::read_png_header(path);
    detail::check_loadable(path, hdr);
    RgbImage out;
    int w = 0;
    int h = 0;
    out.pixels = detail::decode_png(path, true, &w, &h);
    out.width = w;
    out.height = h;
    return out;
}

inline void save_image(const GrayImage& img, const std::string& path) {
    if (img.width <= 0 || img.height <= 0 ||
        img.pixels.size() != static_cast<std::size_t>(img.width) * img.height) {
        throw UsageError("refusing to save an empty or inconsistent image to " + path);
    }
    png_image out;
    std::memset(&out, 0, sizeof out);
    out.version = PNG_IMAGE_VERSION;
    out.width = static_cast<png_uint_32>(img.width);
    out.height = static_cast<png_uint_32>(img.height);
    out.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&out, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
        const std::string msg = out.message;
        png_image_free(&out);
        throw IoError("cannot write " + path + ": " + msg);
    }
}

}  // namespace gseunet
