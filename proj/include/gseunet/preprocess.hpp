#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gseunet/errors.hpp"
#include "gseunet/image.hpp"
#include "gseunet/tensor.hpp"

namespace gseunet {

// halves round up, matching the arithmetic used for the published mappings
inline std::uint8_t round_u8(double v) {
    const double r = std::floor(v + 0.5);
    return static_cast<std::uint8_t>(r < 0 ? 0 : (r > 255 ? 255 : r));
}

// BT.601 luma weights
inline GrayImage to_grayscale(const RgbImage& rgb) {
    GrayImage out = make_gray(rgb.width, rgb.height);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        const double r = rgb.pixels[3 * i];
        const double g = rgb.pixels[3 * i + 1];
        const double b = rgb.pixels[3 * i + 2];
        out.pixels[i] = round_u8(0.299 * r + 0.587 * g + 0.114 * b);
    }
    return out;
}

inline std::array<std::uint32_t, 256> compute_histogram(const GrayImage& img) {
    std::array<std::uint32_t, 256> hist{};
    for (std::uint8_t p : img.pixels) ++hist[p];
    return hist;
}

inline std::array<double, 256> compute_cdf(const std::array<std::uint32_t, 256>& hist,
                                           std::size_t pixel_count) {
    if (pixel_count == 0) throw DataError("cannot equalize an empty image");
    std::array<double, 256> cdf{};
    std::uint64_t running = 0;
    for (int v = 0; v < 256; ++v) {
        running += hist[v];
        cdf[v] = static_cast<double>(running) / static_cast<double>(pixel_count);
    }
    return cdf;
}

inline std::array<std::uint8_t, 256> build_equalization_lut(const std::array<double, 256>& cdf) {
    std::array<std::uint8_t, 256> lut{};
    for (int v = 0; v < 256; ++v) lut[v] = round_u8(255.0 * cdf[v]);
    return lut;
}

inline GrayImage equalize(const GrayImage& img) {
    const auto lut = build_equalization_lut(compute_cdf(compute_histogram(img), img.size()));
    GrayImage out = img;
    for (auto& p : out.pixels) p = lut[p];
    return out;
}

// Nearest neighbour with the floor mapping src = dst * src_extent / dst_extent.
inline GrayImage resize_nearest(const GrayImage& img, int out_w, int out_h) {
    if (out_w <= 0 || out_h <= 0) {
        throw ConfigError("resize target must be positive");
    }
    if (img.width <= 0 || img.height <= 0) {
        throw DataError("cannot resize an empty image");
    }
    if (out_w == img.width && out_h == img.height) return img;
    GrayImage out = make_gray(out_w, out_h);
    for (int y = 0; y < out_h; ++y) {
        const int sy = static_cast<int>(static_cast<std::int64_t>(y) * img.height / out_h);
        for (int x = 0; x < out_w; ++x) {
            const int sx = static_cast<int>(static_cast<std::int64_t>(x) * img.width / out_w);
            out.pixels[static_cast<std::size_t>(y) * out_w + x] = img.at(sy, sx);
        }
    }
    return out;
}

// Mask pixels at or above 128 are foreground.
inline std::vector<std::uint8_t> binarize_mask(const GrayImage& mask) {
    std::vector<std::uint8_t> out(mask.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.pixels[i] >= 128 ? 1 : 0;
    return out;
}

// Intensities land in [0, 1] for the network input.
inline Tensor image_to_input(const GrayImage& img) {
    auto t = Tensor::zeros({1, 1, img.height, img.width});
    for (std::size_t i = 0; i < img.size(); ++i) {
        t.data()[i] = static_cast<float>(img.pixels[i]) / 255.0f;
    }
    return t;
}

}  // namespace gseunet
