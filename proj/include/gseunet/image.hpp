#pragma once

#include <cstdint>
#include <vector>

namespace gseunet {

// Row-major 8-bit images. Masks use the same container; pixels >= 128 count
// as foreground once binarized.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    std::size_t size() const { return pixels.size(); }
    std::uint8_t at(int y, int x) const {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }
};

// Interleaved r,g,b triples.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

inline GrayImage make_gray(int width, int height, std::uint8_t fill = 0) {
    return GrayImage{width, height,
                     std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, fill)};
}

}  // namespace gseunet
