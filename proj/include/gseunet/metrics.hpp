#pragma once

#include <cstddef>
#include <string>

#include "gseunet/errors.hpp"
#include "gseunet/image.hpp"
#include "gseunet/tensor.hpp"

// Mean intersection-over-union across the two classes, the evaluation
// metric for every reported validation score.

namespace gseunet {

// Class-id mask from a logit map: argmax over the channel axis with ties
// going to class 0 (background). `index` picks the sample within the batch.
inline GrayImage argmax_mask(const Tensor& logits, int index = 0) {
    if (logits.rank() != 4 || logits.dim(1) != 2) {
        throw ShapeError("argmax_mask expects [N,2,H,W] logits, got " + logits.shape_str());
    }
    if (index < 0 || index >= logits.dim(0)) {
        throw UsageError("argmax_mask: sample index " + std::to_string(index) +
                         " out of range for batch " + std::to_string(logits.dim(0)));
    }
    const int h = logits.dim(2);
    const int w = logits.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    GrayImage out = make_gray(w, h);
    const float* l0 = logits.data().data() + (static_cast<std::size_t>(index) * 2 + 0) * plane;
    const float* l1 = logits.data().data() + (static_cast<std::size_t>(index) * 2 + 1) * plane;
    for (std::size_t p = 0; p < plane; ++p) {
        out.pixels[p] = l1[p] > l0[p] ? 1 : 0;
    }
    return out;
}

// Per-class |intersection| / |union|, averaged over {background, foreground}.
// A class absent from both masks is a perfect match and scores 1.
inline double miou(const GrayImage& pred, const GrayImage& target) {
    if (pred.width != target.width || pred.height != target.height) {
        throw UsageError("miou: mask dimensions differ (" + std::to_string(pred.width) + "x" +
                         std::to_string(pred.height) + " vs " + std::to_string(target.width) +
                         "x" + std::to_string(target.height) + ")");
    }
    std::size_t inter[2] = {0, 0};
    std::size_t uni[2] = {0, 0};
    for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
        const unsigned p = pred.pixels[i];
        const unsigned t = target.pixels[i];
        if (p > 1 || t > 1) {
            throw DataError("miou: mask pixel out of class range (expected 0 or 1)");
        }
        if (p == 1 || t == 1) {
            ++uni[1];
            if (p == 1 && t == 1) ++inter[1];
        }
        if (p == 0 || t == 0) {
            ++uni[0];
            if (p == 0 && t == 0) ++inter[0];
        }
    }
    double sum = 0.0;
    for (int c = 0; c < 2; ++c) {
        sum += uni[c] == 0 ? 1.0 : static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    }
    return sum / 2.0;
}

}  // namespace gseunet
