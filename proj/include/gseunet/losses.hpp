#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "gseunet/ops.hpp"

// Two-class segmentation losses. Cross entropy fuses the log-softmax so the
// exponentials are always max-shifted; dice works on softmax probabilities
// and only scores the foreground channel.

namespace gseunet {

enum class LossKind { cross_entropy, dice, ce_plus_dice };

inline LossKind parse_loss(const std::string& name) {
    if (name == "ce") return LossKind::cross_entropy;
    if (name == "dice") return LossKind::dice;
    if (name == "ce_plus_dice") return LossKind::ce_plus_dice;
    throw ConfigError("unknown loss '" + name + "' (expected ce, dice or ce_plus_dice)");
}

inline const char* loss_name(LossKind kind) {
    switch (kind) {
        case LossKind::cross_entropy: return "ce";
        case LossKind::dice: return "dice";
        case LossKind::ce_plus_dice: return "ce_plus_dice";
    }
    throw ConfigError("unknown loss kind");
}

namespace detail {

// Both losses consume [N,2,H,W] maps and an [N,H,W] class-id target whose
// values must be exactly 0 or 1.
template <class T>
void check_loss_shapes(const TensorT<T>& maps, const TensorT<T>& target, const char* op) {
    if (maps.rank() != 4 || maps.dim(1) != 2) {
        throw ShapeError(std::string(op) + " expects a [N,2,H,W] tensor, got " + maps.shape_str());
    }
    if (target.rank() != 3 || target.dim(0) != maps.dim(0) || target.dim(1) != maps.dim(2) ||
        target.dim(2) != maps.dim(3)) {
        throw ShapeError(std::string(op) + " target shape " + target.shape_str() +
                         " does not match predictions " + maps.shape_str());
    }
    for (T v : target.data()) {
        if (v != T(0) && v != T(1)) {
            throw DataError(std::string(op) + ": target value out of class range (expected 0 or 1)");
        }
    }
}

}  // namespace detail

// Mean over every pixel of -log softmax(logit of the true class).
template <class T>
TensorT<T> cross_entropy_loss(const TensorT<T>& logits, const TensorT<T>& target,
                              TapeT<T>* tape = nullptr) {
    detail::check_loss_shapes(logits, target, "cross_entropy_loss");
    const std::size_t n = static_cast<std::size_t>(logits.dim(0));
    const std::size_t plane =
        static_cast<std::size_t>(logits.dim(2)) * static_cast<std::size_t>(logits.dim(3));
    const auto& lv = logits.data();
    const auto& tv = target.data();
    T total(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T* l0 = lv.data() + (i * 2 + 0) * plane;
        const T* l1 = lv.data() + (i * 2 + 1) * plane;
        const T* t = tv.data() + i * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            const T m = l0[p] > l1[p] ? l0[p] : l1[p];
            const T lse = m + std::log(std::exp(l0[p] - m) + std::exp(l1[p] - m));
            total += lse - (t[p] == T(1) ? l1[p] : l0[p]);
        }
    }
    const T denom = static_cast<T>(n * plane);
    auto out = TensorT<T>::scalar(total / denom);
    if (tape && logits.requires_grad()) {
        out.set_requires_grad(true);
        tape->record({logits}, out, [logits = logits, target = target, out, n, plane]() mutable {
            const T g = out.grad()[0] / static_cast<T>(n * plane);
            const auto& lv2 = logits.data();
            const auto& tv2 = target.data();
            auto& gl = logits.grad();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t o0 = (i * 2 + 0) * plane;
                const std::size_t o1 = (i * 2 + 1) * plane;
                const T* t = tv2.data() + i * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    const T m = lv2[o0 + p] > lv2[o1 + p] ? lv2[o0 + p] : lv2[o1 + p];
                    const T e0 = std::exp(lv2[o0 + p] - m);
                    const T e1 = std::exp(lv2[o1 + p] - m);
                    const T p1 = e1 / (e0 + e1);
                    const bool fg = t[p] == T(1);
                    gl[o0 + p] += g * ((T(1) - p1) - (fg ? T(0) : T(1)));
                    gl[o1 + p] += g * (p1 - (fg ? T(1) : T(0)));
                }
            }
        });
    }
    return out;
}

// 1 - smoothed Dice coefficient of the foreground probability channel,
// averaged over the batch. The +1 smoothing keeps empty masks well defined.
template <class T>
TensorT<T> dice_loss(const TensorT<T>& probs, const TensorT<T>& target, TapeT<T>* tape = nullptr) {
    detail::check_loss_shapes(probs, target, "dice_loss");
    const std::size_t n = static_cast<std::size_t>(probs.dim(0));
    const std::size_t plane =
        static_cast<std::size_t>(probs.dim(2)) * static_cast<std::size_t>(probs.dim(3));
    const T eps(1);
    const auto& pv = probs.data();
    const auto& tv = target.data();
    T total(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T* p = pv.data() + (i * 2 + 1) * plane;
        const T* t = tv.data() + i * plane;
        T inter(0), psum(0), tsum(0);
        for (std::size_t k = 0; k < plane; ++k) {
            inter += p[k] * t[k];
            psum += p[k];
            tsum += t[k];
        }
        total += T(1) - (T(2) * inter + eps) / (psum + tsum + eps);
    }
    auto out = TensorT<T>::scalar(total / static_cast<T>(n));
    if (tape && probs.requires_grad()) {
        out.set_requires_grad(true);
        tape->record({probs}, out, [probs = probs, target = target, out, n, plane]() mutable {
            const T eps2(1);
            const T g = out.grad()[0] / static_cast<T>(n);
            const auto& pv2 = probs.data();
            const auto& tv2 = target.data();
            auto& gp = probs.grad();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t off = (i * 2 + 1) * plane;
                const T* t = tv2.data() + i * plane;
                T inter(0), psum(0), tsum(0);
                for (std::size_t k = 0; k < plane; ++k) {
                    inter += pv2[off + k] * t[k];
                    psum += pv2[off + k];
                    tsum += t[k];
                }
                const T d = psum + tsum + eps2;
                const T num = T(2) * inter + eps2;
                // d(dice)/dp = num/d^2 - 2t/d; the bg channel never enters.
                for (std::size_t k = 0; k < plane; ++k) {
                    gp[off + k] += g * (num / (d * d) - T(2) * t[k] / d);
                }
            }
        });
    }
    return out;
}

// Dispatch on the configured loss. ce_plus_dice is the plain sum of the two
// terms; dice always sees softmax probabilities.
template <class T>
TensorT<T> segmentation_loss(LossKind kind, const TensorT<T>& logits, const TensorT<T>& target,
                             TapeT<T>* tape = nullptr) {
    switch (kind) {
        case LossKind::cross_entropy:
            return cross_entropy_loss(logits, target, tape);
        case LossKind::dice:
            return dice_loss(softmax_channels(logits, tape), target, tape);
        case LossKind::ce_plus_dice: {
            auto ce = cross_entropy_loss(logits, target, tape);
            auto di = dice_loss(softmax_channels(logits, tape), target, tape);
            return add(ce, di, tape);
        }
    }
    throw ConfigError("unknown loss kind");
}

}  // namespace gseunet
