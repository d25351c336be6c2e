#pragma once

#include <numeric>
#include <string>

#include "gseunet/ops.hpp"

namespace gseunet {

// Channel attention: squeeze each feature map to its mean, relate adjacent
// channel means with a short 1-D filter, gate through a sigmoid, and scale
// the original maps. Weights always land strictly inside (0,1), so the block
// can attenuate but never zero out or amplify a channel.
template <class T>
TensorT<T> eca_forward(const TensorT<T>& x, const TensorT<T>& kernel, TapeT<T>* tape = nullptr) {
    auto means = global_avg_pool(x, tape);
    auto gates = sigmoid(conv1d_channels(means, kernel, tape), tape);
    return mul_channelwise(x, gates, tape);
}

// Cyclic rotation of the channel axis: out[:, c] = x[:, (c - s) mod C].
// A pure permutation, so the value multiset is untouched and the backward
// rule is the inverse rotation.
template <class T>
TensorT<T> channel_shift(const TensorT<T>& x, int s, TapeT<T>* tape = nullptr) {
    if (x.rank() != 4) {
        throw ShapeError("channel_shift expects a rank-4 input, got " + x.shape_str());
    }
    const int n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c == 0) return x;
    const int rot = ((s % c) + c) % c;
    if (rot == 0 && !(tape && x.requires_grad())) return x;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    auto out = TensorT<T>::zeros(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int n = 0; n < n_batch; ++n) {
        for (int ch = 0; ch < c; ++ch) {
            const int src = (ch - rot + c) % c;
            std::copy(xv.begin() + (static_cast<std::size_t>(n) * c + src) * plane,
                      xv.begin() + (static_cast<std::size_t>(n) * c + src + 1) * plane,
                      ov.begin() + (static_cast<std::size_t>(n) * c + ch) * plane);
        }
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record({x}, out, [x = x, out, n_batch, c, plane, rot]() mutable {
            const auto& g = out.grad();
            auto& gx = x.grad();
            for (int n = 0; n < n_batch; ++n) {
                for (int ch = 0; ch < c; ++ch) {
                    const int src = (ch - rot + c) % c;
                    const std::size_t from = (static_cast<std::size_t>(n) * c + ch) * plane;
                    const std::size_t to = (static_cast<std::size_t>(n) * c + src) * plane;
                    for (std::size_t i = 0; i < plane; ++i) gx[to + i] += g[from + i];
                }
            }
        });
    }
    return out;
}

enum class Recombine { concat_project, add };

inline Recombine parse_recombine(const std::string& name) {
    if (name == "concatenate-project") return Recombine::concat_project;
    if (name == "add") return Recombine::add;
    throw ConfigError("unknown recombine mode '" + name +
                      "' (expected concatenate-project or add)");
}

inline std::string recombine_name(Recombine r) {
    return r == Recombine::concat_project ? "concatenate-project" : "add";
}

template <class T>
struct GsconvParamsT {
    TensorT<T> weight;       // grouped 3x3 stage, [C_out, C_in/G, k, k]
    TensorT<T> bias;         // [C_out]
    TensorT<T> proj_weight;  // pointwise recombination, [C_out, C_out or C_out/2, 1, 1]
    TensorT<T> proj_bias;    // [C_out]
    int groups = 1;
    int shift = 0;
    Recombine recombine = Recombine::concat_project;
};

using GsconvParams = GsconvParamsT<float>;

// Grouped 3x3 conv -> cyclic channel shift -> pointwise recombination.
// Grouping cuts the dense kernel's parameters by the group count; the shift
// moves information across group boundaries at zero parameter cost; the
// projection lets the network relearn arbitrary channel mixtures.
template <class T>
TensorT<T> gsconv_forward(const TensorT<T>& x, const GsconvParamsT<T>& p,
                          TapeT<T>* tape = nullptr) {
    const int c_out = p.weight.dim(0);
    if (p.shift < 0 || p.shift >= c_out) {
        throw ConfigError("gsconv shift " + std::to_string(p.shift) +
                          " must lie in [0, " + std::to_string(c_out) + ")");
    }
    const int k = p.weight.dim(2);
    auto y = conv2d(x, p.weight, p.bias, 1, k / 2, p.groups, tape);
    y = channel_shift(y, p.shift, tape);
    if (p.recombine == Recombine::add) {
        if (c_out % 2 != 0) {
            throw ConfigError("gsconv add recombination needs an even channel count, got " +
                              std::to_string(c_out));
        }
        if (p.proj_weight.dim(1) != c_out / 2) {
            throw ShapeError("gsconv add recombination expects a [C," + std::to_string(c_out / 2) +
                             ",1,1] projection, got " + p.proj_weight.shape_str());
        }
        // fold the two channel halves together, then widen back out
        const int half = c_out / 2;
        const int n_batch = y.dim(0), h = y.dim(2), w = y.dim(3);
        const std::size_t block = static_cast<std::size_t>(half) * h * w;
        auto lo = TensorT<T>::zeros({n_batch, half, h, w});
        auto hi = TensorT<T>::zeros({n_batch, half, h, w});
        for (int n = 0; n < n_batch; ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * c_out * h * w;
            std::copy(y.data().begin() + base, y.data().begin() + base + block,
                      lo.data().begin() + n * block);
            std::copy(y.data().begin() + base + block, y.data().begin() + base + 2 * block,
                      hi.data().begin() + n * block);
        }
        if (tape && y.requires_grad()) {
            lo.set_requires_grad(true);
            hi.set_requires_grad(true);
            tape->record({y}, lo, [y = y, lo, n_batch, c_out, block, h, w]() mutable {
                auto& gy = y.grad();
                const auto& g = lo.grad();
                for (int n = 0; n < n_batch; ++n) {
                    const std::size_t base = static_cast<std::size_t>(n) * c_out * h * w;
                    for (std::size_t i = 0; i < block; ++i) gy[base + i] += g[n * block + i];
                }
            });
            tape->record({y}, hi, [y = y, hi, n_batch, c_out, block, h, w]() mutable {
                auto& gy = y.grad();
                const auto& g = hi.grad();
                for (int n = 0; n < n_batch; ++n) {
                    const std::size_t base = static_cast<std::size_t>(n) * c_out * h * w;
                    for (std::size_t i = 0; i < block; ++i) {
                        gy[base + block + i] += g[n * block + i];
                    }
                }
            });
        }
        y = add(lo, hi, tape);
    } else if (p.proj_weight.dim(1) != c_out) {
        throw ShapeError("gsconv projection expects a [C," + std::to_string(c_out) +
                         ",1,1] weight, got " + p.proj_weight.shape_str());
    }
    return conv2d(y, p.proj_weight, p.proj_bias, 1, 0, 1, tape);
}

enum class Variant { baseline, improved };

inline Variant parse_variant(const std::string& name) {
    if (name == "baseline") return Variant::baseline;
    if (name == "improved") return Variant::improved;
    throw ConfigError("unknown variant '" + name + "' (expected baseline or improved)");
}

inline std::string variant_name(Variant v) {
    return v == Variant::baseline ? "baseline" : "improved";
}

template <class T>
struct DoubleConvParamsT {
    Variant variant = Variant::baseline;
    // baseline: two dense 3x3 convs
    TensorT<T> w1, b1, w2, b2;
    // improved: two grouped-shift convs plus channel attention
    GsconvParamsT<T> gs1, gs2;
    TensorT<T> eca_kernel;
};

using DoubleConvParams = DoubleConvParamsT<float>;

template <class T>
TensorT<T> double_conv_block(const TensorT<T>& x, const DoubleConvParamsT<T>& p,
                             TapeT<T>* tape = nullptr) {
    if (p.variant == Variant::baseline) {
        auto h = relu(conv2d(x, p.w1, p.b1, 1, 1, 1, tape), tape);
        return relu(conv2d(h, p.w2, p.b2, 1, 1, 1, tape), tape);
    }
    auto h = relu(gsconv_forward(x, p.gs1, tape), tape);
    h = relu(gsconv_forward(h, p.gs2, tape), tape);
    return eca_forward(h, p.eca_kernel, tape);
}

// Largest usable group count for a channel pair: group convolution needs the
// group count to divide both sides, so narrow layers (the 1-channel stem in
// particular) fall back toward dense convolution.
inline int effective_groups(int requested, int c_in, int c_out) {
    return std::gcd(requested, std::gcd(c_in, c_out));
}

}  // namespace gseunet
