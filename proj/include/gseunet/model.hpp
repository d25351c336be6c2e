#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gseunet/blocks.hpp"
#include "gseunet/optim.hpp"
#include "gseunet/rng.hpp"

namespace gseunet {

struct ModelConfig {
    Variant variant = Variant::improved;
    int input_size = 512;
    int depth = 4;
    int base_channels = 16;
    int classes = 2;
    int groups = 4;
    int eca_k = 3;
    int shift = -1;  // negative selects the derived default below
    Recombine recombine = Recombine::concat_project;

    // half the first-level group width, so shifted channels stay within
    // reach of their group neighbours
    int resolved_shift() const {
        if (shift >= 0) return shift;
        const int group_width = base_channels / (groups > 0 ? groups : 1);
        return group_width > 0 ? group_width / 2 : 0;
    }

    void validate() const {
        if (depth < 1) throw ConfigError("depth must be at least 1");
        if (base_channels < 1) throw ConfigError("base_channels must be positive");
        if (classes != 2) {
            throw ConfigError("the segmenter is two-class; classes must be 2, got " +
                              std::to_string(classes));
        }
        if (groups < 1) throw ConfigError("groups must be positive");
        const int div = 1 << depth;
        if (input_size < div || input_size % div != 0) {
            throw ConfigError("input_size " + std::to_string(input_size) +
                              " must be a positive multiple of 2^depth = " + std::to_string(div));
        }
        const std::int64_t bottleneck = static_cast<std::int64_t>(base_channels) << depth;
        if (bottleneck % groups != 0) {
            throw ConfigError("bottleneck channel count " + std::to_string(bottleneck) +
                              " is not divisible by groups " + std::to_string(groups));
        }
        if (eca_k < 1 || eca_k % 2 == 0) {
            throw ConfigError("eca_k must be odd and positive, got " + std::to_string(eca_k));
        }
        if (eca_k > base_channels) {
            throw ConfigError("eca_k " + std::to_string(eca_k) +
                              " exceeds the narrowest channel count " +
                              std::to_string(base_channels));
        }
        if (resolved_shift() >= base_channels) {
            throw ConfigError("shift " + std::to_string(resolved_shift()) +
                              " must be smaller than the narrowest layer width " +
                              std::to_string(base_channels));
        }
        if (recombine == Recombine::add && base_channels % 2 != 0) {
            throw ConfigError("add recombination needs even channel counts; base_channels is " +
                              std::to_string(base_channels));
        }
    }
};

struct Model {
    ModelConfig config;
    ParamList params;
};

inline std::size_t count_parameters(const Model& m) {
    std::size_t total = 0;
    for (const auto& [name, t] : m.params) total += t.size();
    return total;
}

namespace detail {

inline Tensor init_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    auto t = Tensor::zeros(std::move(shape));
    const float bound = std::sqrt(1.0f / static_cast<float>(fan_in));
    for (auto& v : t.data()) v = rng.uniform_f(-bound, bound);
    return t;
}

inline void add_block_params(Model& m, const std::string& prefix, int cin, int cout,
                             const ModelConfig& cfg, Rng& rng) {
    auto& P = m.params;
    if (cfg.variant == Variant::baseline) {
        P.emplace_back(prefix + ".conv1.weight", init_uniform({cout, cin, 3, 3}, cin * 9, rng));
        P.emplace_back(prefix + ".conv1.bias", Tensor::zeros({cout}));
        P.emplace_back(prefix + ".conv2.weight", init_uniform({cout, cout, 3, 3}, cout * 9, rng));
        P.emplace_back(prefix + ".conv2.bias", Tensor::zeros({cout}));
        return;
    }
    const int proj_in = cfg.recombine == Recombine::add ? cout / 2 : cout;
    const int g1 = effective_groups(cfg.groups, cin, cout);
    P.emplace_back(prefix + ".gs1.weight",
                   init_uniform({cout, cin / g1, 3, 3}, (cin / g1) * 9, rng));
    P.emplace_back(prefix + ".gs1.bias", Tensor::zeros({cout}));
    P.emplace_back(prefix + ".gs1.proj_weight",
                   init_uniform({cout, proj_in, 1, 1}, proj_in, rng));
    P.emplace_back(prefix + ".gs1.proj_bias", Tensor::zeros({cout}));
    const int g2 = effective_groups(cfg.groups, cout, cout);
    P.emplace_back(prefix + ".gs2.weight",
                   init_uniform({cout, cout / g2, 3, 3}, (cout / g2) * 9, rng));
    P.emplace_back(prefix + ".gs2.bias", Tensor::zeros({cout}));
    P.emplace_back(prefix + ".gs2.proj_weight",
                   init_uniform({cout, proj_in, 1, 1}, proj_in, rng));
    P.emplace_back(prefix + ".gs2.proj_bias", Tensor::zeros({cout}));
    P.emplace_back(prefix + ".eca.kernel", init_uniform({cfg.eca_k}, cfg.eca_k, rng));
}

}  // namespace detail

// Parameters are created in forward-execution order with stable names, which
// fixes both the checkpoint layout and the sequence of init draws.
inline Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.config = cfg;
    Rng rng(seed);
    int cin = 1;
    for (int i = 0; i < cfg.depth; ++i) {
        const int cout = cfg.base_channels << i;
        detail::add_block_params(m, "enc" + std::to_string(i), cin, cout, cfg, rng);
        cin = cout;
    }
    detail::add_block_params(m, "bottleneck", cin, cfg.base_channels << cfg.depth, cfg, rng);
    for (int i = cfg.depth - 1; i >= 0; --i) {
        const int cout = cfg.base_channels << i;
        m.params.emplace_back("up" + std::to_string(i) + ".weight",
                              detail::init_uniform({2 * cout, cout, 2, 2}, 2 * cout, rng));
        detail::add_block_params(m, "dec" + std::to_string(i), 2 * cout, cout, cfg, rng);
    }
    m.params.emplace_back("head.weight",
                          detail::init_uniform({cfg.classes, cfg.base_channels, 1, 1},
                                               cfg.base_channels, rng));
    m.params.emplace_back("head.bias", Tensor::zeros({cfg.classes}));
    return m;
}

template <class T>
struct ParamLookupT {
    const ParamListT<T>& list;

    const TensorT<T>& operator()(const std::string& name) const {
        for (const auto& [n, t] : list) {
            if (n == name) return t;
        }
        throw UsageError("model parameter '" + name + "' is missing");
    }
};

namespace detail {

template <class T>
DoubleConvParamsT<T> block_params(const ParamLookupT<T>& P, const std::string& prefix,
                                  const ModelConfig& cfg, int cin, int cout) {
    DoubleConvParamsT<T> p;
    p.variant = cfg.variant;
    if (cfg.variant == Variant::baseline) {
        p.w1 = P(prefix + ".conv1.weight");
        p.b1 = P(prefix + ".conv1.bias");
        p.w2 = P(prefix + ".conv2.weight");
        p.b2 = P(prefix + ".conv2.bias");
        return p;
    }
    p.gs1.weight = P(prefix + ".gs1.weight");
    p.gs1.bias = P(prefix + ".gs1.bias");
    p.gs1.proj_weight = P(prefix + ".gs1.proj_weight");
    p.gs1.proj_bias = P(prefix + ".gs1.proj_bias");
    p.gs1.groups = effective_groups(cfg.groups, cin, cout);
    p.gs1.shift = cfg.resolved_shift();
    p.gs1.recombine = cfg.recombine;
    p.gs2 = p.gs1;
    p.gs2.weight = P(prefix + ".gs2.weight");
    p.gs2.bias = P(prefix + ".gs2.bias");
    p.gs2.proj_weight = P(prefix + ".gs2.proj_weight");
    p.gs2.proj_bias = P(prefix + ".gs2.proj_bias");
    p.gs2.groups = effective_groups(cfg.groups, cout, cout);
    p.eca_kernel = P(prefix + ".eca.kernel");
    return p;
}

}  // namespace detail

// Forward pass shared by the float production path and the double-precision
// derivative probes. Encoder features are kept as skip connections; the
// decoder concatenates the upsampled path first, then the skip.
template <class T>
TensorT<T> model_forward_t(const ModelConfig& cfg, const ParamListT<T>& params,
                           const TensorT<T>& x, TapeT<T>* tape = nullptr) {
    if (x.rank() != 4 || x.dim(1) != 1) {
        throw ShapeError("model input must be [N,1,H,W], got " + x.shape_str());
    }
    const int div = 1 << cfg.depth;
    if (x.dim(2) % div != 0 || x.dim(3) % div != 0) {
        throw ShapeError("model input spatial size " + std::to_string(x.dim(2)) + "x" +
                         std::to_string(x.dim(3)) + " must be divisible by " +
                         std::to_string(div));
    }
    ParamLookupT<T> P{params};
    std::vector<TensorT<T>> skips;
    skips.reserve(static_cast<std::size_t>(cfg.depth));
    TensorT<T> h = x;
    int cin = 1;
    for (int i = 0; i < cfg.depth; ++i) {
        const int cout = cfg.base_channels << i;
        h = double_conv_block(h, detail::block_params(P, "enc" + std::to_string(i), cfg, cin, cout),
                              tape);
        skips.push_back(h);
        h = max_pool2d(h, tape);
        cin = cout;
    }
    h = double_conv_block(
        h, detail::block_params(P, "bottleneck", cfg, cin, cfg.base_channels << cfg.depth), tape);
    for (int i = cfg.depth - 1; i >= 0; --i) {
        const int cout = cfg.base_channels << i;
        h = transposed_conv2d(h, P("up" + std::to_string(i) + ".weight"), tape);
        h = concat_channels(h, skips[static_cast<std::size_t>(i)], tape);
        h = double_conv_block(h, detail::block_params(P, "dec" + std::to_string(i), cfg, 2 * cout, cout),
                              tape);
    }
    return conv2d(h, P("head.weight"), P("head.bias"), 1, 0, 1, tape);
}

inline Tensor model_forward(const Model& m, const Tensor& x, Tape* tape = nullptr) {
    return model_forward_t<float>(m.config, m.params, x, tape);
}

}  // namespace gseunet
