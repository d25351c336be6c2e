#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "gseunet/ops.hpp"
#include "gseunet/rng.hpp"
#include "gseunet/tensor.hpp"

// Finite-difference verification of the recorded backward rules. The graph
// under test is a generic callable instantiated twice: once at S (float by
// default), where the tape produces analytic gradients, and once at double,
// where central differences probe the same computation with ~1e-10 truncation
// error. The two derivative estimates must agree to a small relative
// tolerance. Checking at S = float also measures single-precision rounding in
// the backward pass (~1e-4 on unlucky elements); S = double takes rounding
// out of the picture and isolates the correctness of the rules themselves.

namespace gseunet {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int worst_input = -1;
    std::size_t worst_element = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    // whole-vector agreement: ||a - fd|| / (||a|| + ||fd||). Piecewise-linear
    // graphs make single elements ill-posed under probes that shift a whole
    // channel across a relu or pooling kink; the norm view stays meaningful.
    double l2_rel = 0.0;

    std::string describe() const {
        std::ostringstream os;
        os << "max rel err " << max_rel_err << " at input " << worst_input << " element "
           << worst_element << " (analytic " << analytic << ", numeric " << numeric
           << "), l2 rel " << l2_rel;
        return os.str();
    }
};

// The floor keeps the ratio meaningful when both derivatives are near zero.
inline double gradcheck_rel_err(double a, double b) {
    const double scale = std::max({std::fabs(a), std::fabs(b), 1e-3});
    return std::fabs(a - b) / scale;
}

template <class S = float, class F>
GradCheckReport check_gradients(F&& graph, const std::vector<Tensor>& inputs,
                                double fd_step = 1e-5) {
    std::vector<TensorT<S>> fins;
    fins.reserve(inputs.size());
    for (const auto& t : inputs) {
        auto c = tensor_cast<S>(t);
        c.set_requires_grad(true);
        fins.push_back(c);
    }
    TapeT<S> tape;
    TensorT<S> loss = graph(fins, &tape);
    if (loss.size() != 1) {
        throw UsageError("gradient check requires a graph with a scalar output");
    }
    backward(loss, tape);

    std::vector<TensorT<double>> dins;
    dins.reserve(inputs.size());
    for (const auto& t : inputs) dins.push_back(tensor_cast<double>(t));
    auto eval = [&]() {
        return graph(dins, static_cast<TapeT<double>*>(nullptr)).item();
    };

    GradCheckReport rep;
    double diff_sq = 0.0, a_sq = 0.0, fd_sq = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto& vals = dins[i].data();
        const auto& analytic = fins[i].grad();
        for (std::size_t j = 0; j < vals.size(); ++j) {
            const double saved = vals[j];
            vals[j] = saved + fd_step;
            const double above = eval();
            vals[j] = saved - fd_step;
            const double below = eval();
            vals[j] = saved;
            const double fd = (above - below) / (2.0 * fd_step);
            const double a = analytic[j];
            diff_sq += (a - fd) * (a - fd);
            a_sq += a * a;
            fd_sq += fd * fd;
            const double err = gradcheck_rel_err(a, fd);
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst_input = static_cast<int>(i);
                rep.worst_element = j;
                rep.analytic = a;
                rep.numeric = fd;
            }
        }
    }
    const double denom = std::sqrt(a_sq) + std::sqrt(fd_sq);
    rep.l2_rel = denom > 0.0 ? std::sqrt(diff_sq) / denom : 0.0;
    return rep;
}

// Reduces an arbitrary op output to a scalar through fixed random weights so
// every output element influences the loss with a distinct coefficient.
template <class T>
TensorT<T> weighted_sum(const TensorT<T>& y, const Tensor& weights, TapeT<T>* tape) {
    return sum(mul(y, tensor_cast<T>(weights), tape), tape);
}

namespace detail {

inline Tensor uniform_tensor(const std::vector<int>& shape, Rng& rng, float lo, float hi) {
    auto t = Tensor::zeros(shape);
    for (auto& v : t.data()) v = rng.uniform_f(lo, hi);
    return t;
}

// values pushed away from the relu kink so the difference quotient never
// straddles it
inline Tensor away_from_zero(const std::vector<int>& shape, Rng& rng) {
    auto t = Tensor::zeros(shape);
    for (auto& v : t.data()) {
        const float mag = rng.uniform_f(0.05f, 1.0f);
        v = rng.next_u32() % 2 == 0 ? mag : -mag;
    }
    return t;
}

// every 2x2 pooling window gets a clear winner so the argmax is stable under
// the probe step
inline Tensor with_pool_margin(const std::vector<int>& shape, Rng& rng) {
    const int n = shape[0], c = shape[1], h = shape[2], w = shape[3];
    for (int attempt = 0; attempt < 100; ++attempt) {
        auto t = uniform_tensor(shape, rng, -1.0f, 1.0f);
        bool ok = true;
        for (int nc = 0; nc < n * c && ok; ++nc) {
            const float* p = t.data().data() + static_cast<std::size_t>(nc) * h * w;
            for (int oy = 0; oy < h / 2 && ok; ++oy) {
                for (int ox = 0; ox < w / 2 && ok; ++ox) {
                    float vals[4] = {p[2 * oy * w + 2 * ox], p[2 * oy * w + 2 * ox + 1],
                                     p[(2 * oy + 1) * w + 2 * ox],
                                     p[(2 * oy + 1) * w + 2 * ox + 1]};
                    std::sort(vals, vals + 4);
                    if (vals[3] - vals[2] < 0.05f) ok = false;
                }
            }
        }
        if (ok) return t;
    }
    throw NumericError("could not draw a pooling input with distinct window maxima");
}

}  // namespace detail

struct GradCheckCase {
    std::string name;
    GradCheckReport report;
};

// Standard sweep over every differentiable op. Each case scalarizes through
// fixed random weights and checks analytic vs finite-difference gradients,
// with the analytic side evaluated at S.
template <class S = float>
std::vector<GradCheckCase> run_op_gradchecks(std::uint64_t seed = 1234) {
    std::vector<GradCheckCase> cases;
    int idx = 0;
    auto next_rng = [&]() { return Rng(mix_seed(seed, static_cast<std::uint64_t>(idx++))); };

    {
        Rng rng = next_rng();
        auto a = detail::uniform_tensor({2, 3}, rng, -1, 1);
        auto b = detail::uniform_tensor({2, 3}, rng, -1, 1);
        auto wf = detail::uniform_tensor({2, 3}, rng, -1, 1);
        cases.push_back({"add", check_gradients<S>(
                                    [wf](const auto& ins, auto* tape) {
                                        return weighted_sum(add(ins[0], ins[1], tape), wf, tape);
                                    },
                                    {a, b})});
    }
    {
        Rng rng = next_rng();
        auto a = detail::uniform_tensor({2, 3}, rng, -1, 1);
        auto b = detail::uniform_tensor({2, 3}, rng, -1, 1);
        auto wf = detail::uniform_tensor({2, 3}, rng, -1, 1);
        cases.push_back({"mul", check_gradients<S>(
                                    [wf](const auto& ins, auto* tape) {
                                        return weighted_sum(mul(ins[0], ins[1], tape), wf, tape);
                                    },
                                    {a, b})});
    }
    {
        Rng rng = next_rng();
        auto x = detail::uniform_tensor({3, 4}, rng, -1, 1);
        cases.push_back(
            {"sum", check_gradients<S>(
                        [](const auto& ins, auto* tape) { return sum(ins[0], tape); }, {x})});
    }
    {
        Rng rng = next_rng();
        auto x = detail::away_from_zero({2, 8}, rng);
        auto wf = detail::uniform_tensor({2, 8}, rng, -1, 1);
        cases.push_back({"relu", check_gradients<S>(
                                     [wf](const auto& ins, auto* tape) {
                                         return weighted_sum(relu(ins[0], tape), wf, tape);
                                     },
                                     {x})});
    }
    {
        Rng rng = next_rng();
        auto x = detail::uniform_tensor({2, 8}, rng, -3, 3);
        auto wf = detail::uniform_tensor({2, 8}, rng, -1, 1);
        cases.push_back({"sigmoid", check_gradients<S>(
                                        [wf](const auto& ins, auto* tape) {
                                            return weighted_sum(sigmoid(ins[0], tape), wf, tape);
                                        },
                                        {x})});
    }
    {
        Rng rng = next_rng();
        auto x = detail::uniform_tensor({2, 3, 5, 5}, rng, -1, 1);
        auto w = detail::uniform_tensor({4, 3, 3, 3}, rng, -0.5f, 0.5f);
        auto b = detail::uniform_tensor({4}, rng, -0.5f, 0.5f);
        auto wf = detail::uniform_tensor({2, 4, 5, 5}, rng, -1, 1);
        cases.push_back(
            {"conv2d", check_gradients<S>(
                           [wf](const auto& ins, auto* tape) {
                               return weighted_sum(conv2d(ins[0], ins[1], ins[2], 1, 1, 1, tape),
                                                   wf, tape);
                           },
                           {x, w, b})});
    }
    {
        Rng rng = next_rng();
        auto x = detail::uniform_tensor({1, 4, 4, 4}, rng, -1, 1);
        auto w = detail::uniform_tensor({6, 2, 3, 3}, rng, -0.5f, 0.5f);
        auto b = detail::uniform_tensor({6}, rng, -0.5f, 0.5f);
        auto wf = detail::uniform_tensor({1, 6, 4, 4}, rng, -1, 1);
        cases.push_back(
            {"conv2d_grouped",
             check_gradients<S>(
                 [wf](const auto& ins, auto* tape) {
                     return weighted_sum(conv2d(ins[0], ins[1], ins[2], 1, 1, 2, tape), wf, tape);
                 },
                 {x, w, b})});
    }
    {
        Rng rng = next_rng();
        auto x = detail::uniform_tensor({1, 2, 6, 6}, rng, -1, 1);
        auto w = detail::uniform_tensor({3, 2, 2, 2}, rng, -0.5f, 0.5f);
        auto wf = detail::uniform_tensor({1, 3, 3, 3}, rng, -1, 1);
        cases.push_back(
            {"conv2d_stride2",
             check_gradients<S>(
                 [wf](const auto& ins, auto* tape) {
                     return weighted_sum(conv2d(ins[0], ins[1], {}, 2, 0, 1, tape), wf, tape);
                 },
                 {x, w})});
    }
    {
        Rng rng = next_rng();
        auto v = detail::uniform_tensor({2, 8}, rng, -1, 1);
        auto k = detail::uniform_tensor({3}, rng, -1, 1);
        auto wf = detail::uniform_tensor({2, 8}, rng, -1, 1);
        cases.push_back(
            {"conv1d_channels",
             check_gradients<S>(
                 [wf](const auto& ins, auto* tape) {
                     return weighted_sum(conv1d_channels(ins[0], ins[1], tape), wf, tape);
                 },
                 {v, k})});
    }
    {
        Rng rng = next_rng();
        auto x = detail::with_pool_margin({1, 2, 4, 4}, rng);
        auto wf = detail::uniform_tensor({1, 2, 2, 2}, rng, -1, 1);
        cases.push_back({"max_pool2d", check_gradients<S>(
                                           [wf](const auto& ins, auto* tape) {
                                               return weighted_sum(max_pool2d(ins[0], tape), wf,
                                                                   tape);
                                           },
                                           {x})});
    }
    {
        Rng rng = next_rng();
        auto x = detail::uniform_tensor({1, 3, 3, 3}, rng, -1, 1);
        auto w = detail::uniform_tensor({3, 2, 2, 2}, rng, -0.5f, 0.5f);
        auto wf = detail::uniform_tensor({1, 2, 6, 6}, rng, -1, 1);
        cases.push_back(
            {"transposed_conv2d",
             check_gradients<S>(
                 [wf](const auto& ins, auto* tape) {
                     return weighted_sum(transposed_conv2d(ins[0], ins[1], tape), wf, tape);
                 },
                 {x, w})});
    }
    {
        Rng rng = next_rng();
        auto a = detail::uniform_tensor({1, 2, 3, 3}, rng, -1, 1);
        auto b = detail::uniform_tensor({1, 3, 3, 3}, rng, -1, 1);
        auto wf = detail::uniform_tensor({1, 5, 3, 3}, rng, -1, 1);
        cases.push_back(
            {"concat_channels",
             check_gradients<S>(
                 [wf](const auto& ins, auto* tape) {
                     return weighted_sum(concat_channels(ins[0], ins[1], tape), wf, tape);
                 },
                 {a, b})});
    }
    {
        Rng rng = next_rng();
        auto x = detail::uniform_tensor({2, 3, 4, 4}, rng, -1, 1);
        auto wf = detail::uniform_tensor({2, 3}, rng, -1, 1);
        cases.push_back({"global_avg_pool",
                         check_gradients<S>(
                             [wf](const auto& ins, auto* tape) {
                                 return weighted_sum(global_avg_pool(ins[0], tape), wf, tape);
                             },
                             {x})});
    }
    {
        Rng rng = next_rng();
        auto x = detail::uniform_tensor({2, 3, 4, 4}, rng, -1, 1);
        auto w = detail::uniform_tensor({2, 3}, rng, -1, 1);
        auto wf = detail::uniform_tensor({2, 3, 4, 4}, rng, -1, 1);
        cases.push_back(
            {"mul_channelwise",
             check_gradients<S>(
                 [wf](const auto& ins, auto* tape) {
                     return weighted_sum(mul_channelwise(ins[0], ins[1], tape), wf, tape);
                 },
                 {x, w})});
    }
    {
        Rng rng = next_rng();
        auto x = detail::uniform_tensor({2, 3, 3, 3}, rng, -2, 2);
        auto wf = detail::uniform_tensor({2, 3, 3, 3}, rng, -1, 1);
        cases.push_back({"softmax_channels",
                         check_gradients<S>(
                             [wf](const auto& ins, auto* tape) {
                                 return weighted_sum(softmax_channels(ins[0], tape), wf, tape);
                             },
                             {x})});
    }
    return cases;
}

}  // namespace gseunet
