#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gseunet/tensor.hpp"

namespace gseunet {

// Parameters are carried as an ordered (name, tensor) list so updates,
// checkpoints, and diagnostics all agree on one traversal order.
template <class T>
using ParamListT = std::vector<std::pair<std::string, TensorT<T>>>;

using ParamList = ParamListT<float>;

enum class OptimizerKind { adam, sgd };

template <class T>
class OptimizerT {
public:
    OptimizerT(OptimizerKind kind, T lr) : kind_(kind), lr_(lr) {}

    OptimizerKind kind() const { return kind_; }
    T lr() const { return lr_; }
    std::int64_t steps_taken() const { return t_; }

    // One update over every parameter. Gradients are validated first across
    // the whole list; a non-finite value anywhere aborts before any tensor
    // has been touched, so a poisoned step never corrupts the model.
    void step(ParamListT<T>& params) {
        for (auto& [name, p] : params) {
            if (!p.has_grad()) {
                throw UsageError("optimizer step: parameter '" + name + "' has no gradient");
            }
            for (T g : p.grad()) {
                if (!std::isfinite(g)) {
                    throw NumericError("non-finite gradient in parameter '" + name + "'");
                }
            }
        }
        ++t_;
        if (kind_ == OptimizerKind::sgd) {
            for (auto& [name, p] : params) {
                auto& val = p.data();
                const auto& g = p.grad();
                for (std::size_t i = 0; i < val.size(); ++i) val[i] -= lr_ * g[i];
            }
            return;
        }
        if (slots_.size() != params.size()) {
            slots_.assign(params.size(), Slot{});
            for (std::size_t s = 0; s < params.size(); ++s) {
                slots_[s].m.assign(params[s].second.size(), T(0));
                slots_[s].v.assign(params[s].second.size(), T(0));
            }
        }
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (std::size_t s = 0; s < params.size(); ++s) {
            auto& val = params[s].second.data();
            const auto& g = params[s].second.grad();
            auto& m = slots_[s].m;
            auto& v = slots_[s].v;
            for (std::size_t i = 0; i < val.size(); ++i) {
                m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
                const T mhat = m[i] / bc1;
                const T vhat = v[i] / bc2;
                val[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    struct Slot {
        std::vector<T> m, v;
    };

    OptimizerKind kind_;
    T lr_;
    T beta1_ = T(0.9);
    T beta2_ = T(0.999);
    T eps_ = T(1e-8);
    std::int64_t t_ = 0;
    std::vector<Slot> slots_;
};

using Optimizer = OptimizerT<float>;

inline OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd") return OptimizerKind::sgd;
    throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

}  // namespace gseunet
