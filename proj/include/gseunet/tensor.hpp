#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gseunet/errors.hpp"

namespace gseunet {

// Dense row-major tensor handle. Copying a TensorT copies the handle; the
// storage (values + gradient) is shared, which is what lets recorded tape
// nodes and optimizer state refer to the same parameter. The scalar type is
// a template parameter so the float32 production path and the float64
// finite-difference oracle run through identical code.
template <class T>
class TensorT {
public:
    using scalar_type = T;

    TensorT() = default;

    static TensorT zeros(std::vector<int> shape) {
        return TensorT(std::move(shape), T(0));
    }

    static TensorT full(std::vector<int> shape, T value) {
        return TensorT(std::move(shape), value);
    }

    static TensorT from_data(std::vector<int> shape, std::vector<T> values) {
        TensorT t(std::move(shape), T(0));
        if (values.size() != t.size()) {
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + t.shape_str() + " (expects " +
                             std::to_string(t.size()) + " values)");
        }
        t.s_->data = std::move(values);
        return t;
    }

    static TensorT scalar(T value) { return from_data({1}, {value}); }

    bool defined() const { return s_ != nullptr; }

    const std::vector<int>& shape() const { return s_->shape; }
    int rank() const { return static_cast<int>(s_->shape.size()); }
    int dim(int i) const { return s_->shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return s_->data.size(); }

    std::vector<T>& data() { return s_->data; }
    const std::vector<T>& data() const { return s_->data; }

    bool requires_grad() const { return s_ && s_->requires_grad; }

    TensorT& set_requires_grad(bool on) {
        s_->requires_grad = on;
        if (on && s_->grad.size() != s_->data.size()) {
            s_->grad.assign(s_->data.size(), T(0));
        }
        return *this;
    }

    bool has_grad() const { return s_ && s_->grad.size() == s_->data.size(); }

    void ensure_grad() {
        if (s_->grad.size() != s_->data.size()) s_->grad.assign(s_->data.size(), T(0));
    }

    void zero_grad() {
        if (has_grad()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
    }

    std::vector<T>& grad() { return s_->grad; }
    const std::vector<T>& grad() const { return s_->grad; }

    T item() const {
        if (size() != 1) {
            throw UsageError("item() requires a single-element tensor, got shape " + shape_str());
        }
        return s_->data[0];
    }

    // Identity of the underlying storage, for aliasing checks.
    const void* storage_id() const { return s_.get(); }

    std::string shape_str() const {
        std::string out = "[";
        for (std::size_t i = 0; i < s_->shape.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(s_->shape[i]);
        }
        return out + "]";
    }

private:
    struct Storage {
        std::vector<int> shape;
        std::vector<T> data;
        std::vector<T> grad;
        bool requires_grad = false;
    };

    TensorT(std::vector<int> shape, T fill) : s_(std::make_shared<Storage>()) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw ShapeError("negative dimension " + std::to_string(d));
            n *= static_cast<std::size_t>(d);
        }
        s_->shape = std::move(shape);
        s_->data.assign(n, fill);
    }

    std::shared_ptr<Storage> s_;
};

using Tensor = TensorT<float>;

template <class To, class From>
TensorT<To> tensor_cast(const TensorT<From>& src) {
    auto out = TensorT<To>::zeros(src.shape());
    for (std::size_t i = 0; i < src.size(); ++i) {
        out.data()[i] = static_cast<To>(src.data()[i]);
    }
    return out;
}

// One recorded operation: the tensors it read, the tensor it produced, and
// a rule that propagates output.grad() into each input's grad().
template <class T>
class TapeT {
public:
    struct Node {
        std::vector<TensorT<T>> inputs;
        TensorT<T> output;
        std::function<void()> backward;
    };

    void record(std::vector<TensorT<T>> inputs, TensorT<T> output, std::function<void()> fn) {
        nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(fn)});
    }

    const std::vector<Node>& nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

using Tape = TapeT<float>;

// Reverse pass: seed d(loss)/d(loss) = 1 and replay the tape once, newest
// node first. Recording order guarantees every node's inputs were produced
// earlier, so a single reverse sweep is a valid topological visit.
template <class T>
void backward(const TensorT<T>& loss, TapeT<T>& tape) {
    if (loss.size() != 1) {
        throw UsageError("backward() requires a scalar loss, got shape " + loss.shape_str());
    }
    for (const auto& node : tape.nodes()) {
        TensorT<T> out = node.output;
        out.ensure_grad();
        for (const auto& in : node.inputs) {
            if (in.requires_grad()) {
                TensorT<T> t = in;
                t.ensure_grad();
            }
        }
    }
    TensorT<T> seed = loss;
    seed.ensure_grad();
    seed.grad()[0] = T(1);
    const auto& nodes = tape.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        it->backward();
    }
}

}  // namespace gseunet
