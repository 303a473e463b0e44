#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "slpnet/tensor.hpp"

namespace slpnet {

namespace detail {

template <typename T>
struct Node {
    Tensor4<T> value;
    Tensor4<T> grad; // lazily allocated to value's shape
    bool requires_grad = false;

    /// Allocate (zeroed) gradient storage matching the value.
    Tensor4<T> &ensure_grad() {
        if (!grad.same_shape(value)) grad = Tensor4<T>(value.n, value.c, value.h, value.w);
        return grad;
    }
};

} // namespace detail

/// Shared handle to a tensor in the autodiff graph. Copying a Var aliases
/// the underlying value and gradient storage.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor4<T> value, bool requires_grad = false)
        : node_(std::make_shared<detail::Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    bool defined() const { return node_ != nullptr; }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    Tensor4<T> &value() { return node_->value; }
    const Tensor4<T> &value() const { return node_->value; }

    /// Gradient of the same shape as the value; allocates zeroed storage on
    /// first access.
    Tensor4<T> &grad() { return node_->ensure_grad(); }

    void zero_grad() {
        if (node_) node_->grad = Tensor4<T>();
    }

    std::shared_ptr<detail::Node<T>> node() const { return node_; }

private:
    std::shared_ptr<detail::Node<T>> node_;
};

/// Ordered record of executed operations. Each recorded step accumulates
/// input gradients from output gradients; backward() replays the steps in
/// exact reverse execution order. One tape is a single-threaded unit.
template <typename T>
class Tape {
public:
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

    size_t size() const { return steps_.size(); }

    void backward() {
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    /// Seed d(loss)/d(loss) = 1 and run the reverse sweep.
    void backward(Var<T> &loss) {
        if (loss.value().size() != 1)
            throw ShapeError("Tape::backward: loss must be scalar, got " +
                             loss.value().shape_str());
        loss.grad().data[0] += T(1);
        backward();
    }

    void clear() { steps_.clear(); }

private:
    std::vector<std::function<void()>> steps_;
};

} // namespace slpnet
