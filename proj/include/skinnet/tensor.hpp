#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace skinnet {

/// Extents of a tensor, outermost first. Image batches are (batch, channel, height, width).
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor with an optional gradient buffer.
///
/// A Tensor is a handle: copies share storage, the way autograd frameworks
/// pass activations around. Use clone() for an independent deep copy.
template <typename Real>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, Real fill = Real(0), bool requires_grad = false)
        : impl_(std::make_shared<Impl>()) {
        impl_->data.assign(shape_numel(shape), fill);
        impl_->shape = std::move(shape);
        impl_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false)
        : impl_(std::make_shared<Impl>()) {
        if (data.size() != shape_numel(shape))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
        impl_->requires_grad = requires_grad;
    }

    static Tensor scalar(Real value, bool requires_grad = false) {
        return Tensor(Shape{}, value, requires_grad);
    }

    bool defined() const { return static_cast<bool>(impl_); }

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<Real> data() { return impl_->data; }
    std::span<const Real> data() const { return impl_->data; }
    Real& operator[](std::size_t i) { return impl_->data[i]; }
    Real operator[](std::size_t i) const { return impl_->data[i]; }

    /// Value of a one-element tensor.
    Real item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }

    bool has_grad() const { return !impl_->grad.empty() || numel() == 0; }
    std::span<Real> grad() { return impl_->grad; }
    std::span<const Real> grad() const { return impl_->grad; }

    /// Allocates a zeroed gradient buffer if none exists; returns it.
    std::span<Real> ensure_grad() {
        if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), Real(0));
        return impl_->grad;
    }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
    }
    void drop_grad() { impl_->grad.clear(); }

    Tensor clone() const {
        Tensor copy(impl_->shape, impl_->data, impl_->requires_grad);
        return copy;
    }

    /// True when both handles refer to the same storage.
    bool is(const Tensor& other) const { return impl_ == other.impl_; }
    const void* id() const { return impl_.get(); }

private:
    struct Impl {
        Shape shape;
        std::vector<Real> data;
        std::vector<Real> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

/// Ordered record of differentiable operations.
///
/// Each node keeps its inputs, its output, and a closure that reads the
/// output gradient and accumulates into the inputs' gradients.
template <typename Real>
class Tape {
public:
    using BackwardRule = std::function<void()>;

    void record(std::vector<Tensor<Real>> inputs, Tensor<Real> output, BackwardRule rule) {
        nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(rule)});
    }

    bool produced(const Tensor<Real>& t) const;
    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    void clear() { nodes_.clear(); }

    /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate; the
    /// caller zeroes them between steps.
    void backward(const Tensor<Real>& loss);

private:
    struct Node {
        std::vector<Tensor<Real>> inputs;
        Tensor<Real> output;
        BackwardRule rule;
    };
    std::vector<Node> nodes_;
};

template <typename Real>
bool Tape<Real>::produced(const Tensor<Real>& t) const {
    for (const auto& node : nodes_)
        if (node.output.is(t)) return true;
    return false;
}

template <typename Real>
void Tape<Real>::backward(const Tensor<Real>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward() needs a scalar loss");

    std::size_t root = nodes_.size();
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        if (nodes_[i].output.is(loss)) {
            root = i;
            break;
        }
    }
    if (root == nodes_.size()) throw std::invalid_argument("backward(): loss was not recorded on this tape");

    // Intermediate results start from zero; leaves keep what they have.
    for (std::size_t i = 0; i <= root; ++i) {
        nodes_[i].output.ensure_grad();
        nodes_[i].output.zero_grad();
    }
    Tensor<Real> seed = loss;
    seed.grad()[0] = Real(1);

    std::unordered_map<const void*, std::size_t> producer;
    for (std::size_t i = 0; i <= root; ++i) producer[nodes_[i].output.id()] = i;

    std::vector<bool> live(root + 1, false);
    live[root] = true;
    for (std::size_t i = root + 1; i-- > 0;) {
        if (!live[i]) continue;
        auto& node = nodes_[i];
        for (auto& in : node.inputs) {
            if (in.requires_grad()) in.ensure_grad();
            if (auto it = producer.find(in.id()); it != producer.end() && it->second < i) live[it->second] = true;
        }
        node.rule();
    }
}

template <typename Real>
void backward(const Tensor<Real>& loss, Tape<Real>& tape) {
    tape.backward(loss);
}

}  // namespace skinnet
