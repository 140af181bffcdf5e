#pragma once

// Dense f64 tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node. Leaves are created by the
// factory functions; every primitive in ops.hpp produces a new node and, when
// gradients are enabled and any operand requires them, records a backward
// closure linking it to its operands. backward() walks that graph once in
// reverse topological order and then releases it.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lrdif {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool consumed = false;
    const char* kind = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const { return shape().at(axis); }
    std::size_t numel() const;

    std::span<const double> values() const;
    double item() const;  // single-element tensors only
    double at(std::size_t flat_index) const { return values()[flat_index]; }

    bool requires_grad() const;
    // Leaves only: toggles participation in future graphs.
    void set_requires_grad(bool flag);
    bool is_leaf() const;

    bool has_grad() const;
    // Accumulated gradient as a constant tensor (zeros when none was accumulated).
    Tensor grad() const;
    std::span<const double> grad_values() const;
    void zero_grad();

    // In-place update of a leaf's values (optimizer steps, checkpoint loads,
    // finite-difference probes). Throws on non-leaf tensors.
    std::span<double> mutable_values();
    void assign(std::span<const double> values);

    // Constant copy sharing no graph history.
    Tensor detach() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// Reverse sweep from a scalar loss; accumulates d(loss)/d(leaf) into every
// participating leaf that requires grad, then consumes the graph.
void backward(const Tensor& loss);

bool grad_enabled();

// Suspends graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

}  // namespace lrdif
