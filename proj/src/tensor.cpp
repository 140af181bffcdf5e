#include "lrdif/tensor.hpp"

#include <algorithm>
#include <unordered_set>
#include <utility>

#include "lrdif/errors.hpp"

namespace lrdif {

namespace {
thread_local int no_grad_depth = 0;

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
    if (!node) throw std::logic_error("use of an undefined tensor");
    return *node;
}
}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

bool grad_enabled() { return no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto d : shape)
        if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != values.size())
        throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return checked(node_).shape; }
std::size_t Tensor::numel() const { return checked(node_).value.size(); }
std::span<const double> Tensor::values() const { return checked(node_).value; }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    if (!is_leaf()) throw std::logic_error("set_requires_grad on a non-leaf tensor");
    node_->requires_grad = flag;
}

bool Tensor::is_leaf() const {
    const auto& n = checked(node_);
    return n.parents.empty() && !n.backward_fn && !n.consumed;
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

Tensor Tensor::grad() const {
    const auto& n = checked(node_);
    if (n.grad.empty()) return Tensor::zeros(n.shape);
    return Tensor::from(n.shape, n.grad);
}

std::span<const double> Tensor::grad_values() const { return checked(node_).grad; }

void Tensor::zero_grad() {
    checked(node_);
    node_->grad.clear();
}

std::span<double> Tensor::mutable_values() {
    if (!is_leaf()) throw std::logic_error("mutable_values on a non-leaf tensor");
    return node_->value;
}

void Tensor::assign(std::span<const double> values) {
    auto dst = mutable_values();
    if (values.size() != dst.size())
        throw ShapeError("assign: expected " + std::to_string(dst.size()) + " values, got " +
                         std::to_string(values.size()));
    std::copy(values.begin(), values.end(), dst.begin());
}

Tensor Tensor::detach() const { return Tensor::from(shape(), checked(node_).value); }

void backward(const Tensor& loss) {
    if (!loss.defined()) throw std::logic_error("backward on undefined tensor");
    if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    auto root = loss.node();
    if (root->consumed) throw std::logic_error("backward: graph already consumed");
    if (!root->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
    for (detail::Node* node : order) {
        if (node->backward_fn || !node->parents.empty()) {
            node->backward_fn = nullptr;
            node->parents.clear();
            node->grad.clear();
            node->grad.shrink_to_fit();
            node->consumed = true;
        }
    }
}

}  // namespace lrdif
