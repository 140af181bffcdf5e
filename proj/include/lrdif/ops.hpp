#pragma once

// Differentiable primitives. Every model layer is composed from these.
//
// Broadcasting is deliberately narrow: add/mul accept equal shapes or a
// single-element right operand, and add additionally accepts a right operand
// whose shape is a suffix of the left one (bias-add). Anything else needs an
// explicit reshape/transpose/matmul.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "lrdif/tensor.hpp"

namespace lrdif {

enum class PrimitiveKind {
    matmul,
    add,
    mul,
    reshape,
    transpose,
    concat,
    softmax,
    log_softmax,
    layer_norm,
    gelu,
    conv1x1,
    depthwise_conv3x3,
    mean,
    sum,
    scale,
};

std::string_view primitive_name(PrimitiveKind kind);
std::optional<PrimitiveKind> primitive_from_name(std::string_view name);

// A primitive plus its static attributes, for table-driven dispatch.
struct Primitive {
    PrimitiveKind kind = PrimitiveKind::add;
    int axis = -1;                    // softmax, log_softmax, layer_norm, concat, mean
    double eps = 1e-5;                // layer_norm
    double factor = 1.0;              // scale
    Shape shape;                      // reshape target
    std::vector<std::size_t> perm;    // transpose
};

Tensor apply_primitive(const Primitive& primitive, std::span<const Tensor> inputs);

namespace ops {

inline constexpr double kLayerNormEps = 1e-5;

// [..., m, k] x [k, n] -> [..., m, n]  (shared right operand), or
// [B..., m, k] x [B..., k, n] -> [B..., m, n]  (batched, equal leading dims).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a, std::vector<std::size_t> perm);
// Swap the last two axes.
Tensor transpose_last2(const Tensor& a);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
Tensor softmax(const Tensor& a, int axis = -1);
Tensor log_softmax(const Tensor& a, int axis = -1);
// Normalizes to zero mean / unit variance along `axis` (no affine part).
Tensor layer_norm(const Tensor& a, int axis = -1, double eps = kLayerNormEps);
// Exact (erf-based) GELU.
Tensor gelu(const Tensor& a);
// x[B, Cin, H, W], weight[Cout, Cin], optional bias[Cout] -> [B, Cout, H, W].
Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias = {});
// x[B, C, H, W], weight[C, 3, 3]; zero padding 1, spatial shape preserved.
Tensor depthwise_conv3x3(const Tensor& x, const Tensor& weight);
// Mean over one axis (removed from the result).
Tensor mean(const Tensor& a, int axis);
// Sum of all elements -> scalar.
Tensor sum(const Tensor& a);

}  // namespace ops

}  // namespace lrdif
