#pragma once

// Named parameters and the handful of layer shapes the model is built from.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lrdif/ops.hpp"
#include "lrdif/rng.hpp"
#include "lrdif/tensor.hpp"

namespace lrdif {

class ParameterStore {
public:
    // Creates a zero-initialized trainable leaf; names must be unique.
    Tensor& create(const std::string& name, Shape shape);
    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    const std::map<std::string, Tensor>& all() const { return params_; }
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;
    std::size_t total_values() const;

    void zero_grad();
    // Marks every parameter under `prefix` as (non-)participating in gradients.
    void set_trainable(const std::string& prefix, bool trainable);

private:
    std::map<std::string, Tensor> params_;
};

using GradientMap = std::map<std::string, Tensor>;

// Runs backward(loss) and collects d(loss)/d(param) by name. Parameters the
// loss does not reach get a zero gradient and, when `disconnected` is given,
// are listed there.
GradientMap backward(const Tensor& loss, const ParameterStore& params,
                     std::vector<std::string>* disconnected = nullptr);

namespace init {
// N(0, gain^2 / fan_in), drawn from a stream keyed by (seed, name).
void scaled_normal(Tensor& t, std::uint64_t seed, const std::string& name, std::size_t fan_in, double gain = 1.0);
void constant(Tensor& t, double value);
}  // namespace init

// y = x W + b over the last axis; W stored [in, out].
struct Linear {
    Tensor weight;
    Tensor bias;
    std::size_t in = 0, out = 0;

    static Linear create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                         std::uint64_t seed, bool with_bias = true);
    Tensor operator()(const Tensor& x) const;
};

// Pointwise channel mixing on [B, C, H, W].
struct PointwiseConv {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]

    static PointwiseConv create(ParameterStore& store, const std::string& prefix, std::size_t in,
                                std::size_t out, std::uint64_t seed);
    Tensor operator()(const Tensor& x) const;
};

struct DepthwiseConv {
    Tensor weight;  // [C, 3, 3]

    static DepthwiseConv create(ParameterStore& store, const std::string& prefix, std::size_t channels,
                                std::uint64_t seed);
    Tensor operator()(const Tensor& x) const;
};

// [B, C, H, W] -> [B, C*f*f, H/f, W/f]; composed of reshape + transpose.
Tensor space_to_depth(const Tensor& x, std::size_t factor);

// Broadcasts per-sample channel vectors v[B, C] over the spatial extent of
// x[B, C, H, W] via an outer product with ones (keeps add/mul shape-exact).
Tensor expand_channels(const Tensor& v, std::size_t h, std::size_t w);

}  // namespace lrdif
