#pragma once

// Prior-extraction MLPs: FPEN_S1 maps [E_L(y), E_I(x)] to the EPR Z and
// FPEN_S2 maps E_I(x) to the conditional vector x_S2. Both share depth,
// hidden width and activations; only the first layer's input width differs.

#include <cstdint>
#include <string>
#include <vector>

#include "lrdif/nn.hpp"

namespace lrdif {

struct Fpen {
    std::vector<Linear> layers;

    static Fpen create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                       std::size_t out, int depth, std::uint64_t seed);
    std::size_t in_dim() const { return layers.front().in; }
    std::size_t out_dim() const { return layers.back().out; }
    // x[B, in] -> [B, out]; GELU between layers, none after the last.
    Tensor operator()(const Tensor& x) const;
};

// Z = FPEN_S1(Concat(label_feat, image_feat)).
Tensor fpen_s1(const Fpen& net, const Tensor& label_feat, const Tensor& image_feat);
// x_S2 = FPEN_S2(image_feat).
Tensor fpen_s2(const Fpen& net, const Tensor& image_feat);

}  // namespace lrdif
