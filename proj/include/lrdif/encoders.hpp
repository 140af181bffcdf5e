#pragma once

// Trainable stand-ins for the label/image encoders and the landmark feature path.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lrdif/nn.hpp"

namespace lrdif {

// E_L: one embedding row per class.
struct LabelEncoder {
    Tensor table;  // [M, d_L]

    static LabelEncoder create(ParameterStore& store, const std::string& prefix, std::size_t classes,
                               std::size_t dim, std::uint64_t seed);
    // Rows of the table for each label -> [B, d_L]. Out-of-range labels throw ConfigError.
    Tensor operator()(std::span<const int> labels) const;
};

// E_I: separable 3x3 stem, two stride-2 stages, global average pool, linear.
struct ImageEncoder {
    DepthwiseConv stem_dw;
    PointwiseConv stem_pw;
    PointwiseConv stage1, stage2;
    Linear proj;
    std::size_t image_size = 0;

    static ImageEncoder create(ParameterStore& store, const std::string& prefix, std::size_t image_size,
                               const std::vector<int>& channels, std::size_t out_dim, std::uint64_t seed);
    // x[B,3,S,S] -> [B, d_I]
    Tensor operator()(const Tensor& x) const;
};

// Multi-scale landmark features X_flm at S/4, S/8, S/16.
struct LandmarkEncoder {
    std::array<PointwiseConv, 3> convs;
    std::size_t image_size = 0;

    static LandmarkEncoder create(ParameterStore& store, const std::string& prefix, std::size_t image_size,
                                  const std::vector<int>& level_channels, std::uint64_t seed);
    // heatmap[B,1,S,S] -> three [B, D_l, S/2^(l+2), S/2^(l+2)]
    std::array<Tensor, 3> operator()(const Tensor& heatmap) const;
};

}  // namespace lrdif
