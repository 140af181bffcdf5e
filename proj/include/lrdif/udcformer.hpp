#pragma once

// The label-restoration transformer: EPR-modulated dynamic transformer blocks
// over a three-level pyramid, window cross-attention with landmark features
// at every level, and a fusion head over the pooled per-level tokens.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lrdif/config.hpp"
#include "lrdif/nn.hpp"

namespace lrdif {

// scale = W1 Z + b1, shift = W2 Z + b2 with b1 initialized to ones.
struct Modulation {
    Linear scale, shift;

    static Modulation create(ParameterStore& store, const std::string& prefix, std::size_t z_dim,
                             std::size_t channels, std::uint64_t seed);
};

// F' = scale(Z) * LN(F) + shift(Z); LN normalizes each channel over its spatial extent.
Tensor modulate(const Tensor& f, const Tensor& z, const Modulation& m);

// Transposed (channel x channel) attention.
struct DMNet {
    PointwiseConv q, k, v, proj;
    DepthwiseConv q_dw, k_dw, v_dw;
    Tensor temperature;  // [1] or [heads]; multiplies the logits
    std::size_t heads = 1;

    static DMNet create(ParameterStore& store, const std::string& prefix, std::size_t channels, std::size_t heads,
                        bool per_head_temperature, std::size_t spatial, std::uint64_t seed);
};

// F'' = W_c (V x softmax(K x Q * temperature)) + F, per head.
Tensor dmnet(const Tensor& f_mod, const Tensor& f, const DMNet& net);

// Gated depthwise feed-forward.
struct DGNet {
    PointwiseConv c1, c2;
    DepthwiseConv d1, d2;

    static DGNet create(ParameterStore& store, const std::string& prefix, std::size_t channels, std::uint64_t seed);
};

// F'' = GELU(W1_d W1_c F') * (W2_d W2_c F') + F.
Tensor dgnet(const Tensor& f_mod, const Tensor& f, const DGNet& net);

struct DTBlock {
    Modulation mod_attn, mod_ffn;
    DMNet attn;
    DGNet ffn;

    static DTBlock create(ParameterStore& store, const std::string& prefix, std::size_t channels,
                          std::size_t z_dim, const ModelConfig& cfg, std::size_t spatial, std::uint64_t seed);
    Tensor operator()(const Tensor& f, const Tensor& z) const;
};

// X[B,D,H,W] -> [B*nW, window*window, D] (row-major over windows, then tokens).
Tensor window_partition(const Tensor& x, std::size_t window);
Tensor window_merge(const Tensor& windows, std::size_t batch, std::size_t h, std::size_t w, std::size_t window);

// Constant one-hot map from the (2w-1)^2 relative offsets to the w^2 x w^2 token pairs.
Tensor relative_position_gather(std::size_t window);

struct DilLevel {
    Linear q, k, v, o;
    Tensor rel_table;  // [heads, (2w-1)^2], zero-initialized
    Tensor rel_gather;  // constant
    Linear mlp1, mlp2;
    std::size_t heads = 1, window = 1;

    static DilLevel create(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                           std::size_t window, std::size_t mlp_ratio, std::uint64_t seed);
    Tensor relative_bias() const;  // [heads, M, M]
};

// O = concat_i softmax(Q_i K_i^T / sqrt(d) + b_i) V_i, then w_O. Inputs [Bw, M, D].
Tensor mhca(const Tensor& x_flm, const Tensor& x_udc, const DilLevel& level);
// X' = MHCA + x_udc; X'' = MLP(LN(X')) + X'.
Tensor cross_fusion(const Tensor& x_flm, const Tensor& x_udc, const DilLevel& level);

struct FusionHead {
    std::array<Linear, 3> tokens;
    Linear q, k, v, o, mlp1, mlp2, classifier;
    std::size_t heads = 1;

    static FusionHead create(ParameterStore& store, const std::string& prefix,
                             const std::vector<int>& level_channels, std::size_t dim, std::size_t heads,
                             std::size_t mlp_ratio, std::size_t classes, std::uint64_t seed);
};

// Plain multi-head self-attention over x[B, T, D].
Tensor self_attention(const Tensor& x, const Linear& q, const Linear& k, const Linear& v, const Linear& o,
                      std::size_t heads);

struct HeadOutput {
    Tensor logits;    // [B, M]
    Tensor features;  // [B, head_dim], penultimate
};

// pooled[l] = concat(mean F_l, mean O_l) -> token_l; X' = MSA(X) + X;
// y' = MLP(LN(X')) + X'; logits = W mean_t(y').
HeadOutput fusion_head(std::span<const Tensor> f, std::span<const Tensor> o, const FusionHead& head);

struct UdcFormer {
    PointwiseConv stem;
    std::array<PointwiseConv, 2> down;  // into levels 2 and 3
    std::array<std::vector<DTBlock>, 3> blocks;
    std::array<DilLevel, 3> dil;
    FusionHead head;
    std::size_t image_size = 0;

    static UdcFormer create(ParameterStore& store, const ModelConfig& cfg, std::size_t image_size,
                            std::size_t classes, std::uint64_t seed);
    // x[B,3,S,S], z[B,C], flm = landmark features per level.
    HeadOutput operator()(const Tensor& x, const Tensor& z, std::span<const Tensor> flm) const;
};

// Window side used at a level of the given spatial size.
std::size_t level_window(std::size_t configured, std::size_t level_size);

// -mean_i sum_c onehot(y_i)_c log softmax(logits_i)_c
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// Argmax per row; ties resolve to the lowest class index.
std::vector<int> predict(const Tensor& logits);

}  // namespace lrdif
