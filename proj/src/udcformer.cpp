#include "lrdif/udcformer.hpp"

#include <cmath>

#include "lrdif/errors.hpp"

namespace lrdif {

namespace {

Tensor to_tokens(const Tensor& x) {  // [B,C,H,W] -> [B,C,HW]
    return ops::reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)});
}

Tensor split_heads(const Tensor& x, std::size_t heads) {  // [B,T,D] -> [B,N,T,D/N]
    const std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
    return ops::transpose(ops::reshape(x, {b, t, heads, d / heads}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {  // [B,N,T,d] -> [B,T,N*d]
    const std::size_t b = x.dim(0), n = x.dim(1), t = x.dim(2), d = x.dim(3);
    return ops::reshape(ops::transpose(x, {0, 2, 1, 3}), {b, t, n * d});
}

// scores[B,N,r,c] times a per-head factor tau[N] (or a shared tau[1]).
Tensor scale_heads(const Tensor& scores, const Tensor& tau) {
    if (tau.numel() == 1) return ops::mul(scores, tau);
    const std::size_t b = scores.dim(0), n = scores.dim(1), r = scores.dim(2), c = scores.dim(3);
    Tensor per_head = ops::matmul(ops::reshape(tau, {n, 1}), Tensor::full({1, r * c}, 1.0));
    per_head = ops::reshape(per_head, {1, n * r * c});
    std::vector<Tensor> copies(b, per_head);
    return ops::mul(scores, ops::reshape(ops::concat(copies, 0), {b, n, r, c}));
}

Tensor mlp(const Tensor& x, const Linear& a, const Linear& b) { return b(ops::gelu(a(x))); }

}  // namespace

Modulation Modulation::create(ParameterStore& store, const std::string& prefix, std::size_t z_dim,
                              std::size_t channels, std::uint64_t seed) {
    Modulation m;
    m.scale = Linear::create(store, prefix + ".scale", z_dim, channels, seed);
    m.shift = Linear::create(store, prefix + ".shift", z_dim, channels, seed);
    init::scaled_normal(m.scale.weight, seed, prefix + ".scale.weight", z_dim, 0.1);
    init::scaled_normal(m.shift.weight, seed, prefix + ".shift.weight", z_dim, 0.1);
    init::constant(m.scale.bias, 1.0);
    return m;
}

Tensor modulate(const Tensor& f, const Tensor& z, const Modulation& m) {
    if (f.rank() != 4 || z.rank() != 2 || z.dim(0) != f.dim(0) || m.scale.out != f.dim(1))
        throw ShapeError("modulate: feature " + shape_str(f.shape()) + " / EPR " + shape_str(z.shape()) +
                         " do not match modulation width " + std::to_string(m.scale.out));
    const std::size_t h = f.dim(2), w = f.dim(3);
    const Tensor normed = ops::reshape(ops::layer_norm(to_tokens(f), -1), f.shape());
    const Tensor scale = expand_channels(m.scale(z), h, w);
    const Tensor shift = expand_channels(m.shift(z), h, w);
    return ops::add(ops::mul(scale, normed), shift);
}

DMNet DMNet::create(ParameterStore& store, const std::string& prefix, std::size_t channels, std::size_t heads,
                    bool per_head_temperature, std::size_t spatial, std::uint64_t seed) {
    if (heads == 0 || channels % heads) throw ConfigError("dmnet: heads must divide the channel count");
    DMNet n;
    n.heads = heads;
    n.q = PointwiseConv::create(store, prefix + ".q", channels, channels, seed);
    n.k = PointwiseConv::create(store, prefix + ".k", channels, channels, seed);
    n.v = PointwiseConv::create(store, prefix + ".v", channels, channels, seed);
    n.q_dw = DepthwiseConv::create(store, prefix + ".q_dw", channels, seed);
    n.k_dw = DepthwiseConv::create(store, prefix + ".k_dw", channels, seed);
    n.v_dw = DepthwiseConv::create(store, prefix + ".v_dw", channels, seed);
    n.proj = PointwiseConv::create(store, prefix + ".proj", channels, channels, seed);
    n.temperature = store.create(prefix + ".temperature", {per_head_temperature ? heads : 1});
    init::constant(n.temperature, 1.0 / std::sqrt(static_cast<double>(spatial)));
    return n;
}

Tensor dmnet(const Tensor& f_mod, const Tensor& f, const DMNet& net) {
    if (f_mod.shape() != f.shape()) throw ShapeError("dmnet: modulated and residual inputs differ in shape");
    const std::size_t b = f.dim(0), c = f.dim(1), hw = f.dim(2) * f.dim(3), n = net.heads;
    auto heads = [&](const Tensor& t) { return ops::reshape(t, {b, n, c / n, hw}); };
    const Tensor q = heads(net.q_dw(net.q(f_mod)));
    const Tensor k = heads(net.k_dw(net.k(f_mod)));
    const Tensor v = heads(net.v_dw(net.v(f_mod)));
    // K [c,HW] x Q [HW,c] -> [c,c]; V [HW,c] x A -> [HW,c].
    const Tensor attn = ops::softmax(scale_heads(ops::matmul(k, ops::transpose_last2(q)), net.temperature), -1);
    const Tensor mixed = ops::transpose_last2(ops::matmul(ops::transpose_last2(v), attn));
    return ops::add(net.proj(ops::reshape(mixed, f.shape())), f);
}

DGNet DGNet::create(ParameterStore& store, const std::string& prefix, std::size_t channels, std::uint64_t seed) {
    DGNet g;
    g.c1 = PointwiseConv::create(store, prefix + ".c1", channels, channels, seed);
    g.c2 = PointwiseConv::create(store, prefix + ".c2", channels, channels, seed);
    g.d1 = DepthwiseConv::create(store, prefix + ".d1", channels, seed);
    g.d2 = DepthwiseConv::create(store, prefix + ".d2", channels, seed);
    return g;
}

Tensor dgnet(const Tensor& f_mod, const Tensor& f, const DGNet& net) {
    if (f_mod.shape() != f.shape()) throw ShapeError("dgnet: modulated and residual inputs differ in shape");
    const Tensor gate = ops::gelu(net.d1(net.c1(f_mod)));
    return ops::add(ops::mul(gate, net.d2(net.c2(f_mod))), f);
}

DTBlock DTBlock::create(ParameterStore& store, const std::string& prefix, std::size_t channels, std::size_t z_dim,
                        const ModelConfig& cfg, std::size_t spatial, std::uint64_t seed) {
    DTBlock b;
    b.mod_attn = Modulation::create(store, prefix + ".mod_attn", z_dim, channels, seed);
    b.attn = DMNet::create(store, prefix + ".dmnet", channels, static_cast<std::size_t>(cfg.heads),
                           cfg.per_head_temperature, spatial, seed);
    b.mod_ffn = Modulation::create(store, prefix + ".mod_ffn", z_dim, channels, seed);
    b.ffn = DGNet::create(store, prefix + ".dgnet", channels, seed);
    return b;
}

Tensor DTBlock::operator()(const Tensor& f, const Tensor& z) const {
    const Tensor a = dmnet(modulate(f, z, mod_attn), f, attn);
    return dgnet(modulate(a, z, mod_ffn), a, ffn);
}

Tensor window_partition(const Tensor& x, std::size_t window) {
    const Shape& s = x.shape();
    if (s.size() != 4 || window == 0 || s[2] % window || s[3] % window)
        throw ShapeError("window_partition: " + shape_str(s) + " not divisible by window " + std::to_string(window));
    const std::size_t b = s[0], d = s[1], nh = s[2] / window, nw = s[3] / window;
    Tensor t = ops::reshape(x, {b, d, nh, window, nw, window});
    t = ops::transpose(t, {0, 2, 4, 3, 5, 1});
    return ops::reshape(t, {b * nh * nw, window * window, d});
}

Tensor window_merge(const Tensor& windows, std::size_t batch, std::size_t h, std::size_t w, std::size_t window) {
    const Shape& s = windows.shape();
    if (window == 0 || h % window || w % window || s.size() != 3 ||
        s[0] != batch * (h / window) * (w / window) || s[1] != window * window)
        throw ShapeError("window_merge: " + shape_str(s) + " does not tile " + std::to_string(h) + "x" +
                         std::to_string(w) + " with window " + std::to_string(window));
    const std::size_t d = s[2], nh = h / window, nw = w / window;
    Tensor t = ops::reshape(windows, {batch, nh, nw, window, window, d});
    t = ops::transpose(t, {0, 5, 1, 3, 2, 4});
    return ops::reshape(t, {batch, d, h, w});
}

Tensor relative_position_gather(std::size_t window) {
    const std::size_t m = window * window, span = 2 * window - 1;
    std::vector<double> g(span * span * m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const std::size_t dy = i / window + window - 1 - j / window;
            const std::size_t dx = i % window + window - 1 - j % window;
            g[(dy * span + dx) * m * m + i * m + j] = 1.0;
        }
    return Tensor::from({span * span, m * m}, std::move(g));
}

DilLevel DilLevel::create(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                          std::size_t window, std::size_t mlp_ratio, std::uint64_t seed) {
    if (heads == 0 || dim % heads) throw ConfigError("mhca: head count must divide the embedding width");
    DilLevel l;
    l.heads = heads;
    l.window = window;
    l.q = Linear::create(store, prefix + ".q", dim, dim, seed);
    l.k = Linear::create(store, prefix + ".k", dim, dim, seed);
    l.v = Linear::create(store, prefix + ".v", dim, dim, seed);
    l.o = Linear::create(store, prefix + ".o", dim, dim, seed);
    const std::size_t span = 2 * window - 1;
    l.rel_table = store.create(prefix + ".rel_bias", {heads, span * span});
    l.rel_gather = relative_position_gather(window);
    l.mlp1 = Linear::create(store, prefix + ".mlp1", dim, mlp_ratio * dim, seed);
    l.mlp2 = Linear::create(store, prefix + ".mlp2", mlp_ratio * dim, dim, seed);
    return l;
}

Tensor DilLevel::relative_bias() const {
    const std::size_t m = window * window;
    return ops::reshape(ops::matmul(rel_table, rel_gather), {heads, m, m});
}

Tensor mhca(const Tensor& x_flm, const Tensor& x_udc, const DilLevel& level) {
    if (x_flm.shape() != x_udc.shape() || x_flm.rank() != 3)
        throw ShapeError("mhca: landmark windows " + shape_str(x_flm.shape()) + " and image windows " +
                         shape_str(x_udc.shape()) + " differ");
    const std::size_t d = x_udc.dim(2);
    if (d % level.heads) throw ShapeError("mhca: head count does not divide the embedding width");
    const Tensor q = split_heads(level.q(x_flm), level.heads);
    const Tensor k = split_heads(level.k(x_udc), level.heads);
    const Tensor v = split_heads(level.v(x_udc), level.heads);
    const double inv = 1.0 / std::sqrt(static_cast<double>(d / level.heads));
    Tensor scores = ops::scale(ops::matmul(q, ops::transpose_last2(k)), inv);
    scores = ops::add(scores, level.relative_bias());
    return level.o(merge_heads(ops::matmul(ops::softmax(scores, -1), v)));
}

Tensor cross_fusion(const Tensor& x_flm, const Tensor& x_udc, const DilLevel& level) {
    const Tensor x1 = ops::add(mhca(x_flm, x_udc, level), x_udc);
    return ops::add(mlp(ops::layer_norm(x1, -1), level.mlp1, level.mlp2), x1);
}

Tensor self_attention(const Tensor& x, const Linear& q, const Linear& k, const Linear& v, const Linear& o,
                      std::size_t heads) {
    const std::size_t d = x.dim(2);
    if (d % heads) throw ShapeError("self_attention: head count does not divide the embedding width");
    const Tensor qh = split_heads(q(x), heads), kh = split_heads(k(x), heads), vh = split_heads(v(x), heads);
    const double inv = 1.0 / std::sqrt(static_cast<double>(d / heads));
    const Tensor attn = ops::softmax(ops::scale(ops::matmul(qh, ops::transpose_last2(kh)), inv), -1);
    return o(merge_heads(ops::matmul(attn, vh)));
}

FusionHead FusionHead::create(ParameterStore& store, const std::string& prefix,
                              const std::vector<int>& level_channels, std::size_t dim, std::size_t heads,
                              std::size_t mlp_ratio, std::size_t classes, std::uint64_t seed) {
    if (heads == 0 || dim % heads) throw ConfigError("fusion head: head count must divide head_dim");
    FusionHead h;
    h.heads = heads;
    for (std::size_t l = 0; l < 3; ++l)
        h.tokens[l] = Linear::create(store, prefix + ".token" + std::to_string(l + 1),
                                     2 * static_cast<std::size_t>(level_channels.at(l)), dim, seed);
    h.q = Linear::create(store, prefix + ".q", dim, dim, seed);
    h.k = Linear::create(store, prefix + ".k", dim, dim, seed);
    h.v = Linear::create(store, prefix + ".v", dim, dim, seed);
    h.o = Linear::create(store, prefix + ".o", dim, dim, seed);
    h.mlp1 = Linear::create(store, prefix + ".mlp1", dim, mlp_ratio * dim, seed);
    h.mlp2 = Linear::create(store, prefix + ".mlp2", mlp_ratio * dim, dim, seed);
    h.classifier = Linear::create(store, prefix + ".classifier", dim, classes, seed);
    return h;
}

HeadOutput fusion_head(std::span<const Tensor> f, std::span<const Tensor> o, const FusionHead& head) {
    if (f.size() != 3 || o.size() != 3) throw ShapeError("fusion_head: expected three levels");
    std::vector<Tensor> tokens;
    for (std::size_t l = 0; l < 3; ++l) {
        if (f[l].shape() != o[l].shape()) throw ShapeError("fusion_head: F and O differ at a level");
        const Tensor pooled = ops::concat({ops::mean(to_tokens(f[l]), -1), ops::mean(to_tokens(o[l]), -1)}, 1);
        const Tensor t = head.tokens[l](pooled);
        tokens.push_back(ops::reshape(t, {t.dim(0), 1, t.dim(1)}));
    }
    const Tensor x = ops::concat(tokens, 1);
    const Tensor x1 = ops::add(self_attention(x, head.q, head.k, head.v, head.o, head.heads), x);
    const Tensor y = ops::add(mlp(ops::layer_norm(x1, -1), head.mlp1, head.mlp2), x1);
    HeadOutput out;
    out.features = ops::mean(y, 1);
    out.logits = head.classifier(out.features);
    return out;
}

std::size_t level_window(std::size_t configured, std::size_t level_size) {
    return std::min(configured, level_size);
}

UdcFormer UdcFormer::create(ParameterStore& store, const ModelConfig& cfg, std::size_t image_size,
                            std::size_t classes, std::uint64_t seed) {
    if (image_size % 16) throw ConfigError("image_size must be a multiple of 16 for the three-level pyramid");
    UdcFormer u;
    u.image_size = image_size;
    const auto ch = [&](std::size_t l) { return static_cast<std::size_t>(cfg.level_channels.at(l)); };
    const auto z_dim = static_cast<std::size_t>(cfg.epr_dim);
    u.stem = PointwiseConv::create(store, "udc.stem", 48, ch(0), seed);
    for (std::size_t l = 0; l < 3; ++l) {
        const std::string level = "udc.level" + std::to_string(l + 1);
        const std::size_t side = image_size >> (l + 2);
        if (l > 0) u.down[l - 1] = PointwiseConv::create(store, level + ".down", 4 * ch(l - 1), ch(l), seed);
        for (int k = 0; k < cfg.blocks_per_level; ++k)
            u.blocks[l].push_back(DTBlock::create(store, level + ".block" + std::to_string(k), ch(l), z_dim, cfg,
                                                  side * side, seed));
        const std::size_t window = level_window(static_cast<std::size_t>(cfg.window), side);
        if (side % window)
            throw ConfigError("level " + std::to_string(l + 1) + " size " + std::to_string(side) +
                              " is not divisible by window " + std::to_string(window));
        u.dil[l] = DilLevel::create(store, "dil.level" + std::to_string(l + 1), ch(l),
                                    static_cast<std::size_t>(cfg.heads), window,
                                    static_cast<std::size_t>(cfg.mlp_ratio), seed);
    }
    u.head = FusionHead::create(store, "head", cfg.level_channels, static_cast<std::size_t>(cfg.head_dim),
                                static_cast<std::size_t>(cfg.head_heads), static_cast<std::size_t>(cfg.mlp_ratio),
                                classes, seed);
    return u;
}

HeadOutput UdcFormer::operator()(const Tensor& x, const Tensor& z, std::span<const Tensor> flm) const {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != image_size || s[3] != image_size)
        throw ShapeError("udcformer: expected [B,3," + std::to_string(image_size) + "," +
                         std::to_string(image_size) + "], got " + shape_str(s));
    if (flm.size() != 3) throw ShapeError("udcformer: expected landmark features at three scales");
    const std::size_t b = s[0];
    std::array<Tensor, 3> f, o;
    Tensor h = stem(space_to_depth(x, 4));
    for (std::size_t l = 0; l < 3; ++l) {
        if (l > 0) h = down[l - 1](space_to_depth(h, 2));
        for (const auto& block : blocks[l]) h = block(h, z);
        f[l] = h;
        if (flm[l].shape() != h.shape())
            throw ShapeError("udcformer: landmark features " + shape_str(flm[l].shape()) + " do not match level " +
                             shape_str(h.shape()));
        const std::size_t w = dil[l].window;
        const Tensor fused =
            cross_fusion(window_partition(flm[l], w), window_partition(h, w), dil[l]);
        o[l] = window_merge(fused, b, h.dim(2), h.dim(3), w);
    }
    return fusion_head(f, o, head);
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || labels.empty() || logits.dim(0) != labels.size())
        throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t b = logits.dim(0), m = logits.dim(1);
    std::vector<double> onehot(b * m, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= m)
            throw ConfigError("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
        onehot[i * m + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    const Tensor picked = ops::mul(ops::log_softmax(logits, -1), Tensor::from({b, m}, std::move(onehot)));
    return ops::scale(ops::sum(picked), -1.0 / static_cast<double>(b));
}

std::vector<int> predict(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("predict: expected [B, M] logits");
    const std::size_t b = logits.dim(0), m = logits.dim(1);
    std::vector<int> out(b);
    const auto v = logits.values();
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < m; ++c)
            if (v[i * m + c] > v[i * m + best]) best = c;
        out[i] = static_cast<int>(best);
    }
    return out;
}

}  // namespace lrdif
