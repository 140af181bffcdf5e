#include "lrdif/encoders.hpp"

#include "lrdif/errors.hpp"

namespace lrdif {

LabelEncoder LabelEncoder::create(ParameterStore& store, const std::string& prefix, std::size_t classes,
                                  std::size_t dim, std::uint64_t seed) {
    LabelEncoder e;
    e.table = store.create(prefix + ".table", {classes, dim});
    init::scaled_normal(e.table, seed, prefix + ".table", 1);
    return e;
}

Tensor LabelEncoder::operator()(std::span<const int> labels) const {
    const std::size_t m = table.dim(0);
    std::vector<double> onehot(labels.size() * m, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= m)
            throw ConfigError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(m) + ")");
        onehot[i * m + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return ops::matmul(Tensor::from({labels.size(), m}, std::move(onehot)), table);
}

ImageEncoder ImageEncoder::create(ParameterStore& store, const std::string& prefix, std::size_t image_size,
                                  const std::vector<int>& channels, std::size_t out_dim, std::uint64_t seed) {
    const auto c0 = static_cast<std::size_t>(channels.at(0));
    const auto c1 = static_cast<std::size_t>(channels.at(1));
    const auto c2 = static_cast<std::size_t>(channels.at(2));
    ImageEncoder e;
    e.image_size = image_size;
    e.stem_dw = DepthwiseConv::create(store, prefix + ".stem_dw", 3, seed);
    e.stem_pw = PointwiseConv::create(store, prefix + ".stem_pw", 3, c0, seed);
    e.stage1 = PointwiseConv::create(store, prefix + ".stage1", 4 * c0, c1, seed);
    e.stage2 = PointwiseConv::create(store, prefix + ".stage2", 4 * c1, c2, seed);
    e.proj = Linear::create(store, prefix + ".proj", c2, out_dim, seed);
    return e;
}

Tensor ImageEncoder::operator()(const Tensor& x) const {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != image_size || s[3] != image_size)
        throw ShapeError("image encoder: expected [B,3," + std::to_string(image_size) + "," +
                         std::to_string(image_size) + "], got " + shape_str(s));
    Tensor h = ops::gelu(stem_pw(stem_dw(x)));
    h = ops::gelu(stage1(space_to_depth(h, 2)));
    h = ops::gelu(stage2(space_to_depth(h, 2)));
    const std::size_t b = h.dim(0), c = h.dim(1);
    h = ops::mean(ops::reshape(h, {b, c, h.dim(2) * h.dim(3)}), -1);
    return proj(h);
}

LandmarkEncoder LandmarkEncoder::create(ParameterStore& store, const std::string& prefix, std::size_t image_size,
                                        const std::vector<int>& level_channels, std::uint64_t seed) {
    LandmarkEncoder e;
    e.image_size = image_size;
    std::size_t in = 16;
    for (std::size_t l = 0; l < 3; ++l) {
        const auto d = static_cast<std::size_t>(level_channels.at(l));
        e.convs[l] = PointwiseConv::create(store, prefix + ".scale" + std::to_string(l + 1), in, d, seed);
        in = 4 * d;
    }
    return e;
}

std::array<Tensor, 3> LandmarkEncoder::operator()(const Tensor& heatmap) const {
    const Shape& s = heatmap.shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != image_size || s[3] != image_size)
        throw ShapeError("landmark encoder: expected [B,1," + std::to_string(image_size) + "," +
                         std::to_string(image_size) + "], got " + shape_str(s));
    std::array<Tensor, 3> out;
    out[0] = convs[0](space_to_depth(heatmap, 4));
    out[1] = convs[1](space_to_depth(ops::gelu(out[0]), 2));
    out[2] = convs[2](space_to_depth(ops::gelu(out[1]), 2));
    return out;
}

}  // namespace lrdif
