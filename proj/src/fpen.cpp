#include "lrdif/fpen.hpp"

#include "lrdif/errors.hpp"

namespace lrdif {

Fpen Fpen::create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                  std::size_t out, int depth, std::uint64_t seed) {
    if (depth < 1) throw ConfigError("fpen depth must be >= 1");
    Fpen f;
    for (int i = 0; i < depth; ++i) {
        const std::size_t a = i == 0 ? in : hidden;
        const std::size_t b = i == depth - 1 ? out : hidden;
        f.layers.push_back(Linear::create(store, prefix + ".layer" + std::to_string(i), a, b, seed));
    }
    return f;
}

Tensor Fpen::operator()(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i](h);
        if (i + 1 < layers.size()) h = ops::gelu(h);
    }
    return h;
}

Tensor fpen_s1(const Fpen& net, const Tensor& label_feat, const Tensor& image_feat) {
    if (label_feat.rank() != 2 || image_feat.rank() != 2 || label_feat.dim(0) != image_feat.dim(0) ||
        label_feat.dim(1) + image_feat.dim(1) != net.in_dim())
        throw ShapeError("fpen_s1: feature widths " + shape_str(label_feat.shape()) + " + " +
                         shape_str(image_feat.shape()) + " do not match input width " +
                         std::to_string(net.in_dim()));
    return net(ops::concat({label_feat, image_feat}, 1));
}

Tensor fpen_s2(const Fpen& net, const Tensor& image_feat) {
    if (image_feat.rank() != 2 || image_feat.dim(1) != net.in_dim())
        throw ShapeError("fpen_s2: feature " + shape_str(image_feat.shape()) + " does not match input width " +
                         std::to_string(net.in_dim()));
    return net(image_feat);
}

}  // namespace lrdif
