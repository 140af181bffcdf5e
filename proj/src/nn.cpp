#include "lrdif/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "lrdif/errors.hpp"

namespace lrdif {

namespace {
std::uint64_t name_hash(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}
}  // namespace

Tensor& ParameterStore::create(const std::string& name, Shape shape) {
    if (params_.count(name)) throw std::logic_error("duplicate parameter " + name);
    return params_.emplace(name, Tensor::zeros(std::move(shape), true)).first->second;
}

Tensor& ParameterStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
}

std::vector<std::string> ParameterStore::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, _] : params_)
        if (name.rfind(prefix, 0) == 0) out.push_back(name);
    return out;
}

std::size_t ParameterStore::total_values() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
}

void ParameterStore::set_trainable(const std::string& prefix, bool trainable) {
    for (auto& [name, t] : params_)
        if (name.rfind(prefix, 0) == 0) t.set_requires_grad(trainable);
}

GradientMap backward(const Tensor& loss, const ParameterStore& params, std::vector<std::string>* disconnected) {
    backward(loss);
    GradientMap grads;
    for (const auto& [name, t] : params.all()) {
        if (!t.requires_grad()) continue;
        if (!t.has_grad() && disconnected) disconnected->push_back(name);
        grads.emplace(name, t.grad());
    }
    return grads;
}

namespace init {

void scaled_normal(Tensor& t, std::uint64_t seed, const std::string& name, std::size_t fan_in, double gain) {
    Rng rng(hash_seed(seed, {name_hash(name)}));
    const double sd = gain / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.mutable_values()) v = sd * rng.normal();
}

void constant(Tensor& t, double value) {
    for (auto& v : t.mutable_values()) v = value;
}

}  // namespace init

Linear Linear::create(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                      std::uint64_t seed, bool with_bias) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = store.create(prefix + ".weight", {in, out});
    init::scaled_normal(l.weight, seed, prefix + ".weight", in);
    if (with_bias) l.bias = store.create(prefix + ".bias", {out});
    return l;
}

Tensor Linear::operator()(const Tensor& x) const {
    if (x.shape().back() != in)
        throw ShapeError("linear: expected last dim " + std::to_string(in) + ", got " + shape_str(x.shape()));
    const bool vector_input = x.rank() == 1;
    Tensor h = ops::matmul(vector_input ? ops::reshape(x, {1, in}) : x, weight);
    if (bias.defined()) h = ops::add(h, bias);
    return vector_input ? ops::reshape(h, {out}) : h;
}

PointwiseConv PointwiseConv::create(ParameterStore& store, const std::string& prefix, std::size_t in,
                                    std::size_t out, std::uint64_t seed) {
    PointwiseConv c;
    c.weight = store.create(prefix + ".weight", {out, in});
    init::scaled_normal(c.weight, seed, prefix + ".weight", in);
    c.bias = store.create(prefix + ".bias", {out});
    return c;
}

Tensor PointwiseConv::operator()(const Tensor& x) const { return ops::conv1x1(x, weight, bias); }

DepthwiseConv DepthwiseConv::create(ParameterStore& store, const std::string& prefix, std::size_t channels,
                                    std::uint64_t seed) {
    DepthwiseConv c;
    c.weight = store.create(prefix + ".weight", {channels, 3, 3});
    init::scaled_normal(c.weight, seed, prefix + ".weight", 9);
    return c;
}

Tensor DepthwiseConv::operator()(const Tensor& x) const { return ops::depthwise_conv3x3(x, weight); }

Tensor space_to_depth(const Tensor& x, std::size_t factor) {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[2] % factor || s[3] % factor)
        throw ShapeError("space_to_depth: " + shape_str(s) + " not divisible by " + std::to_string(factor));
    const std::size_t b = s[0], c = s[1], h = s[2] / factor, w = s[3] / factor;
    Tensor t = ops::reshape(x, {b, c, h, factor, w, factor});
    t = ops::transpose(t, {0, 1, 3, 5, 2, 4});
    return ops::reshape(t, {b, c * factor * factor, h, w});
}

Tensor expand_channels(const Tensor& v, std::size_t h, std::size_t w) {
    if (v.rank() != 2) throw ShapeError("expand_channels: expected [B, C], got " + shape_str(v.shape()));
    const std::size_t b = v.dim(0), c = v.dim(1);
    const Tensor ones = Tensor::full({1, h * w}, 1.0);
    return ops::reshape(ops::matmul(ops::reshape(v, {b, c, 1}), ones), {b, c, h, w});
}

}  // namespace lrdif
