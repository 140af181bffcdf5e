#include "lrdif/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>

#include "lrdif/errors.hpp"
#include "lrdif/kernels.hpp"

namespace lrdif {

namespace {

using detail::Node;
using BackwardFn = std::function<void(Node&)>;

Tensor record(Shape shape, std::vector<double> value, const char* kind, std::initializer_list<Tensor> inputs,
              BackwardFn fn) {
    for (double v : value)
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite output from ") + kind);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->kind = kind;
    bool needs = false;
    if (grad_enabled())
        for (const auto& t : inputs) needs = needs || t.requires_grad();
    if (needs) {
        node->requires_grad = true;
        for (const auto& t : inputs) node->parents.push_back(t.node());
        node->backward_fn = std::move(fn);
    }
    return Tensor(std::move(node));
}

Tensor record_many(Shape shape, std::vector<double> value, const char* kind, std::span<const Tensor> inputs,
                   BackwardFn fn) {
    for (double v : value)
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite output from ") + kind);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->kind = kind;
    bool needs = false;
    if (grad_enabled())
        for (const auto& t : inputs) needs = needs || t.requires_grad();
    if (needs) {
        node->requires_grad = true;
        for (const auto& t : inputs) node->parents.push_back(t.node());
        node->backward_fn = std::move(fn);
    }
    return Tensor(std::move(node));
}

std::size_t norm_axis(int axis, std::size_t rank, const char* what) {
    const auto r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r)
        throw ShapeError(std::string(what) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
    return static_cast<std::size_t>(a);
}

struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

std::string_view primitive_name(PrimitiveKind kind) {
    switch (kind) {
        case PrimitiveKind::matmul: return "matmul";
        case PrimitiveKind::add: return "add";
        case PrimitiveKind::mul: return "mul";
        case PrimitiveKind::reshape: return "reshape";
        case PrimitiveKind::transpose: return "transpose";
        case PrimitiveKind::concat: return "concat";
        case PrimitiveKind::softmax: return "softmax";
        case PrimitiveKind::log_softmax: return "log_softmax";
        case PrimitiveKind::layer_norm: return "layer_norm";
        case PrimitiveKind::gelu: return "gelu";
        case PrimitiveKind::conv1x1: return "conv1x1";
        case PrimitiveKind::depthwise_conv3x3: return "depthwise_conv3x3";
        case PrimitiveKind::mean: return "mean";
        case PrimitiveKind::sum: return "sum";
        case PrimitiveKind::scale: return "scale";
    }
    return "unknown";
}

std::optional<PrimitiveKind> primitive_from_name(std::string_view name) {
    for (int k = 0; k <= static_cast<int>(PrimitiveKind::scale); ++k) {
        const auto kind = static_cast<PrimitiveKind>(k);
        if (primitive_name(kind) == name) return kind;
    }
    return std::nullopt;
}

Tensor apply_primitive(const Primitive& p, std::span<const Tensor> in) {
    auto arity = [&](std::size_t lo, std::size_t hi) {
        if (in.size() < lo || in.size() > hi)
            throw ShapeError(std::string(primitive_name(p.kind)) + ": wrong number of inputs (" +
                             std::to_string(in.size()) + ")");
    };
    switch (p.kind) {
        case PrimitiveKind::matmul: arity(2, 2); return ops::matmul(in[0], in[1]);
        case PrimitiveKind::add: arity(2, 2); return ops::add(in[0], in[1]);
        case PrimitiveKind::mul: arity(2, 2); return ops::mul(in[0], in[1]);
        case PrimitiveKind::reshape: arity(1, 1); return ops::reshape(in[0], p.shape);
        case PrimitiveKind::transpose: arity(1, 1); return ops::transpose(in[0], p.perm);
        case PrimitiveKind::concat: arity(1, 64); return ops::concat(in, p.axis);
        case PrimitiveKind::softmax: arity(1, 1); return ops::softmax(in[0], p.axis);
        case PrimitiveKind::log_softmax: arity(1, 1); return ops::log_softmax(in[0], p.axis);
        case PrimitiveKind::layer_norm: arity(1, 1); return ops::layer_norm(in[0], p.axis, p.eps);
        case PrimitiveKind::gelu: arity(1, 1); return ops::gelu(in[0]);
        case PrimitiveKind::conv1x1:
            arity(2, 3);
            return ops::conv1x1(in[0], in[1], in.size() == 3 ? in[2] : Tensor{});
        case PrimitiveKind::depthwise_conv3x3: arity(2, 2); return ops::depthwise_conv3x3(in[0], in[1]);
        case PrimitiveKind::mean: arity(1, 1); return ops::mean(in[0], p.axis);
        case PrimitiveKind::sum: arity(1, 1); return ops::sum(in[0]);
        case PrimitiveKind::scale: arity(1, 1); return ops::scale(in[0], p.factor);
    }
    throw std::invalid_argument("apply_primitive: unknown primitive kind " +
                                std::to_string(static_cast<int>(p.kind)));
}

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    require(as.size() >= 2 && bs.size() >= 2, "matmul: operands need rank >= 2, got " + shape_str(as) + " x " +
                                                  shape_str(bs));
    const std::size_t k = as.back();
    if (bs.size() == 2) {
        require(bs[0] == k, "matmul: inner dims differ " + shape_str(as) + " x " + shape_str(bs));
        const std::size_t n = bs[1];
        const std::size_t rows = a.numel() / k;
        Shape out = as;
        out.back() = n;
        std::vector<double> y(rows * n);
        kernels::gemm(false, false, rows, n, k, a.values().data(), b.values().data(), y.data(), false);
        return record(std::move(out), std::move(y), "matmul", {a, b}, [rows, n, k](Node& self) {
            Node& na = *self.parents[0];
            Node& nb = *self.parents[1];
            if (na.requires_grad)
                kernels::gemm(false, true, rows, k, n, self.grad.data(), nb.value.data(), na.grad_buffer().data(),
                              true);
            if (nb.requires_grad)
                kernels::gemm(true, false, k, n, rows, na.value.data(), self.grad.data(), nb.grad_buffer().data(),
                              true);
        });
    }
    require(as.size() == bs.size() && std::equal(as.begin(), as.end() - 2, bs.begin()) && bs[bs.size() - 2] == k,
            "matmul: batched operands incompatible " + shape_str(as) + " x " + shape_str(bs));
    const std::size_t m = as[as.size() - 2];
    const std::size_t n = bs.back();
    const std::size_t batch = a.numel() / (m * k);
    Shape out = as;
    out.back() = n;
    std::vector<double> y(batch * m * n);
    for (std::size_t i = 0; i < batch; ++i)
        kernels::gemm(false, false, m, n, k, a.values().data() + i * m * k, b.values().data() + i * k * n,
                      y.data() + i * m * n, false);
    return record(std::move(out), std::move(y), "matmul", {a, b}, [batch, m, n, k](Node& self) {
        Node& na = *self.parents[0];
        Node& nb = *self.parents[1];
        for (std::size_t i = 0; i < batch; ++i) {
            const double* g = self.grad.data() + i * m * n;
            if (na.requires_grad)
                kernels::gemm(false, true, m, k, n, g, nb.value.data() + i * k * n,
                              na.grad_buffer().data() + i * m * k, true);
            if (nb.requires_grad)
                kernels::gemm(true, false, k, n, m, na.value.data() + i * m * k, g,
                              nb.grad_buffer().data() + i * k * n, true);
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> y(av.begin(), av.end());
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
        return record(a.shape(), std::move(y), "add", {a, b}, [](Node& self) {
            for (auto& p : self.parents)
                if (p->requires_grad) {
                    auto& g = p->grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                }
        });
    }
    if (b.numel() == 1) {
        const double s = bv[0];
        for (auto& v : y) v += s;
        return record(a.shape(), std::move(y), "add", {a, b}, [](Node& self) {
            Node& na = *self.parents[0];
            Node& nb = *self.parents[1];
            if (na.requires_grad) {
                auto& g = na.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
            if (nb.requires_grad) {
                double acc = 0.0;
                for (double g : self.grad) acc += g;
                nb.grad_buffer()[0] += acc;
            }
        });
    }
    require(is_suffix(b.shape(), a.shape()),
            "add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " are not broadcastable");
    const std::size_t period = b.numel();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i % period];
    return record(a.shape(), std::move(y), "add", {a, b}, [period](Node& self) {
        Node& na = *self.parents[0];
        Node& nb = *self.parents[1];
        if (na.requires_grad) {
            auto& g = na.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (nb.requires_grad) {
            auto& g = nb.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % period] += self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> y(av.size());
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
        return record(a.shape(), std::move(y), "mul", {a, b}, [](Node& self) {
            Node& na = *self.parents[0];
            Node& nb = *self.parents[1];
            if (na.requires_grad) {
                auto& g = na.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
            }
            if (nb.requires_grad) {
                auto& g = nb.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
            }
        });
    }
    require(b.numel() == 1, "mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                                " are not broadcastable");
    const double s = bv[0];
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * s;
    return record(a.shape(), std::move(y), "mul", {a, b}, [](Node& self) {
        Node& na = *self.parents[0];
        Node& nb = *self.parents[1];
        if (na.requires_grad) {
            auto& g = na.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[0];
        }
        if (nb.requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * na.value[i];
            nb.grad_buffer()[0] += acc;
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    const auto av = a.values();
    std::vector<double> y(av.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * factor;
    return record(a.shape(), std::move(y), "scale", {a}, [factor](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    require(shape_numel(shape) == a.numel(),
            "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
    for (auto d : shape) require(d > 0, "reshape: zero extent in " + shape_str(shape));
    const auto av = a.values();
    return record(std::move(shape), std::vector<double>(av.begin(), av.end()), "reshape", {a}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor transpose(const Tensor& a, std::vector<std::size_t> perm) {
    const Shape& s = a.shape();
    require(perm.size() == s.size(), "transpose: permutation rank mismatch");
    std::vector<bool> used(perm.size(), false);
    for (auto p : perm) {
        require(p < perm.size() && !used[p], "transpose: invalid permutation");
        used[p] = true;
    }
    Shape out(s.size());
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        out[i] = s[perm[i]];
        inverse[perm[i]] = i;
    }
    std::vector<double> y(a.numel());
    kernels::permute(s, perm, a.values().data(), y.data());
    return record(out, std::move(y), "transpose", {a}, [out, inverse](Node& self) {
        std::vector<double> back(self.grad.size());
        kernels::permute(out, inverse, self.grad.data(), back.data());
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += back[i];
    });
}

Tensor transpose_last2(const Tensor& a) {
    require(a.rank() >= 2, "transpose_last2: rank < 2");
    std::vector<std::size_t> perm(a.rank());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
    return transpose(a, std::move(perm));
}

Tensor concat(std::span<const Tensor> parts, int axis) {
    require(!parts.empty(), "concat: no inputs");
    const Shape& first = parts[0].shape();
    const std::size_t ax = norm_axis(axis, first.size(), "concat");
    Shape out = first;
    out[ax] = 0;
    std::vector<std::size_t> lens;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        require(s.size() == first.size(), "concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            require(i == ax || s[i] == first[i],
                    "concat: " + shape_str(s) + " incompatible with " + shape_str(first) + " on axis " +
                        std::to_string(ax));
        out[ax] += s[ax];
        lens.push_back(s[ax]);
    }
    const AxisSplit sp = split_at(out, ax);
    std::vector<double> y(shape_numel(out));
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto pv = parts[p].values();
        const std::size_t block = lens[p] * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                        y.begin() + static_cast<std::ptrdiff_t>(o * sp.len * sp.inner + offset));
        offset += block;
    }
    return record_many(out, std::move(y), "concat", parts, [lens, sp](Node& self) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            const std::size_t block = lens[p] * sp.inner;
            if (self.parents[p]->requires_grad) {
                auto& g = self.parents[p]->grad_buffer();
                for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t i = 0; i < block; ++i)
                        g[o * block + i] += self.grad[o * sp.len * sp.inner + offset + i];
            }
            offset += block;
        }
    });
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
    return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor softmax(const Tensor& a, int axis) {
    const std::size_t ax = norm_axis(axis, a.rank(), "softmax");
    const AxisSplit sp = split_at(a.shape(), ax);
    const auto x = a.values();
    std::vector<double> y(x.size());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.len * sp.inner + in;
            double mx = x[base];
            for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, x[base + l * sp.inner]);
            double total = 0.0;
            for (std::size_t l = 0; l < sp.len; ++l) {
                const double e = std::exp(x[base + l * sp.inner] - mx);
                y[base + l * sp.inner] = e;
                total += e;
            }
            for (std::size_t l = 0; l < sp.len; ++l) y[base + l * sp.inner] /= total;
        }
    return record(a.shape(), std::move(y), "softmax", {a}, [sp](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        const auto& yv = self.value;
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.len * sp.inner + in;
                double dot = 0.0;
                for (std::size_t l = 0; l < sp.len; ++l)
                    dot += self.grad[base + l * sp.inner] * yv[base + l * sp.inner];
                for (std::size_t l = 0; l < sp.len; ++l) {
                    const std::size_t i = base + l * sp.inner;
                    g[i] += yv[i] * (self.grad[i] - dot);
                }
            }
    });
}

Tensor log_softmax(const Tensor& a, int axis) {
    const std::size_t ax = norm_axis(axis, a.rank(), "log_softmax");
    const AxisSplit sp = split_at(a.shape(), ax);
    const auto x = a.values();
    std::vector<double> y(x.size());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.len * sp.inner + in;
            double mx = x[base];
            for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, x[base + l * sp.inner]);
            double total = 0.0;
            for (std::size_t l = 0; l < sp.len; ++l) total += std::exp(x[base + l * sp.inner] - mx);
            const double lse = mx + std::log(total);
            for (std::size_t l = 0; l < sp.len; ++l) y[base + l * sp.inner] = x[base + l * sp.inner] - lse;
        }
    return record(a.shape(), std::move(y), "log_softmax", {a}, [sp](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        const auto& yv = self.value;
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.len * sp.inner + in;
                double total = 0.0;
                for (std::size_t l = 0; l < sp.len; ++l) total += self.grad[base + l * sp.inner];
                for (std::size_t l = 0; l < sp.len; ++l) {
                    const std::size_t i = base + l * sp.inner;
                    g[i] += self.grad[i] - std::exp(yv[i]) * total;
                }
            }
    });
}

Tensor layer_norm(const Tensor& a, int axis, double eps) {
    const std::size_t ax = norm_axis(axis, a.rank(), "layer_norm");
    const AxisSplit sp = split_at(a.shape(), ax);
    const auto x = a.values();
    std::vector<double> y(x.size());
    std::vector<double> inv_std(sp.outer * sp.inner);
    const double n = static_cast<double>(sp.len);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.len * sp.inner + in;
            double mu = 0.0;
            for (std::size_t l = 0; l < sp.len; ++l) mu += x[base + l * sp.inner];
            mu /= n;
            double var = 0.0;
            for (std::size_t l = 0; l < sp.len; ++l) {
                const double d = x[base + l * sp.inner] - mu;
                var += d * d;
            }
            var /= n;
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[o * sp.inner + in] = is;
            for (std::size_t l = 0; l < sp.len; ++l) y[base + l * sp.inner] = (x[base + l * sp.inner] - mu) * is;
        }
    return record(a.shape(), std::move(y), "layer_norm", {a}, [sp, n, inv_std = std::move(inv_std)](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        const auto& yv = self.value;
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.len * sp.inner + in;
                double mg = 0.0, mgy = 0.0;
                for (std::size_t l = 0; l < sp.len; ++l) {
                    const std::size_t i = base + l * sp.inner;
                    mg += self.grad[i];
                    mgy += self.grad[i] * yv[i];
                }
                mg /= n;
                mgy /= n;
                const double is = inv_std[o * sp.inner + in];
                for (std::size_t l = 0; l < sp.len; ++l) {
                    const std::size_t i = base + l * sp.inner;
                    g[i] += is * (self.grad[i] - mg - yv[i] * mgy);
                }
            }
    });
}

Tensor gelu(const Tensor& a) {
    const auto x = a.values();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 * 0.5));
    return record(a.shape(), std::move(y), "gelu", {a}, [](Node& self) {
        Node& na = *self.parents[0];
        auto& g = na.grad_buffer();
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = na.value[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            g[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    require(xs.size() == 4, "conv1x1: input must be [batch, channel, h, w], got " + shape_str(xs));
    require(ws.size() == 2 && ws[1] == xs[1],
            "conv1x1: weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
    const std::size_t batch = xs[0], cin = xs[1], hw = xs[2] * xs[3], cout = ws[0];
    const bool has_bias = bias.defined();
    if (has_bias) require(bias.shape() == Shape{cout}, "conv1x1: bias must be [" + std::to_string(cout) + "]");
    std::vector<double> y(batch * cout * hw);
    for (std::size_t b = 0; b < batch; ++b) {
        double* yb = y.data() + b * cout * hw;
        kernels::gemm(false, false, cout, hw, cin, weight.values().data(), x.values().data() + b * cin * hw, yb,
                      false);
        if (has_bias)
            for (std::size_t c = 0; c < cout; ++c)
                for (std::size_t p = 0; p < hw; ++p) yb[c * hw + p] += bias.values()[c];
    }
    Shape out{batch, cout, xs[2], xs[3]};
    auto fn = [batch, cin, cout, hw, has_bias](Node& self) {
        Node& nx = *self.parents[0];
        Node& nw = *self.parents[1];
        for (std::size_t b = 0; b < batch; ++b) {
            const double* g = self.grad.data() + b * cout * hw;
            if (nx.requires_grad)
                kernels::gemm(true, false, cin, hw, cout, nw.value.data(), g, nx.grad_buffer().data() + b * cin * hw,
                              true);
            if (nw.requires_grad)
                kernels::gemm(false, true, cout, cin, hw, g, nx.value.data() + b * cin * hw, nw.grad_buffer().data(),
                              true);
        }
        if (has_bias && self.parents[2]->requires_grad) {
            auto& gb = self.parents[2]->grad_buffer();
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t c = 0; c < cout; ++c) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < hw; ++p) acc += self.grad[(b * cout + c) * hw + p];
                    gb[c] += acc;
                }
        }
    };
    if (has_bias) return record(std::move(out), std::move(y), "conv1x1", {x, weight, bias}, fn);
    return record(std::move(out), std::move(y), "conv1x1", {x, weight}, fn);
}

Tensor depthwise_conv3x3(const Tensor& x, const Tensor& weight) {
    const Shape& xs = x.shape();
    require(xs.size() == 4, "depthwise_conv3x3: input must be [batch, channel, h, w], got " + shape_str(xs));
    require(weight.shape() == Shape{xs[1], 3, 3},
            "depthwise_conv3x3: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(xs));
    const std::size_t batch = xs[0], ch = xs[1], h = xs[2], w = xs[3];
    std::vector<double> y(x.numel());
    kernels::depthwise3x3(batch, ch, h, w, x.values().data(), weight.values().data(), y.data());
    return record(xs, std::move(y), "depthwise_conv3x3", {x, weight}, [batch, ch, h, w](Node& self) {
        Node& nx = *self.parents[0];
        Node& nw = *self.parents[1];
        if (nx.requires_grad)
            kernels::depthwise3x3_grad_input(batch, ch, h, w, self.grad.data(), nw.value.data(),
                                             nx.grad_buffer().data());
        if (nw.requires_grad)
            kernels::depthwise3x3_grad_weight(batch, ch, h, w, self.grad.data(), nx.value.data(),
                                              nw.grad_buffer().data());
    });
}

Tensor mean(const Tensor& a, int axis) {
    const std::size_t ax = norm_axis(axis, a.rank(), "mean");
    const AxisSplit sp = split_at(a.shape(), ax);
    Shape out = a.shape();
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(ax));
    const auto x = a.values();
    std::vector<double> y(sp.outer * sp.inner, 0.0);
    const double inv = 1.0 / static_cast<double>(sp.len);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
            double acc = 0.0;
            for (std::size_t l = 0; l < sp.len; ++l) acc += x[(o * sp.len + l) * sp.inner + in];
            y[o * sp.inner + in] = acc * inv;
        }
    return record(std::move(out), std::move(y), "mean", {a}, [sp, inv](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t l = 0; l < sp.len; ++l)
                for (std::size_t in = 0; in < sp.inner; ++in)
                    g[(o * sp.len + l) * sp.inner + in] += self.grad[o * sp.inner + in] * inv;
    });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    return record({}, {acc}, "sum", {a}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

}  // namespace ops

}  // namespace lrdif
