#include <doctest.h>

#include <bit>
#include <cmath>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "helpers.hpp"
#include "lrdif/errors.hpp"
#include "lrdif/grad_check.hpp"
#include "lrdif/kernels.hpp"
#include "lrdif/ops.hpp"
#include "lrdif/optim.hpp"

using namespace lrdif;
using lrdif::test::random_tensor;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

struct ThreadCount {
    explicit ThreadCount(int n) {
#ifdef _OPENMP
        saved = omp_get_max_threads();
        omp_set_num_threads(n);
#endif
        (void)n;
    }
    ~ThreadCount() {
#ifdef _OPENMP
        omp_set_num_threads(saved);
#endif
    }
    int saved = 1;
};

}  // namespace

TEST_SUITE("engine") {

TEST_CASE("parallel kernels match the serial reference bit for bit") {
    ThreadCount threads(4);
    Rng rng(3);
    for (bool ta : {false, true})
        for (bool tb : {false, true})
            for (bool acc : {false, true}) {
                const std::size_t m = 37, n = 29, k = 71;
                const auto a = random_values(rng, m * k), b = random_values(rng, k * n);
                auto c0 = random_values(rng, m * n);
                auto c1 = c0;
                kernels::gemm(ta, tb, m, n, k, a.data(), b.data(), c0.data(), acc);
                kernels::reference::gemm(ta, tb, m, n, k, a.data(), b.data(), c1.data(), acc);
                CHECK(test::bit_equal(c0, c1));
            }
    const std::size_t B = 3, C = 5, H = 17, W = 13;
    const auto x = random_values(rng, B * C * H * W), w = random_values(rng, C * 9), dy = random_values(rng, B * C * H * W);
    std::vector<double> y0(x.size()), y1(x.size());
    kernels::depthwise3x3(B, C, H, W, x.data(), w.data(), y0.data());
    kernels::reference::depthwise3x3(B, C, H, W, x.data(), w.data(), y1.data());
    CHECK(test::bit_equal(y0, y1));
    std::vector<double> g0(x.size(), 0.0), g1(x.size(), 0.0);
    kernels::depthwise3x3_grad_input(B, C, H, W, dy.data(), w.data(), g0.data());
    kernels::reference::depthwise3x3_grad_input(B, C, H, W, dy.data(), w.data(), g1.data());
    CHECK(test::bit_equal(g0, g1));
    std::vector<double> gw0(C * 9, 0.0), gw1(C * 9, 0.0);
    kernels::depthwise3x3_grad_weight(B, C, H, W, dy.data(), x.data(), gw0.data());
    kernels::reference::depthwise3x3_grad_weight(B, C, H, W, dy.data(), x.data(), gw1.data());
    CHECK(test::bit_equal(gw0, gw1));
    const std::vector<std::size_t> shape{4, 3, 5, 6}, perm{2, 0, 3, 1};
    const auto src = random_values(rng, 4 * 3 * 5 * 6);
    std::vector<double> p0(src.size()), p1(src.size());
    kernels::permute(shape, perm, src.data(), p0.data());
    kernels::reference::permute(shape, perm, src.data(), p1.data());
    CHECK(test::bit_equal(p0, p1));
}

TEST_CASE("gemm agrees with a naive triple loop") {
    Rng rng(4);
    const std::size_t m = 5, n = 4, k = 7;
    const auto a = random_values(rng, m * k), b = random_values(rng, k * n);
    std::vector<double> c(m * n);
    kernels::gemm(false, false, m, n, k, a.data(), b.data(), c.data(), false);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            long double s = 0;
            for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a[i * k + p]) * b[p * n + j];
            CHECK(c[i * n + j] == doctest::Approx(static_cast<double>(s)).epsilon(1e-13));
        }
}

TEST_CASE("primitive examples") {
    const Tensor s = ops::softmax(Tensor::from({2}, {0.0, 0.0}));
    CHECK(s.at(0) == 0.5);
    CHECK(s.at(1) == 0.5);
    const Tensor a = Tensor::from({2, 2}, {1.5, -2.0, 0.25, 4.0});
    const Tensor eye = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
    CHECK(test::bit_equal(ops::matmul(eye, a).values(), a.values()));
    const Tensor ln = ops::layer_norm(Tensor::from({4}, {5.0, 5.0, 5.0, 5.0}));
    for (double v : ln.values()) CHECK(std::abs(v) < 1e-12);
    CHECK(ops::gelu(Tensor::scalar(0.0)).item() == 0.0);
    CHECK(ops::gelu(Tensor::scalar(1.0)).item() == doctest::Approx(0.8413447460685429).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one and survive large logits") {
    Rng rng(5);
    const Tensor x = random_tensor(rng, {6, 9}, 30.0);
    const Tensor p = ops::softmax(x, -1);
    for (std::size_t r = 0; r < 6; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 9; ++c) {
            CHECK(p.at(r * 9 + c) >= 0.0);
            sum += p.at(r * 9 + c);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    }
    const Tensor big = ops::softmax(Tensor::from({2}, {1000.0, 999.0}));
    CHECK(big.at(0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("layer norm output has zero mean and unit variance") {
    Rng rng(6);
    const Tensor y = ops::layer_norm(random_tensor(rng, {3, 64}, 4.0), -1);
    for (std::size_t r = 0; r < 3; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t c = 0; c < 64; ++c) mean += y.at(r * 64 + c) / 64.0;
        for (std::size_t c = 0; c < 64; ++c) var += (y.at(r * 64 + c) - mean) * (y.at(r * 64 + c) - mean) / 64.0;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("backward on analytic cases") {
    Tensor x = Tensor::scalar(3.0, true);
    backward(ops::mul(x, x));
    CHECK(x.grad().item() == 6.0);

    Tensor y = Tensor::full({2, 3, 2}, 0.7, true);
    backward(ops::sum(y));
    for (double g : y.grad_values()) CHECK(g == 1.0);

    // d/dz of -sum(onehot * log softmax(z)) = p - y
    Tensor z = Tensor::from({1, 3}, {0.2, -1.0, 0.5}, true);
    const Tensor onehot = Tensor::from({1, 3}, {0.0, 1.0, 0.0});
    backward(ops::scale(ops::sum(ops::mul(ops::log_softmax(z, -1), onehot)), -1.0));
    const Tensor p = ops::softmax(Tensor::from({1, 3}, {0.2, -1.0, 0.5}), -1);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(z.grad().at(i) == doctest::Approx(p.at(i) - onehot.at(i)).epsilon(1e-14));
}

TEST_CASE("non-finite values raise NumericError") {
    const Tensor x = Tensor::from({2}, {1e308, 1e308});
    CHECK_THROWS_AS(ops::add(x, x), NumericError);
    CHECK_THROWS_AS(ops::matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({3, 1}, {1, 2, 3})), ShapeError);
}

TEST_CASE("grad_check on x.x") {
    const Tensor x = Tensor::from({3}, {1.0, 2.0, 3.0});
    const double err = grad_check([](const Tensor& t) { return ops::sum(ops::mul(t, t)); }, x, 1e-5);
    CHECK(err < 1e-7);
}

TEST_CASE("every primitive passes a central-difference check") {
    Rng rng(7);
    const double eps = 1e-6;
    const Tensor w = random_tensor(rng, {4, 3});
    const Tensor other = random_tensor(rng, {2, 4});
    const Tensor r = random_tensor(rng, {2, 4});
    auto probe = [&](const Tensor& y) { return ops::sum(ops::mul(y, r)); };
    const Tensor p = random_tensor(rng, {2, 4});
    CHECK(grad_check([&](const Tensor& t) { return probe(ops::add(t, other)); }, p, eps) < 1e-8);
    CHECK(grad_check([&](const Tensor& t) { return probe(ops::mul(t, other)); }, p, eps) < 1e-8);
    CHECK(grad_check([&](const Tensor& t) { return probe(ops::scale(t, -1.7)); }, p, eps) < 1e-8);
    CHECK(grad_check([&](const Tensor& t) { return probe(ops::softmax(t, -1)); }, p, eps) < 1e-8);
    CHECK(grad_check([&](const Tensor& t) { return probe(ops::log_softmax(t, -1)); }, p, eps) < 1e-8);
    CHECK(grad_check([&](const Tensor& t) { return probe(ops::layer_norm(t, -1)); }, p, eps) < 1e-7);
    CHECK(grad_check([&](const Tensor& t) { return probe(ops::gelu(t)); }, p, eps) < 1e-8);
    CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::matmul(t, w), ops::matmul(t, w))); }, p,
                     eps) < 1e-8);
    CHECK(grad_check([&](const Tensor& t) { return probe(ops::transpose_last2(ops::transpose_last2(t))); }, p, eps) <
          1e-8);
    CHECK(grad_check([&](const Tensor& t) { return probe(ops::reshape(ops::reshape(t, {8}), {2, 4})); }, p, eps) < 1e-8);
    CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::concat({t, other}, 1), ops::concat({r, r}, 1))); }, p, eps) < 1e-8);
    CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::mean(t, 1), ops::mean(t, 1))); }, p, eps) <
          1e-8);
    const Tensor img = random_tensor(rng, {2, 3, 4, 5});
    const Tensor dw = random_tensor(rng, {3, 3, 3});
    const Tensor pw = random_tensor(rng, {2, 3});
    const Tensor bias = random_tensor(rng, {2});
    const Tensor ri = random_tensor(rng, {2, 3, 4, 5});
    const Tensor ro = random_tensor(rng, {2, 2, 4, 5});
    CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::depthwise_conv3x3(t, dw), ri)); }, img, eps) <
          1e-8);
    CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::depthwise_conv3x3(img, t), ri)); }, dw, eps) <
          1e-8);
    CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::conv1x1(t, pw, bias), ro)); }, img, eps) <
          1e-8);
    CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::conv1x1(img, t, bias), ro)); }, pw, eps) <
          1e-8);
    CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::conv1x1(img, pw, t), ro)); }, bias, eps) <
          1e-8);
    const Tensor r4 = random_tensor(rng, {3, 2, 5, 4});
    CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::transpose(t, {1, 0, 3, 2}), r4)); }, img,
                     eps) < 1e-8);
}

TEST_CASE("space_to_depth and expand_channels") {
    Rng rng(8);
    const Tensor x = random_tensor(rng, {2, 3, 4, 4});
    const Tensor y = space_to_depth(x, 2);
    CHECK(y.shape() == Shape{2, 12, 2, 2});
    // Channel (c, dy, dx) at (i, j) holds x[c, 2i+dy, 2j+dx].
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx)
                for (std::size_t i = 0; i < 2; ++i)
                    for (std::size_t j = 0; j < 2; ++j) {
                        const std::size_t oc = (c * 2 + dy) * 2 + dx;
                        CHECK(y.at(((1 * 12 + oc) * 2 + i) * 2 + j) ==
                              x.at(((1 * 3 + c) * 4 + 2 * i + dy) * 4 + 2 * j + dx));
                    }
    CHECK_THROWS_AS(space_to_depth(random_tensor(rng, {1, 1, 5, 4}), 2), ShapeError);
    const Tensor e = expand_channels(Tensor::from({1, 2}, {3.0, -1.0}), 2, 3);
    CHECK(e.shape() == Shape{1, 2, 2, 3});
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(e.at(i) == 3.0);
        CHECK(e.at(6 + i) == -1.0);
    }
}

TEST_CASE("Adam with lr 0 leaves parameters bit-identical") {
    ParameterStore store;
    Tensor& w = store.create("w", {3, 2});
    Rng rng(9);
    for (auto& v : w.mutable_values()) v = rng.normal();
    const std::vector<double> before(w.values().begin(), w.values().end());
    AdamOptions opt;
    opt.lr = 0.0;
    Adam adam(store, {"w"}, opt);
    for (int i = 0; i < 5; ++i) {
        backward(ops::sum(ops::mul(w, w)));
        adam.step();
    }
    CHECK(test::bit_equal(w.values(), before));
}

TEST_CASE("Adam descends a quadratic") {
    ParameterStore store;
    Tensor& w = store.create("w", {2});
    test::set(w, {2.0, -3.0});
    AdamOptions opt;
    opt.lr = 0.1;
    opt.weight_decay = 0.0;
    Adam adam(store, {"w"}, opt);
    for (int i = 0; i < 300; ++i) {
        backward(ops::sum(ops::mul(w, w)));
        adam.step();
    }
    CHECK(std::abs(w.at(0)) < 0.05);
    CHECK(std::abs(w.at(1)) < 0.05);
}

TEST_CASE("no-grad guard records no graph") {
    Tensor x = Tensor::scalar(2.0, true);
    Tensor y;
    {
        NoGradGuard guard;
        y = ops::mul(x, x);
    }
    CHECK_FALSE(y.requires_grad());
    CHECK(grad_enabled());
}

}
