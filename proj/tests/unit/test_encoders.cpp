#include <doctest.h>

#include "helpers.hpp"
#include "lrdif/encoders.hpp"
#include "lrdif/errors.hpp"
#include "lrdif/fpen.hpp"

using namespace lrdif;

TEST_SUITE("encoders") {

TEST_CASE("label encoder returns table rows") {
    ParameterStore st;
    const auto enc = LabelEncoder::create(st, "enc.label", 4, 5, 1);
    const std::vector<int> y{0};
    const Tensor row = enc(y);
    CHECK(row.shape() == Shape{1, 5});
    CHECK(test::bit_equal(row.values(), enc.table.values().subspan(0, 5)));
    const std::vector<int> ys{2, 2, 3};
    const Tensor rows = enc(ys);
    CHECK(test::bit_equal(rows.values().subspan(0, 5), rows.values().subspan(5, 5)));
    CHECK(test::bit_equal(rows.values().subspan(10, 5), enc.table.values().subspan(15, 5)));
    const std::vector<int> bad{4};
    CHECK_THROWS_AS(enc(bad), ConfigError);
}

TEST_CASE("image encoder shape and zero input") {
    ParameterStore st;
    const auto enc = ImageEncoder::create(st, "enc.image", 16, {4, 4, 8}, 6, 2);
    const Tensor out = enc(Tensor::zeros({3, 3, 16, 16}));
    CHECK(out.shape() == Shape{3, 6});
    for (double v : out.values()) CHECK(v == 0.0);
    Rng rng(1);
    CHECK_THROWS_AS(enc(test::random_tensor(rng, {1, 3, 8, 8})), ShapeError);
}

TEST_CASE("landmark encoder scales and zero input") {
    ParameterStore st;
    const auto enc = LandmarkEncoder::create(st, "enc.flm", 32, {4, 8, 12}, 3);
    const auto out = enc(Tensor::zeros({2, 1, 32, 32}));
    CHECK(out[0].shape() == Shape{2, 4, 8, 8});
    CHECK(out[1].shape() == Shape{2, 8, 4, 4});
    CHECK(out[2].shape() == Shape{2, 12, 2, 2});
    for (const auto& t : out)
        for (double v : t.values()) CHECK(v == 0.0);
}

TEST_CASE("encoders treat batch rows independently") {
    ParameterStore st;
    const auto img = ImageEncoder::create(st, "enc.image", 16, {4, 4, 8}, 6, 2);
    const auto flm = LandmarkEncoder::create(st, "enc.flm", 16, {4, 8, 8}, 2);
    Rng rng(4);
    const Tensor x = test::random_tensor(rng, {2, 3, 16, 16});
    const Tensor h = test::random_tensor(rng, {2, 1, 16, 16});
    auto swap_rows = [](const Tensor& t) {
        const std::size_t per = t.numel() / 2;
        std::vector<double> v(t.values().begin() + static_cast<std::ptrdiff_t>(per), t.values().end());
        v.insert(v.end(), t.values().begin(), t.values().begin() + static_cast<std::ptrdiff_t>(per));
        return Tensor::from(t.shape(), v);
    };
    CHECK(test::bit_equal(swap_rows(img(x)).values(), img(swap_rows(x)).values()));
    const auto a = flm(h), b = flm(swap_rows(h));
    for (std::size_t l = 0; l < 3; ++l) CHECK(test::bit_equal(swap_rows(a[l]).values(), b[l].values()));
}

TEST_CASE("fpen contracts") {
    ParameterStore st;
    const auto s1 = Fpen::create(st, "fpen.s1", 10, 8, 5, 3, 1);
    const auto s2 = Fpen::create(st, "fpen.s2", 4, 8, 5, 3, 1);
    CHECK(s1.in_dim() == 10);
    CHECK(s1.out_dim() == 5);
    Rng rng(2);
    const Tensor lf = test::random_tensor(rng, {3, 6}), imf = test::random_tensor(rng, {3, 4});
    const Tensor z = fpen_s1(s1, lf, imf);
    CHECK(z.shape() == Shape{3, 5});
    CHECK(fpen_s2(s2, imf).shape() == Shape{3, 5});
    // Row-wise: the second row alone gives the same output.
    const Tensor one = Tensor::from({1, 4}, {imf.at(4), imf.at(5), imf.at(6), imf.at(7)});
    CHECK(test::max_abs_diff(fpen_s2(s2, one).values(), fpen_s2(s2, imf).values().subspan(5, 5)) < 1e-15);
    CHECK(test::bit_equal(fpen_s2(s2, imf).values(), fpen_s2(s2, imf).values()));
    test::fill(st, "fpen.s1.", 0.0);
    const Tensor zero = fpen_s1(s1, lf, imf);
    for (double v : zero.values()) CHECK(v == 0.0);
    CHECK_THROWS_AS(fpen_s1(s1, imf, imf), ShapeError);
}

}
