#include <doctest.h>

#include <algorithm>

#include "helpers.hpp"
#include "lrdif/dataset.hpp"
#include "lrdif/degrade.hpp"
#include "lrdif/errors.hpp"
#include "lrdif/grad_check.hpp"
#include "lrdif/io.hpp"
#include "lrdif/model.hpp"
#include "lrdif/optim.hpp"

using namespace lrdif;

namespace {

Split paired_split(const Config& c, std::size_t n) {
    Split s = generate_split(c.data, "train", 0, n);
    degrade_split(s, c.degrade);
    return s;
}

std::vector<std::size_t> first(std::size_t n) {
    std::vector<std::size_t> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = i;
    return r;
}

bool has_prefix(const ParameterStore& st, const std::string& prefix) { return !st.names_with_prefix(prefix).empty(); }

}  // namespace

TEST_SUITE("model") {

TEST_CASE("stage structure") {
    Config c = test::tiny_config();
    const auto s1 = Model::create(c, 1);
    CHECK_FALSE(has_prefix(s1->store, "fpen.s2."));
    CHECK_FALSE(has_prefix(s1->store, "diff."));
    const auto s2 = Model::create(c, 2);
    CHECK(has_prefix(s2->store, "fpen.s2."));
    CHECK(has_prefix(s2->store, "diff.denoiser."));
    c.run = apply_variant(c.run, "V1");
    const auto v1 = Model::create(c, 2);
    CHECK_FALSE(has_prefix(v1->store, "diff."));
    CHECK_FALSE(v1->schedule.has_value());
    CHECK_THROWS_AS(Model::create(c, 3), ConfigError);
}

TEST_CASE("variants") {
    const RunConfig base;
    const RunConfig v1 = apply_variant(base, "V1"), v2 = apply_variant(base, "V2"), v3 = apply_variant(base, "V3"),
                    v4 = apply_variant(base, "V4");
    CHECK_FALSE(v1.use_diffusion);
    CHECK(v1.loss == LossKind::ce);
    CHECK(v2.use_diffusion);
    CHECK(v2.loss == LossKind::ce);
    CHECK(v3.loss == LossKind::total);
    CHECK(v3.insert_noise);
    CHECK(v4.loss == LossKind::total);
    CHECK_FALSE(v4.insert_noise);
    CHECK_THROWS_AS(apply_variant(base, "V5"), ConfigError);
}

TEST_CASE("forward passes produce finite logits of the right shape") {
    const Config c = test::tiny_config();
    const Split s = paired_split(c, 6);
    const Batch b = make_batch(s, first(6));
    const auto m1 = Model::create(c, 1);
    const ForwardOut f1 = stage1_forward(*m1, b);
    CHECK(f1.logits.shape() == Shape{6, 3});
    CHECK(f1.z.shape() == Shape{6, 6});
    const auto m2 = Model::create(c, 2);
    const ForwardOut f2 = stage2_train_forward(*m2, b, 1);
    CHECK(f2.kl.defined());
    CHECK(std::isfinite(f2.loss.item()));
    CHECK(f2.loss.item() == doctest::Approx(f2.ce.item() + f2.kl.item()).epsilon(1e-14));
    const ForwardOut f3 = stage2_infer(*m2, b.udc, b.landmarks, b.keys);
    CHECK(f3.logits.shape() == Shape{6, 3});
}

TEST_CASE("label-free inference ignores labels") {
    const Config c = test::tiny_config();
    Split s = paired_split(c, 6);
    const auto m = Model::create(c, 2);
    const Batch b = make_batch(s, first(6));
    const Tensor a = stage2_infer(*m, b.udc, b.landmarks, b.keys).logits;
    std::reverse(s.labels.begin(), s.labels.end());
    const Batch b2 = make_batch(s, first(6));
    CHECK(test::bit_equal(stage2_infer(*m, b2.udc, b2.landmarks, b2.keys).logits.values(), a.values()));
}

TEST_CASE("noise semantics") {
    Config c = test::tiny_config();
    const Split s = paired_split(c, 4);
    const Batch b = make_batch(s, first(4));
    for (const std::string sem : {"forward", "reverse"}) {
        c.run.noise_semantics = sem;
        c.run.insert_noise = true;
        const auto m = Model::create(c, 2);
        const double e1 = stage2_train_forward(*m, b, 1).loss.item();
        CHECK(stage2_train_forward(*m, b, 1).loss.item() == e1);
        CHECK(stage2_train_forward(*m, b, 2).loss.item() != e1);
    }
    c.run.noise_semantics = "forward";
    c.run.insert_noise = false;
    const auto m = Model::create(c, 2);
    CHECK(stage2_train_forward(*m, b, 1).loss.item() == stage2_train_forward(*m, b, 2).loss.item());
}

TEST_CASE("stage-2 loss gradients on a four-sample batch") {
    Config c = test::tiny_config();
    const Split s = paired_split(c, 4);
    const Batch b = make_batch(s, first(4));
    auto m = Model::create(c, 2);
    std::vector<std::pair<std::string, Tensor>> params;
    for (const auto& [name, t] : m->store.all())
        if (name.rfind("diff.", 0) == 0 || name.rfind("fpen.s2.", 0) == 0 || name.rfind("head.", 0) == 0)
            params.emplace_back(name, t);
    const auto checks = grad_check_params([&] { return stage2_train_forward(*m, b, 1).loss; }, params, 1e-6, 6);
    CHECK(max_error(checks) < 1e-4);
}

TEST_CASE("overfitting one batch drives the total loss down") {
    Config c = test::tiny_config();
    const Split s = paired_split(c, 8);
    const Batch b = make_batch(s, first(8));
    auto m = Model::create(c, 2);
    std::vector<std::string> names;
    for (const auto& [name, t] : m->store.all()) names.push_back(name);
    AdamOptions opt;
    opt.lr = 3e-3;
    opt.weight_decay = 0.0;
    Adam adam(m->store, names, opt);
    double initial = 0.0, last = 0.0;
    for (int step = 0; step < 200; ++step) {
        const ForwardOut f = stage2_train_forward(*m, b, 1);
        if (step == 0) initial = f.loss.item();
        last = f.loss.item();
        backward(f.loss);
        adam.step();
    }
    MESSAGE("L_total " << initial << " -> " << last);
    CHECK(last <= 0.1 * initial);
}

TEST_CASE("checkpoint round trip") {
    const Config c = test::tiny_config();
    auto m = Model::create(c, 2);
    round_to_storage(m->store);
    const auto dir = test::scratch("ckpt");
    save_checkpoint(*m, dir);
    const auto back = load_checkpoint(dir);
    CHECK(back->stage == 2);
    for (const auto& [name, t] : m->store.all()) CHECK(test::bit_equal(back->store.at(name).values(), t.values()));
    const json manifest = json::parse(read_text(dir / "manifest.json"));
    CHECK(manifest.at("format_version") == 1);
    CHECK(manifest.at("C") == 6);
    CHECK(manifest.at("T") == 2);
    CHECK(manifest.at("params").size() == m->store.all().size());

    const Split s = paired_split(c, 4);
    const Batch b = make_batch(s, first(4));
    CHECK(test::bit_equal(stage2_infer(*m, b.udc, b.landmarks, b.keys).logits.values(),
                          stage2_infer(*back, b.udc, b.landmarks, b.keys).logits.values()));

    const auto victim = dir / manifest.at("params").at(0).at("file").get<std::string>();
    auto bytes = read_bytes(victim);
    bytes.back() ^= 1;
    write_bytes_atomic(victim, bytes);
    CHECK_THROWS_AS(load_checkpoint(dir), DataError);
}

TEST_CASE("checkpoint config must match") {
    const Config c = test::tiny_config();
    auto m = Model::create(c, 1);
    const auto dir = test::scratch("ckpt_cfg");
    save_checkpoint(*m, dir);
    Config other = c;
    other.model.epr_dim = 8;
    auto m2 = Model::create(other, 2);
    CHECK_THROWS_AS(load_parameters(*m2, dir), ConfigError);
    write_text_atomic(dir / "config.json", json(other).dump());
    CHECK_THROWS_AS(load_checkpoint(dir), DataError);
}

TEST_CASE("batches need paired images") {
    const Config c = test::tiny_config();
    const Split s = generate_split(c.data, "train", 0, 3);
    CHECK_THROWS_AS(make_batch(s, first(3)), DataError);
}

}
