#include "lrdif/grad_suite.hpp"

#include <chrono>
#include <functional>

#include "lrdif/diffusion.hpp"
#include "lrdif/encoders.hpp"
#include "lrdif/fpen.hpp"
#include "lrdif/grad_check.hpp"
#include "lrdif/model.hpp"
#include "lrdif/rng.hpp"
#include "lrdif/udcformer.hpp"

namespace lrdif {

namespace {

using Params = std::vector<std::pair<std::string, Tensor>>;

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0, bool requires_grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

void randomize(ParameterStore& store, Rng& rng, double scale) {
    for (const auto& [name, t] : store.all()) {
        Tensor p = t;
        for (auto& v : p.mutable_values()) v = scale * rng.normal();
    }
}

Params collect(const ParameterStore& store, std::initializer_list<std::pair<std::string, Tensor>> inputs = {}) {
    Params p(inputs);
    for (const auto& [name, t] : store.all())
        if (t.requires_grad()) p.emplace_back(name, t);
    return p;
}

// sum(y * r) with r drawn once per block.
struct Probe {
    Tensor r;
    Tensor operator()(const Tensor& y) {
        if (!r.defined()) {
            Rng rng(hash_seed(0x9b0be, {y.numel()}));
            r = random_tensor(rng, y.shape(), 1.0, false);
        }
        return ops::sum(ops::mul(y, r));
    }
};

ModelConfig tiny_model() {
    ModelConfig m;
    m.label_dim = 5;
    m.image_dim = 6;
    m.epr_dim = 6;
    m.fpen_hidden = 7;
    m.fpen_layers = 3;
    m.image_encoder_channels = {3, 4, 5};
    m.level_channels = {4, 8, 8};
    m.blocks_per_level = 1;
    m.window = 2;
    m.heads = 2;
    m.mlp_ratio = 2;
    m.head_dim = 6;
    m.head_heads = 2;
    m.denoiser_hidden = 8;
    m.time_dim = 4;
    return m;
}

Config tiny_config() {
    Config c;
    c.data.image_size = 16;
    c.data.num_classes = 3;
    c.model = tiny_model();
    c.schedule.T = 3;
    c.run.seed = 5;
    return c;
}

}  // namespace

std::vector<BlockCheck> run_grad_suite(std::uint64_t seed, double eps, std::size_t max_coords) {
    std::vector<BlockCheck> out;
    auto run = [&](const std::string& name, const std::function<Tensor()>& loss, const Params& params) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto checks = grad_check_params(loss, params, eps, max_coords);
        BlockCheck b;
        b.name = name;
        b.max_rel_error = max_error(checks);
        for (const auto& c : checks) b.coords += c.coords;
        b.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(b);
    };
    Rng rng(hash_seed(seed, {0x9c}));
    const ModelConfig mc = tiny_model();

    {
        ParameterStore st;
        const auto mod = Modulation::create(st, "mod", 6, 4, seed);
        randomize(st, rng, 0.5);
        const Tensor f = random_tensor(rng, {2, 4, 4, 4});
        const Tensor z = random_tensor(rng, {2, 6});
        Probe p;
        run("modulate", [&] { return p(modulate(f, z, mod)); }, collect(st, {{"F", f}, {"Z", z}}));
    }
    for (bool per_head : {false, true}) {
        ParameterStore st;
        const auto net = DMNet::create(st, "dmnet", 4, 2, per_head, 16, seed);
        randomize(st, rng, 0.5);
        const Tensor fm = random_tensor(rng, {2, 4, 4, 4});
        const Tensor f = random_tensor(rng, {2, 4, 4, 4});
        Probe p;
        run(per_head ? "dmnet(per-head temperature)" : "dmnet", [&] { return p(dmnet(fm, f, net)); },
            collect(st, {{"F'", fm}, {"F", f}}));
    }
    {
        ParameterStore st;
        const auto net = DGNet::create(st, "dgnet", 4, seed);
        randomize(st, rng, 0.5);
        const Tensor fm = random_tensor(rng, {2, 4, 4, 4});
        const Tensor f = random_tensor(rng, {2, 4, 4, 4});
        Probe p;
        run("dgnet", [&] { return p(dgnet(fm, f, net)); }, collect(st, {{"F'", fm}, {"F", f}}));
    }
    {
        ParameterStore st;
        const auto level = DilLevel::create(st, "dil", 4, 2, 2, 2, seed);
        randomize(st, rng, 0.5);
        const Tensor a = random_tensor(rng, {3, 4, 4});
        const Tensor b = random_tensor(rng, {3, 4, 4});
        Probe p;
        run("mhca", [&] { return p(cross_fusion(a, b, level)); }, collect(st, {{"x_flm", a}, {"x_udc", b}}));
    }
    {
        ParameterStore st;
        const auto head = FusionHead::create(st, "head", mc.level_channels, 6, 2, 2, 3, seed);
        randomize(st, rng, 0.5);
        std::vector<Tensor> f, o;
        for (std::size_t l = 0; l < 3; ++l) {
            const auto c = static_cast<std::size_t>(mc.level_channels[l]);
            const std::size_t side = 4 >> l;
            f.push_back(random_tensor(rng, {2, c, side, side}));
            o.push_back(random_tensor(rng, {2, c, side, side}));
        }
        Probe p;
        run("fusion head", [&] { return p(fusion_head(f, o, head).logits); },
            collect(st, {{"F1", f[0]}, {"O1", o[0]}, {"F3", f[2]}, {"O3", o[2]}}));
    }
    {
        ParameterStore st;
        const auto s1 = Fpen::create(st, "fpen.s1", 11, 7, 6, 3, seed);
        const auto s2 = Fpen::create(st, "fpen.s2", 6, 7, 6, 3, seed);
        randomize(st, rng, 0.5);
        const Tensor lf = random_tensor(rng, {2, 5}), imf = random_tensor(rng, {2, 6});
        Probe p1, p2;
        Params ps1, ps2;
        for (auto& e : collect(st, {{"label_feat", lf}, {"image_feat", imf}}))
            (e.first.rfind("fpen.s2", 0) == 0 ? ps2 : ps1).push_back(e);
        run("fpen_s1", [&] { return p1(fpen_s1(s1, lf, imf)); }, ps1);
        run("fpen_s2", [&] { return p2(fpen_s2(s2, imf)); }, ps2);
    }
    {
        ParameterStore st;
        const auto d = Denoiser::create(st, "diff.denoiser", 6, 4, 8, seed);
        randomize(st, rng, 0.5);
        const Tensor zt = random_tensor(rng, {2, 6}), xs = random_tensor(rng, {2, 6});
        Probe p;
        run("denoiser", [&] { return p(d(zt, 2, xs)); }, collect(st, {{"Z_t", zt}, {"x_S2", xs}}));
        const DiffusionSchedule s = default_schedule(3);
        const NoiseEstimator est = [&](const Tensor& z, int t, const Tensor& c) { return d(z, t, c); };
        Probe pc;
        run("reverse chain", [&] { return pc(reverse_chain(zt, xs, s, est, false)); },
            collect(st, {{"Z_T", zt}, {"x_S2", xs}}));
    }
    {
        ParameterStore st;
        const auto img = ImageEncoder::create(st, "enc.image", 16, mc.image_encoder_channels, 6, seed);
        const auto flm = LandmarkEncoder::create(st, "enc.flm", 16, mc.level_channels, seed);
        const auto lab = LabelEncoder::create(st, "enc.label", 3, 5, seed);
        randomize(st, rng, 0.5);
        const Tensor x = random_tensor(rng, {2, 3, 16, 16});
        const Tensor h = random_tensor(rng, {2, 1, 16, 16});
        const std::vector<int> y{2, 0};
        Probe pi, pl, pf;
        Params pimg, pflm, plab;
        for (auto& e : collect(st)) {
            if (e.first.rfind("enc.image", 0) == 0) pimg.push_back(e);
            if (e.first.rfind("enc.flm", 0) == 0) pflm.push_back(e);
            if (e.first.rfind("enc.label", 0) == 0) plab.push_back(e);
        }
        pimg.emplace_back("x", x);
        pflm.emplace_back("heatmap", h);
        run("image encoder", [&] { return pi(img(x)); }, pimg);
        run("landmark encoder", [&] {
            const auto f = flm(h);
            return ops::add(ops::add(pf(f[0]), ops::sum(ops::mul(f[1], f[1]))), ops::sum(f[2]));
        }, pflm);
        run("label encoder", [&] { return pl(lab(y)); }, plab);
    }
    {
        const Tensor logits = random_tensor(rng, {3, 4});
        const std::vector<int> y{1, 3, 0};
        run("cross_entropy", [&] { return cross_entropy(logits, y); }, {{"logits", logits}});
        const Tensor z1 = random_tensor(rng, {3, 5}), z2 = random_tensor(rng, {3, 5});
        run("kl_loss", [&] { return kl_loss(z1, z2); }, {{"Z_s1", z1}, {"Z_s2", z2}});
        const Tensor lg = random_tensor(rng, {3, 5});
        run("total_loss", [&] { return total_loss(lg, y, z1, z2).total; }, {{"logits", lg}, {"Z_s1", z1}, {"Z_s2", z2}});
    }
    {
        Config c = tiny_config();
        auto m = Model::create(c, 1);
        randomize(m->store, rng, 0.4);
        Split split;
        split.name = "grad";
        split.images = random_tensor(rng, {2, 3, 16, 16}, 0.5, false);
        split.udc = split.images;
        split.landmarks = random_tensor(rng, {2, 1, 16, 16}, 0.5, false);
        split.labels = {0, 2};
        const std::vector<std::size_t> rows{0, 1};
        const Batch b = make_batch(split, rows);
        run("stage-1 loss (2 samples)", [&] { return stage1_forward(*m, b).loss; }, collect(m->store));
    }
    {
        Config c = tiny_config();
        c.run.use_diffusion = true;
        c.run.loss = LossKind::total;
        c.run.insert_noise = true;
        auto m = Model::create(c, 2);
        randomize(m->store, rng, 0.15);
        m->store.set_trainable("enc.label.", false);
        m->store.set_trainable("fpen.s1.", false);
        m->store.set_trainable("enc.image.", false);
        m->store.set_trainable("enc.flm.", false);
        Split split;
        split.name = "grad";
        split.images = random_tensor(rng, {4, 3, 16, 16}, 0.5, false);
        split.udc = split.images;
        split.landmarks = random_tensor(rng, {4, 1, 16, 16}, 0.5, false);
        split.labels = {0, 1, 2, 1};
        const std::vector<std::size_t> rows{0, 1, 2, 3};
        const Batch b = make_batch(split, rows);
        run("stage-2 total loss (4 samples)", [&] { return stage2_train_forward(*m, b, 1).loss; }, collect(m->store));
    }
    return out;
}

}  // namespace lrdif
