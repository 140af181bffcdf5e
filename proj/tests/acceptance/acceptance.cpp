// Acceptance checks. Each criterion prints one PASS/FAIL line; the exit code
// is non-zero when any selected criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "lrdif/cli.hpp"
#include "lrdif/dataset.hpp"
#include "lrdif/degrade.hpp"
#include "lrdif/diffusion.hpp"
#include "lrdif/grad_suite.hpp"
#include "lrdif/harness.hpp"
#include "lrdif/io.hpp"
#include "lrdif/ops.hpp"
#include "lrdif/rng.hpp"
#include "lrdif/udcformer.hpp"

using namespace lrdif;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kGradTol = 1e-4;
constexpr double kGradSuiteSeconds = 60.0;
constexpr std::size_t kDiffusionDraws = 100000;
constexpr double kStandardErrors = 3.0;
constexpr double kReverseHandValue = 1.01036;
constexpr double kReverseTol = 1e-9;
constexpr double kStage1Acc = 0.99;
constexpr int kStage1Epochs = 30;
constexpr double kStage1Seconds = 600.0;
constexpr double kPoint = 0.01;
constexpr double kPlateau = 0.005;
constexpr double kSoftmaxTol = 1e-9;
constexpr double kBrightnessTol = 0.01;
constexpr std::size_t kBrightnessImages = 1000;
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

struct Context {
    fs::path work;
    fs::path desk_config;
};

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

Config desk(const Context& ctx) { return load_config(ctx.desk_config.string()); }

// The default 7-class paired toy set, generated once per work directory.
Dataset paired_toy(const Context& ctx) {
    const fs::path dir = ctx.work / "toy";
    if (fs::exists(dir / "manifest.json")) return load_dataset(dir);
    const Config c = desk(ctx);
    Dataset d = generate(c.data);
    degrade_dataset(d, c.degrade);
    save_dataset(d, dir);
    return d;
}

Config small_config() {
    Config c;
    c.data.image_size = 16;
    c.data.train_count = 140;
    c.data.test_count = 70;
    ModelConfig& m = c.model;
    m.label_dim = m.image_dim = m.epr_dim = 8;
    m.fpen_hidden = 16;
    m.fpen_layers = 2;
    m.image_encoder_channels = {4, 8, 8};
    m.level_channels = {8, 8, 16};
    m.blocks_per_level = 1;
    m.window = 2;
    m.heads = 2;
    m.head_dim = 16;
    m.head_heads = 2;
    m.denoiser_hidden = 32;
    m.time_dim = 4;
    c.run.epochs = 2;
    c.run.batch_size = 16;
    c.run.lr = 2e-3;
    return c;
}

Verdict gradients(const Context&) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto report = run_grad_suite(1, 1e-6, 8);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double worst = 0.0;
    std::string worst_name;
    for (const auto& b : report)
        if (b.max_rel_error >= worst) {
            worst = b.max_rel_error;
            worst_name = b.name;
        }
    return {worst < kGradTol && secs < kGradSuiteSeconds,
            std::to_string(report.size()) + " blocks, max rel error " + fmt(worst, 3) + " (" + worst_name + "), limit " +
                fmt(kGradTol) + "; " + fmt(secs, 3) + " s, limit " + fmt(kGradSuiteSeconds) + " s"};
}

Verdict diffusion_statistics(const Context&) {
    const DiffusionSchedule s = default_schedule(4);
    const double ab = s.alpha_bar.back();
    const std::vector<double> z0{1.5, -0.7, 0.0, 3.0};
    const std::size_t c = z0.size();
    std::vector<std::uint64_t> keys(kDiffusionDraws);
    std::iota(keys.begin(), keys.end(), 0);
    std::vector<double> rows;
    for (std::size_t i = 0; i < kDiffusionDraws; ++i) rows.insert(rows.end(), z0.begin(), z0.end());
    const Tensor z = Tensor::from({kDiffusionDraws, c}, std::move(rows));
    const Tensor zt = forward_diffuse(z, s, normal_rows(99, {1}, keys, c));
    const auto n = static_cast<double>(kDiffusionDraws);
    double worst_mean = 0.0, worst_var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
        double mean = 0.0, var = 0.0;
        for (std::size_t i = 0; i < kDiffusionDraws; ++i) mean += zt.at(i * c + j) / n;
        for (std::size_t i = 0; i < kDiffusionDraws; ++i) var += (zt.at(i * c + j) - mean) * (zt.at(i * c + j) - mean);
        var /= n - 1.0;
        const double se_mean = std::sqrt((1.0 - ab) / n);
        const double se_var = (1.0 - ab) * std::sqrt(2.0 / (n - 1.0));
        worst_mean = std::max(worst_mean, std::abs(mean - std::sqrt(ab) * z0[j]) / se_mean);
        worst_var = std::max(worst_var, std::abs(var - (1.0 - ab)) / se_var);
    }

    const DiffusionSchedule one = schedule_from_betas({0.25});
    const NoiseEstimator half = [](const Tensor& zt_, int, const Tensor&) { return Tensor::full(zt_.shape(), 0.5); };
    const double step =
        reverse_step(Tensor::from({1, 1}, {1.0}), 1, Tensor::zeros({1, 1}), one, half, false).item();
    const bool stats_ok = worst_mean <= kStandardErrors && worst_var <= kStandardErrors;
    const bool step_ok = std::abs(step - kReverseHandValue) <= kReverseTol;
    std::ostringstream d;
    d << std::setprecision(17) << "forward mean " << std::setprecision(3) << worst_mean << " SE, variance "
      << worst_var << " SE (limit 3); reverse_step(0.75, 1.0, 0.5) = " << std::setprecision(17) << step << " vs "
      << std::setprecision(6) << kReverseHandValue << " (tol 1e-9)";
    return {stats_ok && step_ok, d.str()};
}

Verdict stage1_sanity(const Context& ctx) {
    Config c = desk(ctx);
    c.run.seed = kSeeds.front();
    c.run.epochs = kStage1Epochs;
    TrainOptions opt;
    opt.reuse = true;
    const fs::path out = ctx.work / "runs" / "seed1" / "stage1";
    const TrainResult r = train_stage1(c, paired_toy(ctx), out, opt);
    double secs = 0.0;
    std::istringstream timing(read_text(out / "timing.jsonl"));
    for (std::string line; std::getline(timing, line);)
        if (!line.empty()) secs += json::parse(line).at("wall_ms").get<double>() / 1000.0;
    int first = 0;
    for (const auto& m : r.metrics)
        if (!first && m.test_acc && *m.test_acc >= kStage1Acc) first = m.epoch;
    const double acc = r.final_eval.accuracy;
    return {acc >= kStage1Acc && secs < kStage1Seconds,
            "test accuracy " + fmt(acc) + " (need >= " + fmt(kStage1Acc) + ") after " + std::to_string(kStage1Epochs) +
                " epochs (first reached at epoch " + std::to_string(first) + "), " + fmt(secs, 4) + " s, limit " +
                fmt(kStage1Seconds) + " s"};
}

Verdict ablation(const Context& ctx) {
    Config c = desk(ctx);
    c.run.epochs = kStage1Epochs;
    TrainOptions opt;
    opt.reuse = true;
    const auto rows = run_ablation(c, paired_toy(ctx), kSeeds, ctx.work / "runs", opt);
    const double v1 = rows.at(0).acc;
    bool ok = true;
    std::ostringstream d;
    d << "3-seed medians V1 " << fmt(v1);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        ok = ok && rows[i].acc - v1 >= kPoint - 1e-12;
        d << ", " << rows[i].variant << " " << fmt(rows[i].acc);
    }
    d << "; need V2..V4 >= V1 + 0.01";
    return {ok, d.str()};
}

Verdict iteration_plateau(const Context& ctx) {
    Config c = desk(ctx);
    c.run.epochs = kStage1Epochs;
    TrainOptions opt;
    opt.reuse = true;
    const auto pts = sweep_iterations(c, paired_toy(ctx), {1, 4, 32}, kSeeds, ctx.work / "runs", opt);
    std::map<int, double> acc;
    for (const auto& p : pts)
        if (p.acc) acc[p.T] = *p.acc;
    if (acc.size() != 3) return {false, "a sweep point was rejected"};
    const double gain = acc[4] - acc[1], gap = std::abs(acc[4] - acc[32]);
    return {gain >= kPoint - 1e-12 && gap <= kPlateau + 1e-12,
            "3-seed medians T1 " + fmt(acc[1]) + ", T4 " + fmt(acc[4]) + ", T32 " + fmt(acc[32]) + "; T4-T1 " +
                fmt(gain, 3) + " (need >= 0.01), |T4-T32| " + fmt(gap, 3) + " (need <= 0.005)"};
}

int cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli_dispatch(args, out, err);
    if (code != kExitOk) std::cerr << err.str();
    return code;
}

std::vector<std::string> column(const fs::path& csv, std::size_t col) {
    std::vector<std::string> v;
    std::istringstream in(read_text(csv));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::istringstream cells(line);
        std::string cell;
        for (std::size_t i = 0; i <= col; ++i) std::getline(cells, cell, ',');
        v.push_back(cell);
    }
    return v;
}

Verdict no_leakage(const Context& ctx) {
    const fs::path root = ctx.work / "leak";
    fs::create_directories(root);
    const fs::path cfg = root / "config.json";
    write_text_atomic(cfg, json(small_config()).dump(2));
    const std::string c = cfg.string(), clean = (root / "clean").string(), paired = (root / "paired").string();
    const std::string s1 = (root / "s1").string(), s2 = (root / "s2").string();
    if (cli({"--config", c, "gen-data", "--out", clean}) || cli({"--config", c, "degrade", "--data", clean, "--out", paired}) ||
        cli({"--config", c, "train-stage1", "--data", paired, "--out", s1, "--quiet", "--reuse"}) ||
        cli({"--config", c, "train-stage2", "--data", paired, "--stage1", s1 + "/checkpoint", "--out", s2, "--quiet",
             "--reuse"}))
        return {false, "pipeline failed"};

    ToySpec spec;
    std::optional<DegradeParams> deg;
    Split test = load_split(root / "paired" / "test", &spec, &deg);
    Rng rng(hash_seed(2024, {}));
    for (std::size_t i = test.labels.size(); i > 1; --i) std::swap(test.labels[i - 1], test.labels[rng.below(i)]);
    save_split(test, spec, deg, root / "permuted" / "test");

    if (cli({"infer", "--checkpoint", s2 + "/checkpoint", "--data", paired, "--out", (root / "inf_a").string()}) ||
        cli({"infer", "--checkpoint", s2 + "/checkpoint", "--data", (root / "permuted" / "test").string(), "--out",
             (root / "inf_b").string()}))
        return {false, "infer failed"};
    const auto pa = column(root / "inf_a" / "predictions.csv", 1), pb = column(root / "inf_b" / "predictions.csv", 1);
    const auto la = column(root / "inf_a" / "predictions.csv", 2), lb = column(root / "inf_b" / "predictions.csv", 2);
    std::size_t changed_preds = 0, changed_labels = 0;
    for (std::size_t i = 0; i < pa.size() && i < pb.size(); ++i) {
        changed_preds += pa[i] != pb[i];
        changed_labels += la[i] != lb[i];
    }
    const bool ok = pa.size() == pb.size() && !pa.empty() && changed_labels > 0 && changed_preds == 0;
    return {ok, std::to_string(changed_labels) + " of " + std::to_string(la.size()) +
                    " test labels permuted, " + std::to_string(changed_preds) + " predictions changed (need 0)"};
}

Verdict determinism(const Context& ctx) {
    const Config c = small_config();
    Dataset d = generate(c.data);
    degrade_dataset(d, c.degrade);
    std::vector<std::string> metrics, digests;
    for (const char* run : {"a", "b"}) {
        const fs::path base = ctx.work / "determinism" / run;
        fs::remove_all(base);
        train_stage1(c, d, base / "stage1");
        train_stage2(c, d, base / "stage1" / "checkpoint", base / "stage2");
        for (const char* stage : {"stage1", "stage2"}) {
            metrics.push_back(read_text(base / stage / "metrics.jsonl"));
            digests.push_back(checkpoint_digest(base / stage / "checkpoint"));
        }
    }
    const bool same_metrics = metrics[0] == metrics[2] && metrics[1] == metrics[3];
    const bool same_ckpt = digests[0] == digests[2] && digests[1] == digests[3];
    return {same_metrics && same_ckpt, std::string("metrics.jsonl ") + (same_metrics ? "identical" : "differ") +
                                           ", checkpoint checksums " + (same_ckpt ? "identical" : "differ") +
                                           " across two stage-1 + stage-2 runs"};
}

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor::from(std::move(shape), std::move(v));
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (std::bit_cast<std::uint64_t>(a.at(i)) != std::bit_cast<std::uint64_t>(b.at(i))) return false;
    return true;
}

void zero(ParameterStore& st, const std::string& prefix) {
    for (const auto& name : st.names_with_prefix(prefix)) {
        Tensor t = st.at(name);
        for (auto& v : t.mutable_values()) v = 0.0;
    }
}

Verdict invariants(const Context&) {
    Rng rng(8);
    std::vector<std::string> failed;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) failed.push_back(what);
    };

    const Tensor logits = random_tensor(rng, {100, 10}, 10.0);
    const Tensor p = ops::softmax(logits, -1);
    bool normalized = true;
    for (std::size_t r = 0; r < 100; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < 10; ++k) {
            normalized = normalized && p.at(r * 10 + k) > 0.0;
            s += p.at(r * 10 + k);
        }
        normalized = normalized && std::abs(s - 1.0) <= kSoftmaxTol;
    }
    expect(normalized, "softmax normalization");

    bool kl_ok = true;
    for (int i = 0; i < 100; ++i) {
        const Tensor a = random_tensor(rng, {1, 8}), b = random_tensor(rng, {1, 8});
        kl_ok = kl_ok && kl_loss(a, b).item() > 0.0 && kl_loss(a, a).item() == 0.0;
    }
    expect(kl_ok, "KL non-negativity");

    ModelConfig mc;
    mc.heads = 2;
    mc.window = 2;
    mc.mlp_ratio = 2;
    {
        ParameterStore st;
        const auto net = DMNet::create(st, "dmnet", 4, 2, false, 9, 1);
        zero(st, "dmnet.");
        const Tensor fm = random_tensor(rng, {2, 4, 3, 3}), f = random_tensor(rng, {2, 4, 3, 3});
        expect(bit_equal(dmnet(fm, f, net), f), "DMNet residual identity");
    }
    {
        ParameterStore st;
        const auto net = DGNet::create(st, "dgnet", 3, 1);
        zero(st, "dgnet.");
        const Tensor fm = random_tensor(rng, {2, 3, 4, 4}), f = random_tensor(rng, {2, 3, 4, 4});
        expect(bit_equal(dgnet(fm, f, net), f), "DGNet residual identity");
    }
    {
        ParameterStore st;
        const auto block = DTBlock::create(st, "blk", 4, 3, mc, 16, 1);
        zero(st, "blk.");
        const Tensor f = random_tensor(rng, {2, 4, 4, 4}), z = random_tensor(rng, {2, 3});
        expect(bit_equal(block(f, z), f), "DT block residual identity");
    }
    {
        ParameterStore st;
        const auto level = DilLevel::create(st, "dil", 4, 2, 2, 2, 1);
        zero(st, "dil.");
        const Tensor a = random_tensor(rng, {3, 4, 4}), b = random_tensor(rng, {3, 4, 4});
        expect(bit_equal(cross_fusion(a, b, level), b), "cross-fusion residual identity");
    }
    {
        ParameterStore st;
        const auto head = FusionHead::create(st, "head", {2, 2, 2}, 4, 2, 2, 3, 1);
        for (const char* prefix : {"head.q.", "head.k.", "head.v.", "head.o.", "head.mlp1.", "head.mlp2."})
            zero(st, prefix);
        std::vector<Tensor> f, o;
        for (int l = 0; l < 3; ++l) {
            f.push_back(random_tensor(rng, {1, 2, 2, 2}));
            o.push_back(random_tensor(rng, {1, 2, 2, 2}));
        }
        const HeadOutput out = fusion_head(f, o, head);
        double worst = 0.0;
        for (std::size_t dd = 0; dd < 4; ++dd) {
            double mean = 0.0;
            for (std::size_t l = 0; l < 3; ++l) {
                const Tensor pooled = ops::concat({ops::mean(ops::reshape(f[l], {1, 2, 4}), -1),
                                                   ops::mean(ops::reshape(o[l], {1, 2, 4}), -1)},
                                                  1);
                mean += head.tokens[l](pooled).at(dd) / 3.0;
            }
            worst = std::max(worst, std::abs(out.features.at(dd) - mean));
        }
        expect(worst < 1e-12, "fusion head residual identity");
    }

    for (std::size_t w : {2u, 4u}) {
        const Tensor x = random_tensor(rng, {2, 3, 8, 8});
        expect(bit_equal(window_merge(window_partition(x, w), 2, 8, 8, w), x),
               "window round trip w=" + std::to_string(w));
    }

    const Tensor t = random_tensor(rng, {3, 5, 2});
    expect(bit_equal(decode_tnsr(encode_tnsr(t, DType::f64)), t), "TNSR f64 round trip");
    std::vector<double> as_f32;
    for (double v : t.values()) as_f32.push_back(static_cast<float>(v));
    const Tensor t32 = Tensor::from({3, 5, 2}, as_f32);
    expect(bit_equal(decode_tnsr(encode_tnsr(t32, DType::f32)), t32), "TNSR f32 round trip");

    std::string d = failed.empty() ? "softmax, KL, 5 residual identities, window and TNSR round trips hold"
                                   : "failed:";
    for (const auto& f : failed) d += " [" + f + "]";
    return {failed.empty(), d};
}

Verdict degradation(const Context&) {
    ToySpec spec;
    const Split clean = generate_split(spec, "train", 0, kBrightnessImages);
    DegradeParams p;
    p.noise_sigma = 0.02;
    Split dark = clean;
    degrade_split(dark, p);
    double sum_clean = 0.0, sum_dark = 0.0;
    for (double v : clean.images.values()) sum_clean += v;
    for (double v : dark.udc->values()) sum_dark += v;
    const double ratio = sum_dark / sum_clean;
    const bool ratio_ok = std::abs(ratio / p.brightness_gamma - 1.0) <= kBrightnessTol;

    DegradeParams id;
    id.brightness_gamma = 1.0;
    id.blur_sigma = 0.0;
    id.noise_sigma = 0.0;
    Split same = clean;
    degrade_split(same, id);
    const bool identity_ok = bit_equal(*same.udc, clean.images);
    return {ratio_ok && identity_ok, "brightness ratio " + fmt(ratio, 6) + " vs gamma " + fmt(p.brightness_gamma) +
                                         " (tol 1%) over " + std::to_string(kBrightnessImages) +
                                         " images; identity params " + (identity_ok ? "bit-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LRDif acceptance checks"};
    std::vector<int> criteria;
    Context ctx;
    std::string work = (fs::temp_directory_path() / "lrdif_acceptance").string();
    std::string config = LRDIF_DESK_CONFIG;
    app.add_option("--criterion", criteria, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
    app.add_option("--workdir", work, "Scratch directory shared by the training criteria");
    app.add_option("--config", config, "Desk-scale config for the training criteria");
    CLI11_PARSE(app, argc, argv);
    ctx.work = work;
    ctx.desk_config = config;
    fs::create_directories(ctx.work);

    const std::vector<std::pair<std::string, std::function<Verdict(const Context&)>>> all{
        {"gradient correctness", gradients},
        {"diffusion statistics", diffusion_statistics},
        {"stage-1 sanity", stage1_sanity},
        {"ablation ordering", ablation},
        {"iteration plateau", iteration_plateau},
        {"no leakage", no_leakage},
        {"determinism", determinism},
        {"invariant suite", invariants},
        {"degradation contract", degradation},
    };
    if (criteria.empty()) {
        criteria.resize(all.size());
        std::iota(criteria.begin(), criteria.end(), 1);
    }
    bool ok = true;
    for (int n : criteria) {
        const auto& [name, check] = all.at(static_cast<std::size_t>(n - 1));
        Verdict v;
        try {
            v = check(ctx);
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        ok = ok && v.pass;
        std::cout << "criterion " << n << " " << (v.pass ? "PASS" : "FAIL") << "  " << name << ": " << v.detail
                  << std::endl;
    }
    return ok ? 0 : 1;
}
