#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "helpers.hpp"
#include "lrdif/dataset.hpp"
#include "lrdif/degrade.hpp"
#include "lrdif/errors.hpp"
#include "lrdif/harness.hpp"
#include "lrdif/io.hpp"

using namespace lrdif;
namespace fs = std::filesystem;

namespace {

const Dataset& tiny_data() {
    static const Dataset d = [] {
        const Config c = test::tiny_config();
        Dataset data = generate(c.data);
        degrade_dataset(data, c.degrade);
        return data;
    }();
    return d;
}

const fs::path& tiny_stage1() {
    static const fs::path dir = [] {
        const auto out = test::scratch("h_stage1");
        train_stage1(test::tiny_config(), tiny_data(), out);
        return out;
    }();
    return dir;
}

std::vector<json> read_jsonl(const fs::path& p) {
    std::vector<json> rows;
    std::istringstream in(read_text(p));
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) rows.push_back(json::parse(line));
    return rows;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("stage-1 run directory") {
    const fs::path dir = tiny_stage1();
    for (const char* f : {"metrics.jsonl", "timing.jsonl", "eval.json", "result.json", "checkpoint/manifest.json"})
        CHECK(fs::exists(dir / f));
    const auto metrics = read_jsonl(dir / "metrics.jsonl");
    REQUIRE(metrics.size() == 2);
    CHECK(metrics[0].at("epoch") == 1);
    CHECK_FALSE(metrics[0].contains("kl"));
    CHECK_FALSE(metrics[0].contains("wall_ms"));
    CHECK(read_jsonl(dir / "timing.jsonl").at(1).contains("wall_ms"));
    const json eval = json::parse(read_text(dir / "eval.json"));
    CHECK(eval.at("count") == 12);
}

TEST_CASE("confusion rows sum to class counts") {
    const auto m = load_checkpoint(tiny_stage1() / "checkpoint");
    const EvalResult r = evaluate(*m, tiny_data().test);
    std::vector<int> counts(3, 0);
    for (int y : tiny_data().test.labels) ++counts[static_cast<std::size_t>(y)];
    double recall = 0.0;
    int diag = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        int row = 0;
        for (int v : r.confusion[i]) row += v;
        CHECK(row == counts[i]);
        diag += r.confusion[i][i];
        recall += static_cast<double>(r.confusion[i][i]) / counts[i];
    }
    CHECK(r.accuracy == doctest::Approx(diag / 12.0));
    if (counts[0] == counts[1] && counts[1] == counts[2]) CHECK(r.accuracy == doctest::Approx(recall / 3.0));
}

TEST_CASE("stage-2 freezes the label prior") {
    const fs::path s1 = tiny_stage1();
    const auto out = test::scratch("h_stage2");
    train_stage2(test::tiny_config(), tiny_data(), s1 / "checkpoint", out);
    const auto before = load_checkpoint(s1 / "checkpoint");
    const auto after = load_checkpoint(out / "checkpoint");
    for (const char* prefix : {"fpen.s1.", "enc.label.", "enc.image.", "enc.flm."})
        for (const auto& name : before->store.names_with_prefix(prefix))
            CHECK_MESSAGE(test::bit_equal(before->store.at(name).values(), after->store.at(name).values()), name);
    bool moved = false;
    for (const auto& name : after->store.names_with_prefix("udc."))
        moved |= !test::bit_equal(before->store.at(name).values(), after->store.at(name).values());
    CHECK(moved);
    const auto metrics = read_jsonl(out / "metrics.jsonl");
    for (const auto& row : metrics) {
        REQUIRE(row.contains("kl"));
        CHECK(row.at("train_loss").get<double>() ==
              doctest::Approx(row.at("ce").get<double>() + row.at("kl").get<double>()).epsilon(1e-12));
    }
}

TEST_CASE("stage-2 inference is label-free") {
    const auto out = test::scratch("h_noleak");
    train_stage2(test::tiny_config(), tiny_data(), tiny_stage1() / "checkpoint", out);
    const auto m = load_checkpoint(out / "checkpoint");
    Split shuffled = tiny_data().test;
    std::rotate(shuffled.labels.begin(), shuffled.labels.begin() + 5, shuffled.labels.end());
    CHECK(evaluate(*m, shuffled).predictions == evaluate(*m, tiny_data().test).predictions);
}

TEST_CASE("zero learning rate keeps accuracy") {
    Config c = test::tiny_config();
    c.run.lr = 0.0;
    c.run.weight_decay = 0.0;
    const auto out = test::scratch("h_lr0");
    const auto r = train_stage2(c, tiny_data(), tiny_stage1() / "checkpoint", out);
    c.run.stage2_epochs = 0;
    const auto r0 = train_stage2(c, tiny_data(), tiny_stage1() / "checkpoint", test::scratch("h_lr0_e0"));
    CHECK(r.final_eval.accuracy == r0.final_eval.accuracy);
    CHECK(r.final_eval.predictions == r0.final_eval.predictions);
}

TEST_CASE("training is deterministic and reusable") {
    const Config c = test::tiny_config();
    const auto a = test::scratch("h_det_a"), b = test::scratch("h_det_b");
    train_stage2(c, tiny_data(), tiny_stage1() / "checkpoint", a);
    train_stage2(c, tiny_data(), tiny_stage1() / "checkpoint", b);
    CHECK(read_text(a / "metrics.jsonl") == read_text(b / "metrics.jsonl"));
    CHECK(checkpoint_digest(a / "checkpoint") == checkpoint_digest(b / "checkpoint"));

    TrainOptions reuse;
    reuse.reuse = true;
    const auto r = train_stage2(c, tiny_data(), tiny_stage1() / "checkpoint", a, reuse);
    CHECK(r.reused);
    CHECK(r.metrics.size() == 2);
    Config other = c;
    other.run.lr = 1e-3;
    CHECK_FALSE(train_stage2(other, tiny_data(), tiny_stage1() / "checkpoint", a, reuse).reused);
}

TEST_CASE("missing inputs") {
    const Config c = test::tiny_config();
    CHECK_THROWS_AS(train_stage2(c, tiny_data(), test::scratch("h_none"), test::scratch("h_none_out")), DataError);
    Dataset raw = generate(c.data);
    CHECK_THROWS_AS(train_stage1(c, raw, test::scratch("h_raw")), DataError);
}

TEST_CASE("median") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0}) == 2.5);
    CHECK_THROWS(median({}));
}

TEST_CASE("ablation and sweep tables") {
    Config c = test::tiny_config();
    c.run.epochs = 1;
    const auto out = test::scratch("h_ablate");
    const auto rows = run_ablation(c, tiny_data(), {7}, out);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].variant == "V1");
    CHECK(rows[3].variant == "V4");
    const std::string csv = read_text(out / "ablation.csv");
    CHECK(csv.rfind("variant,acc,seeds\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    CHECK(fs::exists(out / "seed7" / "V3" / "checkpoint" / "manifest.json"));

    const auto sweep_out = test::scratch("h_sweep");
    c.schedule.beta_start = 0.3;
    c.schedule.beta_end = 0.95;
    const auto points = sweep_iterations(c, tiny_data(), {1, 32}, {7}, sweep_out);
    REQUIRE(points.size() == 2);
    CHECK_FALSE(points[0].acc.has_value());
    CHECK(points[0].status != "ok");
    CHECK(points[1].acc.has_value());
    const std::string sweep = read_text(sweep_out / "sweep.csv");
    CHECK(sweep.rfind("T,acc,seeds,status\n", 0) == 0);
    CHECK(std::count(sweep.begin(), sweep.end(), '\n') == 3);
}

TEST_CASE("feature export") {
    const auto m = load_checkpoint(tiny_stage1() / "checkpoint");
    const FeatureExport f = extract_features(*m, tiny_data().test);
    CHECK(f.features.dim(0) == 12);
    CHECK(f.projection.shape() == Shape{12, 2});
    for (std::size_t k = 0; k < 2; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < 12; ++i) s += f.projection.at(i * 2 + k);
        CHECK(std::abs(s) < 1e-9);
    }
    const auto out = test::scratch("h_feat");
    write_features(f, out);
    CHECK_FALSE(fs::is_empty(out));
}

TEST_CASE("principal projection recovers the dominant axis") {
    std::vector<double> v;
    for (int i = 0; i < 20; ++i) {
        const double t = i - 9.5;
        v.insert(v.end(), {0.1 * (i % 2), 3.0 * t, 0.0});
    }
    const Tensor p = principal_projection(Tensor::from({20, 3}, v));
    for (int i = 0; i < 20; ++i) CHECK(std::abs(p.at(static_cast<std::size_t>(i) * 2)) == doctest::Approx(3.0 * std::abs(i - 9.5)));
}

TEST_CASE("class separation") {
    const Tensor tight = Tensor::from({4, 1}, {0.0, 0.1, 10.0, 10.1});
    const Tensor loose = Tensor::from({4, 1}, {0.0, 4.0, 6.0, 10.0});
    const std::vector<int> labels{0, 0, 1, 1};
    CHECK(class_separation(tight, labels) > class_separation(loose, labels));
    CHECK(class_separation(tight, labels) == doctest::Approx(10.0 / 0.05));
}

}
