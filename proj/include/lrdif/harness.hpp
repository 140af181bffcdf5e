#pragma once

// Training loops, evaluation, the ablation matrix, the iteration sweep and
// feature export. Every run directory holds metrics.jsonl (one record per
// epoch), timing.jsonl (wall-clock per epoch), checkpoint/ and eval.json.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lrdif/config.hpp"
#include "lrdif/dataset.hpp"
#include "lrdif/model.hpp"

namespace lrdif {

struct MetricsRecord {
    int epoch = 0;
    double train_loss = 0.0, ce = 0.0, kl = 0.0;
    bool has_kl = false;
    double train_acc = 0.0;
    std::optional<double> test_acc;
};
json to_json(const MetricsRecord& r);

struct EvalResult {
    double accuracy = 0.0;
    std::vector<std::vector<int>> confusion;  // [true][pred]
    std::vector<int> predictions, labels;
    std::vector<std::uint64_t> keys;
};

// Stage-1 models classify with the ground-truth label prior; stage-2 models
// run label-free inference. Labels are read only to score predictions.
EvalResult evaluate(const Model& m, const Split& split);
json to_json(const EvalResult& r);

struct TrainResult {
    std::filesystem::path dir;
    std::vector<MetricsRecord> metrics;
    EvalResult final_eval;
    bool reused = false;
};

struct TrainOptions {
    bool reuse = false;  // skip training when <out>/result.json matches this run
    bool verbose = false;
};

TrainResult train_stage1(const Config& cfg, const Dataset& data, const std::filesystem::path& out,
                         const TrainOptions& opt = {});
TrainResult train_stage2(const Config& cfg, const Dataset& data, const std::filesystem::path& stage1_checkpoint,
                         const std::filesystem::path& out, const TrainOptions& opt = {});

double median(std::vector<double> v);

struct AblationRow {
    std::string variant;
    double acc = 0.0;  // median over seeds
    std::vector<std::uint64_t> seeds;
    std::vector<double> per_seed;
};

std::vector<AblationRow> run_ablation(const Config& cfg, const Dataset& data, const std::vector<std::uint64_t>& seeds,
                                      const std::filesystem::path& out, const TrainOptions& opt = {});

struct SweepPoint {
    int T = 0;
    std::optional<double> acc;  // median; empty when the schedule was rejected
    std::vector<double> per_seed;
    std::string status = "ok";
};

std::vector<SweepPoint> sweep_iterations(const Config& cfg, const Dataset& data, const std::vector<int>& T_values,
                                         const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out,
                                         const TrainOptions& opt = {});

struct FeatureExport {
    Tensor features;    // [N, head_dim]
    Tensor projection;  // [N, 2], centered
    std::vector<int> labels;
};

FeatureExport extract_features(const Model& m, const Split& split);
// Projection onto the top-2 principal axes of the centered rows.
Tensor principal_projection(const Tensor& features, int components = 2);
// Mean inter-centroid distance over mean sample-to-own-centroid distance.
double class_separation(const Tensor& features, const std::vector<int>& labels);
void write_features(const FeatureExport& f, const std::filesystem::path& out);

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);

}  // namespace lrdif
