#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace lrdif {

using json = nlohmann::json;

struct ToySpec {
    int num_classes = 7;
    int image_size = 32;
    int channels = 3;
    int train_count = 2000;
    int test_count = 500;
    std::uint64_t seed = 7;
    // Scales every per-sample perturbation; 0 renders each class as one fixed glyph.
    double jitter = 1.0;
};

struct DegradeParams {
    double brightness_gamma = 0.6;
    double blur_sigma = 1.0;
    double noise_sigma = 0.05;
    std::uint64_t seed = 11;
};

struct ModelConfig {
    int label_dim = 64;   // d_L
    int image_dim = 64;   // d_I
    int epr_dim = 64;     // C
    int fpen_hidden = 128;
    int fpen_layers = 4;
    std::vector<int> image_encoder_channels{16, 32, 64};  // stem, stage 1, stage 2
    std::vector<int> level_channels{32, 64, 128};
    int blocks_per_level = 2;
    int window = 4;
    int heads = 4;
    int mlp_ratio = 2;
    int head_dim = 64;  // fusion token width
    int head_heads = 4;
    bool per_head_temperature = false;
    int denoiser_hidden = 256;
    int time_dim = 16;
};

enum class LossKind { ce, total };

struct ScheduleConfig {
    int T = 4;
    // Negative values select the default ramp for T (see default_betas()).
    double beta_start = -1.0;
    double beta_end = -1.0;
    bool ddpm_coeff = false;
};

struct RunConfig {
    int stage = 1;
    std::uint64_t seed = 1;
    int epochs = 30;
    int stage2_epochs = -1;  // negative: same as epochs
    int batch_size = 64;
    double lr = 3.5e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    bool use_diffusion = true;
    LossKind loss = LossKind::total;
    bool insert_noise = true;
    // "forward": insert_noise toggles sampling Z_T from q(Z_T|Z) vs. its mean.
    // "reverse": Z_T is always sampled; insert_noise adds posterior noise to reverse steps in training.
    std::string noise_semantics = "forward";
    std::uint64_t eval_seed = 12345;
    bool train_encoders_s2 = false;
    bool eval_each_epoch = true;
};

struct Config {
    ToySpec data;
    DegradeParams degrade;
    ModelConfig model;
    ScheduleConfig schedule;
    RunConfig run;
};

void to_json(json& j, const ToySpec& v);
void from_json(const json& j, ToySpec& v);
void to_json(json& j, const DegradeParams& v);
void from_json(const json& j, DegradeParams& v);
void to_json(json& j, const ModelConfig& v);
void from_json(const json& j, ModelConfig& v);
void to_json(json& j, const ScheduleConfig& v);
void from_json(const json& j, ScheduleConfig& v);
void to_json(json& j, const RunConfig& v);
void from_json(const json& j, RunConfig& v);
void to_json(json& j, const Config& v);
void from_json(const json& j, Config& v);

// Overlay a (partial) JSON document on defaults. Unknown keys are a ConfigError.
Config config_from_json(const json& j);
Config load_config(const std::string& path);
void validate(const Config& c);

std::string loss_name(LossKind k);

// Stable digest of the canonical JSON of a config.
std::string config_hash(const Config& c);

// Ablation variants: V1 no diffusion + CE; V2 diffusion + CE; V3 diffusion +
// total loss + insert noise; V4 diffusion + total loss without noise.
RunConfig apply_variant(RunConfig run, const std::string& variant);

// Epoch count for the given stage.
int epochs_for_stage(const RunConfig& run, int stage);

// Stage-1 training ignores the diffusion and stage-2 settings; this resets
// them to defaults so equivalent stage-1 runs share one identity.
Config stage1_canonical(Config c);

}  // namespace lrdif
