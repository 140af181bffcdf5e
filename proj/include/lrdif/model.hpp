#pragma once

// The full LRDif model: encoders, prior networks, UDCformer and (stage 2)
// the denoiser, plus the stage-specific forward passes and checkpoint I/O.

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "lrdif/config.hpp"
#include "lrdif/dataset.hpp"
#include "lrdif/diffusion.hpp"
#include "lrdif/encoders.hpp"
#include "lrdif/fpen.hpp"
#include "lrdif/nn.hpp"
#include "lrdif/udcformer.hpp"

namespace lrdif {

struct Model {
    Config config;
    int stage = 1;
    ParameterStore store;
    LabelEncoder label;
    ImageEncoder image;
    LandmarkEncoder landmarks;
    Fpen s1;
    std::optional<Fpen> s2;
    UdcFormer udc;
    std::optional<Denoiser> denoiser;
    std::optional<DiffusionSchedule> schedule;

    // Stage 1 omits FPEN_S2 and the denoiser; stage 2 adds FPEN_S2 and, when
    // run.use_diffusion, the denoiser. Fresh parameters come from run.seed.
    static std::unique_ptr<Model> create(const Config& config, int stage);

    std::size_t epr_dim() const { return static_cast<std::size_t>(config.model.epr_dim); }
    NoiseEstimator noise_estimator() const;
};

struct Batch {
    Tensor udc;        // [B,3,S,S]
    Tensor landmarks;  // [B,1,S,S]
    std::vector<int> labels;
    std::vector<std::uint64_t> keys;  // global sample indices
};

Batch make_batch(const Split& split, std::span<const std::size_t> rows);

struct ForwardOut {
    Tensor logits;
    Tensor features;
    Tensor z_s1;  // FPEN_S1 prior (stage 1, stage-2 training)
    Tensor z;     // EPR fed to the UDCformer
    Tensor ce, kl, loss;
};

// Stage 1: Z = FPEN_S1(E_L(y), E_I(x)); loss = CE.
ForwardOut stage1_forward(const Model& m, const Batch& b);

// Stage-2 training pass for the given epoch. Labels feed only the frozen
// FPEN_S1 target and the losses.
ForwardOut stage2_train_forward(const Model& m, const Batch& b, int epoch);

// Label-free inference: Z_T' ~ N(0, I) from hash(eval_seed, index), reverse
// chain conditioned on x_S2 (or Z = x_S2 without diffusion). Never reads b.labels.
ForwardOut stage2_infer(const Model& m, const Tensor& udc, const Tensor& landmarks,
                        std::span<const std::uint64_t> keys);

// Rounds every parameter to f32, the checkpoint storage precision.
void round_to_storage(ParameterStore& store);

void save_checkpoint(const Model& m, const std::filesystem::path& dir);
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& dir);
// Copies every parameter of a checkpoint into `m` after checking that the
// recorded model configuration matches.
void load_parameters(Model& m, const std::filesystem::path& dir);
std::string checkpoint_digest(const std::filesystem::path& dir);

}  // namespace lrdif
