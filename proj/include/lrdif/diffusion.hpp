#pragma once

// Diffusion over the compact EPR vector: schedules, forward noising, the
// conditional noise estimator, the deterministic reverse chain and the
// stage-2 losses.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lrdif/config.hpp"
#include "lrdif/nn.hpp"

namespace lrdif {

struct DiffusionSchedule {
    int T = 0;
    std::vector<double> beta, alpha, alpha_bar;  // index t-1 holds step t
};

inline constexpr double kTerminalAlphaBar = 1e-4;

// Running-product tables for arbitrary betas in (0,1); no terminal-noise check.
DiffusionSchedule schedule_from_betas(std::vector<double> betas);
// Linear ramp from beta_start to beta_end (T = 1 gives {beta_end}); rejects
// schedules whose alpha_bar[T] exceeds 1e-4 and names a sufficient beta_end.
DiffusionSchedule make_schedule(int T, double beta_start, double beta_end);
// Constant beta = 1 - 1e-4^(1/T), so alpha_bar[T] = 1e-4.
DiffusionSchedule default_schedule(int T);
DiffusionSchedule schedule_from_config(const ScheduleConfig& cfg);

// sqrt(alpha_bar) z + sqrt(1 - alpha_bar) eps
Tensor forward_diffuse(const Tensor& z, double alpha_bar, const Tensor& eps);
Tensor forward_diffuse(const Tensor& z, const DiffusionSchedule& s, const Tensor& eps);

// Standard normal tensor whose row i is drawn from hash(seed, parts..., keys[i]).
Tensor normal_rows(std::uint64_t seed, std::initializer_list<std::uint64_t> parts, std::span<const std::uint64_t> keys,
                   std::size_t width);

// Sinusoidal embedding of a step index: [sin(t w_i), cos(t w_i)], w_i = 10000^(-i/(d/2)).
std::vector<double> time_embedding(int t, std::size_t dim);

// eps_theta(Concat(Z_t, emb(t), x_S2)): MLP with two GELU hidden layers.
struct Denoiser {
    std::vector<Linear> layers;
    std::size_t time_dim = 0;

    static Denoiser create(ParameterStore& store, const std::string& prefix, std::size_t z_dim,
                           std::size_t time_dim, std::size_t hidden, std::uint64_t seed);
    Tensor operator()(const Tensor& z_t, int t, const Tensor& x_s2) const;
};

using NoiseEstimator = std::function<Tensor(const Tensor& z_t, int t, const Tensor& x_s2)>;
// Additive term for step t of the chain, or an undefined tensor for none.
using ReverseNoise = std::function<Tensor(int t, const Shape& shape)>;

// Coefficient on eps in the reverse update: (1-a_t)/sqrt(1-a_t), or (1-a_t)/sqrt(1-abar_t)
// with ddpm_coeff. Zero when the denominator vanishes.
double reverse_coefficient(const DiffusionSchedule& s, int t, bool ddpm_coeff);

// Z_{t-1} = (Z_t - coefficient * eps_hat) / sqrt(a_t)
Tensor reverse_step(const Tensor& z_t, int t, const Tensor& x_s2, const DiffusionSchedule& s,
                    const NoiseEstimator& eps, bool ddpm_coeff);
Tensor reverse_chain(const Tensor& z_T, const Tensor& x_s2, const DiffusionSchedule& s, const NoiseEstimator& eps,
                     bool ddpm_coeff, const ReverseNoise& noise = {});

// Posterior standard deviation sqrt(beta_t (1 - abar_{t-1}) / (1 - abar_t)); 0 at t = 1.
double posterior_sigma(const DiffusionSchedule& s, int t);

// Batch mean of KL(softmax(z1) || softmax(z2)).
Tensor kl_loss(const Tensor& z1, const Tensor& z2);

struct Losses {
    Tensor total, ce, kl;
};
// L_total = L_ce + L_kl.
Losses total_loss(const Tensor& logits, std::span<const int> labels, const Tensor& z1, const Tensor& z2);

}  // namespace lrdif
