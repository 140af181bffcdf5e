#include "lrdif/diffusion.hpp"

#include <cmath>
#include <sstream>

#include "lrdif/errors.hpp"
#include "lrdif/rng.hpp"
#include "lrdif/udcformer.hpp"

namespace lrdif {

namespace {

std::vector<double> linear_betas(int T, double beta_start, double beta_end) {
    if (T == 1) return {beta_end};
    std::vector<double> b(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) b[static_cast<std::size_t>(t)] = beta_start + (beta_end - beta_start) * t / (T - 1);
    return b;
}

double terminal_alpha_bar(int T, double beta_start, double beta_end) {
    double ab = 1.0;
    for (double b : linear_betas(T, beta_start, beta_end)) ab *= 1.0 - b;
    return ab;
}

bool terminal_ok(double alpha_bar) { return alpha_bar <= kTerminalAlphaBar * (1.0 + 1e-9); }

}  // namespace

DiffusionSchedule schedule_from_betas(std::vector<double> betas) {
    if (betas.empty()) throw ConfigError("schedule needs at least one step");
    DiffusionSchedule s;
    s.T = static_cast<int>(betas.size());
    double ab = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw ConfigError("schedule betas must lie in (0, 1)");
        s.alpha.push_back(1.0 - b);
        ab *= 1.0 - b;
        s.alpha_bar.push_back(ab);
    }
    s.beta = std::move(betas);
    return s;
}

DiffusionSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("schedule T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("schedule requires 0 < beta_start <= beta_end < 1");
    if (!terminal_ok(terminal_alpha_bar(T, beta_start, beta_end))) {
        double lo = beta_end, hi = 1.0;
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (lo + hi);
            (terminal_ok(terminal_alpha_bar(T, beta_start, mid)) ? hi : lo) = mid;
        }
        // Round the suggestion up to six decimals when that still passes.
        const double rounded = std::ceil(hi * 1e6) / 1e6;
        const bool use_rounded = rounded < 1.0 && terminal_ok(terminal_alpha_bar(T, beta_start, rounded));
        std::ostringstream msg;
        msg.precision(use_rounded ? 10 : 17);
        msg << "schedule alpha_bar[T] = " << terminal_alpha_bar(T, beta_start, beta_end) << " exceeds "
            << kTerminalAlphaBar << "; beta_end >= " << (use_rounded ? rounded : hi) << " is needed for T = " << T
            << " with beta_start = " << beta_start;
        throw ConfigError(msg.str());
    }
    return schedule_from_betas(linear_betas(T, beta_start, beta_end));
}

DiffusionSchedule default_schedule(int T) {
    if (T < 1) throw ConfigError("schedule T must be >= 1");
    const double beta = 1.0 - std::pow(kTerminalAlphaBar, 1.0 / T);
    return make_schedule(T, beta, beta);
}

DiffusionSchedule schedule_from_config(const ScheduleConfig& cfg) {
    if (cfg.beta_start < 0.0 && cfg.beta_end < 0.0) return default_schedule(cfg.T);
    if (cfg.beta_start < 0.0 || cfg.beta_end < 0.0)
        throw ConfigError("schedule: set both beta_start and beta_end, or neither");
    return make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
}

Tensor forward_diffuse(const Tensor& z, double alpha_bar, const Tensor& eps) {
    if (z.shape() != eps.shape()) throw ShapeError("forward_diffuse: noise shape differs from Z");
    if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw ConfigError("forward_diffuse: alpha_bar outside [0, 1]");
    return ops::add(ops::scale(z, std::sqrt(alpha_bar)), ops::scale(eps, std::sqrt(1.0 - alpha_bar)));
}

Tensor forward_diffuse(const Tensor& z, const DiffusionSchedule& s, const Tensor& eps) {
    return forward_diffuse(z, s.alpha_bar.back(), eps);
}

Tensor normal_rows(std::uint64_t seed, std::initializer_list<std::uint64_t> parts, std::span<const std::uint64_t> keys,
                   std::size_t width) {
    std::vector<double> v(keys.size() * width);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        std::uint64_t h = hash_seed(seed, parts);
        h = hash_seed(h, {keys[i]});
        Rng rng(h);
        for (std::size_t c = 0; c < width; ++c) v[i * width + c] = rng.normal();
    }
    return Tensor::from({keys.size(), width}, std::move(v));
}

std::vector<double> time_embedding(int t, std::size_t dim) {
    const std::size_t half = dim / 2;
    std::vector<double> e(dim);
    for (std::size_t i = 0; i < half; ++i) {
        const double w = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e[i] = std::sin(t * w);
        e[half + i] = std::cos(t * w);
    }
    return e;
}

Denoiser Denoiser::create(ParameterStore& store, const std::string& prefix, std::size_t z_dim, std::size_t time_dim,
                          std::size_t hidden, std::uint64_t seed) {
    Denoiser d;
    d.time_dim = time_dim;
    d.layers.push_back(Linear::create(store, prefix + ".layer0", 2 * z_dim + time_dim, hidden, seed));
    d.layers.push_back(Linear::create(store, prefix + ".layer1", hidden, hidden, seed));
    d.layers.push_back(Linear::create(store, prefix + ".layer2", hidden, z_dim, seed));
    return d;
}

Tensor Denoiser::operator()(const Tensor& z_t, int t, const Tensor& x_s2) const {
    if (z_t.rank() != 2 || z_t.shape() != x_s2.shape())
        throw ShapeError("denoiser: Z_t " + shape_str(z_t.shape()) + " and x_S2 " + shape_str(x_s2.shape()) +
                         " must both be [B, C]");
    const std::size_t b = z_t.dim(0);
    const auto emb = time_embedding(t, time_dim);
    std::vector<double> rows;
    rows.reserve(b * time_dim);
    for (std::size_t i = 0; i < b; ++i) rows.insert(rows.end(), emb.begin(), emb.end());
    Tensor h = ops::concat({z_t, Tensor::from({b, time_dim}, std::move(rows)), x_s2}, 1);
    h = ops::gelu(layers[0](h));
    h = ops::gelu(layers[1](h));
    return layers[2](h);
}

double reverse_coefficient(const DiffusionSchedule& s, int t, bool ddpm_coeff) {
    const auto i = static_cast<std::size_t>(t - 1);
    const double one_minus_alpha = 1.0 - s.alpha[i];
    const double denom = std::sqrt(1.0 - (ddpm_coeff ? s.alpha_bar[i] : s.alpha[i]));
    return denom == 0.0 ? 0.0 : one_minus_alpha / denom;
}

Tensor reverse_step(const Tensor& z_t, int t, const Tensor& x_s2, const DiffusionSchedule& s,
                    const NoiseEstimator& eps, bool ddpm_coeff) {
    if (t < 1 || t > s.T)
        throw ConfigError("reverse_step: t = " + std::to_string(t) + " outside [1, " + std::to_string(s.T) + "]");
    const double coef = reverse_coefficient(s, t, ddpm_coeff);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha[static_cast<std::size_t>(t - 1)]);
    const Tensor e = eps(z_t, t, x_s2);
    if (e.shape() != z_t.shape()) throw ShapeError("reverse_step: noise estimate shape differs from Z_t");
    return ops::scale(ops::add(z_t, ops::scale(e, -coef)), inv_sqrt_alpha);
}

Tensor reverse_chain(const Tensor& z_T, const Tensor& x_s2, const DiffusionSchedule& s, const NoiseEstimator& eps,
                     bool ddpm_coeff, const ReverseNoise& noise) {
    Tensor z = z_T;
    for (int t = s.T; t >= 1; --t) {
        z = reverse_step(z, t, x_s2, s, eps, ddpm_coeff);
        if (noise && t > 1) {
            const Tensor extra = noise(t, z.shape());
            if (extra.defined()) z = ops::add(z, extra);
        }
    }
    return z;
}

double posterior_sigma(const DiffusionSchedule& s, int t) {
    if (t <= 1) return 0.0;
    const auto i = static_cast<std::size_t>(t - 1);
    return std::sqrt(s.beta[i] * (1.0 - s.alpha_bar[i - 1]) / (1.0 - s.alpha_bar[i]));
}

Tensor kl_loss(const Tensor& z1, const Tensor& z2) {
    if (z1.shape() != z2.shape() || z1.rank() != 2) throw ShapeError("kl_loss: EPRs must share a [B, C] shape");
    const Tensor log_p = ops::log_softmax(z1, -1);
    const Tensor log_q = ops::log_softmax(z2, -1);
    const Tensor p = ops::softmax(z1, -1);
    const Tensor terms = ops::mul(p, ops::add(log_p, ops::scale(log_q, -1.0)));
    return ops::scale(ops::sum(terms), 1.0 / static_cast<double>(z1.dim(0)));
}

Losses total_loss(const Tensor& logits, std::span<const int> labels, const Tensor& z1, const Tensor& z2) {
    Losses l;
    l.ce = cross_entropy(logits, labels);
    l.kl = kl_loss(z1, z2);
    l.total = ops::add(l.ce, l.kl);
    return l;
}

}  // namespace lrdif
