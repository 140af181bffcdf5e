#include "lrdif/degrade.hpp"

#include <algorithm>
#include <cmath>

#include "lrdif/errors.hpp"
#include "lrdif/rng.hpp"

namespace lrdif {

namespace {

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
    const auto m = static_cast<std::ptrdiff_t>(n);
    if (m == 1) return 0;
    const std::ptrdiff_t period = 2 * (m - 1);
    i %= period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < m ? i : period - i);
}

void blur_plane(double* plane, std::size_t n, const std::vector<double>& taps, std::vector<double>& tmp) {
    const auto r = static_cast<std::ptrdiff_t>(taps.size() / 2);
    tmp.assign(n * n, 0.0);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            double acc = 0.0;
            for (std::ptrdiff_t k = -r; k <= r; ++k)
                acc += taps[static_cast<std::size_t>(k + r)] * plane[y * n + reflect(static_cast<std::ptrdiff_t>(x) + k, n)];
            tmp[y * n + x] = acc;
        }
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            double acc = 0.0;
            for (std::ptrdiff_t k = -r; k <= r; ++k)
                acc += taps[static_cast<std::size_t>(k + r)] * tmp[reflect(static_cast<std::ptrdiff_t>(y) + k, n) * n + x];
            plane[y * n + x] = acc;
        }
}

}  // namespace

void validate(const DegradeParams& p) {
    if (!(p.brightness_gamma > 0.0 && p.brightness_gamma <= 1.0))
        throw ConfigError("brightness_gamma must lie in (0, 1]");
    if (!(p.blur_sigma >= 0.0) || !(p.noise_sigma >= 0.0)) throw ConfigError("blur_sigma and noise_sigma must be >= 0");
}

std::vector<double> gaussian_kernel(double sigma) {
    if (sigma <= 0.0) return {1.0};
    const auto r = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> taps(static_cast<std::size_t>(2 * r + 1));
    double total = 0.0;
    for (std::ptrdiff_t k = -r; k <= r; ++k) {
        const double v = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
        taps[static_cast<std::size_t>(k + r)] = v;
        total += v;
    }
    for (auto& v : taps) v /= total;
    return taps;
}

void degrade_planes(double* data, std::size_t channels, std::size_t size, const DegradeParams& params,
                    std::uint64_t sample_index) {
    const std::size_t plane = size * size;
    if (params.brightness_gamma != 1.0)
        for (std::size_t i = 0; i < channels * plane; ++i) data[i] *= params.brightness_gamma;
    if (params.blur_sigma > 0.0) {
        const auto taps = gaussian_kernel(params.blur_sigma);
        std::vector<double> tmp;
        for (std::size_t c = 0; c < channels; ++c) blur_plane(data + c * plane, size, taps, tmp);
    }
    if (params.noise_sigma > 0.0) {
        Rng rng(hash_seed(params.seed, {sample_index}));
        for (std::size_t i = 0; i < channels * plane; ++i) data[i] += params.noise_sigma * rng.normal();
    }
    for (std::size_t i = 0; i < channels * plane; ++i) data[i] = std::clamp(data[i], 0.0, 1.0);
}

Tensor degrade_image(const Tensor& image, const DegradeParams& params, std::uint64_t sample_index) {
    validate(params);
    const Shape& s = image.shape();
    if (s.size() != 3 || s[1] != s[2]) throw ShapeError("degrade_image: expected [C,S,S], got " + shape_str(s));
    for (double v : image.values())
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("degrade_image: input values must lie in [0, 1]");
    std::vector<double> out(image.values().begin(), image.values().end());
    degrade_planes(out.data(), s[0], s[1], params, sample_index);
    return Tensor::from(s, std::move(out));
}

void degrade_split(Split& split, const DegradeParams& params) {
    validate(params);
    const Shape& s = split.images.shape();
    const std::size_t per = s[1] * s[2] * s[3];
    for (double v : split.images.values())
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("degrade: split " + split.name + " has values outside [0, 1]");
    std::vector<double> out(split.images.values().begin(), split.images.values().end());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < split.size(); ++i) {
        double* p = out.data() + i * per;
        degrade_planes(p, s[1], s[2], params, split.index_offset + i);
        for (std::size_t k = 0; k < per; ++k) p[k] = static_cast<float>(p[k]);
    }
    split.udc = Tensor::from(s, std::move(out));
}

void degrade_dataset(Dataset& dataset, const DegradeParams& params) {
    degrade_split(dataset.train, params);
    degrade_split(dataset.test, params);
    dataset.degrade = params;
}

}  // namespace lrdif
