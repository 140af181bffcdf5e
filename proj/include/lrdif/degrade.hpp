#pragma once

// Parametric under-display-camera degradation: attenuate, blur, add noise, clamp.

#include <cstdint>
#include <vector>

#include "lrdif/config.hpp"
#include "lrdif/dataset.hpp"
#include "lrdif/tensor.hpp"

namespace lrdif {

void validate(const DegradeParams& p);

// Normalized 1-D Gaussian taps, radius ceil(3 sigma); {1} when sigma == 0.
std::vector<double> gaussian_kernel(double sigma);

// image [3,S,S] in [0,1]; noise drawn from hash(params.seed, sample_index).
Tensor degrade_image(const Tensor& image, const DegradeParams& params, std::uint64_t sample_index);

// In-place variant over `channels` planes of side `size`.
void degrade_planes(double* data, std::size_t channels, std::size_t size, const DegradeParams& params,
                    std::uint64_t sample_index);

// Adds the UDC counterpart of every sample; results are rounded to f32 like the clean images.
void degrade_split(Split& split, const DegradeParams& params);
void degrade_dataset(Dataset& dataset, const DegradeParams& params);

}  // namespace lrdif
