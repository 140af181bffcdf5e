#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lrdif/tensor.hpp"

namespace lrdif {

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar function of one tensor. eps must lie in [1e-6, 1e-3]. Throws if
// two evaluations at `point` disagree (non-deterministic function).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double eps);

struct ParamCheck {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t coords = 0;
};

// Same measure over named leaves that a closure-captured loss depends on.
// The leaves are perturbed in place and restored. When `max_coords` > 0 each
// parameter is probed at an evenly strided subset of that many coordinates.
std::vector<ParamCheck> grad_check_params(const std::function<Tensor()>& loss,
                                          std::span<const std::pair<std::string, Tensor>> params, double eps,
                                          std::size_t max_coords = 0);

double max_error(std::span<const ParamCheck> checks);

}  // namespace lrdif
