#pragma once

// Central-difference checks of every model block and loss at f64.

#include <cstdint>
#include <string>
#include <vector>

namespace lrdif {

struct BlockCheck {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t coords = 0;
    double seconds = 0.0;
};

// Each block runs on small random inputs and randomized parameters; the
// scalar probed is sum(output * R) for a fixed random R. `max_coords` bounds
// the coordinates probed per tensor (0 probes all).
std::vector<BlockCheck> run_grad_suite(std::uint64_t seed, double eps = 1e-6, std::size_t max_coords = 8);

}  // namespace lrdif
