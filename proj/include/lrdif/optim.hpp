#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "lrdif/nn.hpp"

namespace lrdif {

struct AdamOptions {
    double lr = 3.5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;  // L2 term added to the gradient
};

// Adam over a fixed set of named parameters of a store.
class Adam {
public:
    Adam(ParameterStore& store, std::vector<std::string> names, AdamOptions options);

    // Applies one update from the gradients accumulated on the leaves, then clears them.
    void step();
    long steps() const { return t_; }
    const AdamOptions& options() const { return opt_; }

private:
    struct Slot {
        Tensor param;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    AdamOptions opt_;
    long t_ = 0;
};

}  // namespace lrdif
