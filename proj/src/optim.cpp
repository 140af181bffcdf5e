#include "lrdif/optim.hpp"

#include <cmath>

namespace lrdif {

Adam::Adam(ParameterStore& store, std::vector<std::string> names, AdamOptions options) : opt_(options) {
    for (const auto& name : names) {
        Tensor p = store.at(name);
        slots_.push_back({p, std::vector<double>(p.numel(), 0.0), std::vector<double>(p.numel(), 0.0)});
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (auto& s : slots_) {
        auto values = s.param.mutable_values();
        const auto grad = s.param.grad_values();
        const bool has = !grad.empty();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = (has ? grad[i] : 0.0) + opt_.weight_decay * values[i];
            s.m[i] = opt_.beta1 * s.m[i] + (1.0 - opt_.beta1) * g;
            s.v[i] = opt_.beta2 * s.v[i] + (1.0 - opt_.beta2) * g * g;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            values[i] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
        }
        s.param.zero_grad();
    }
}

}  // namespace lrdif
