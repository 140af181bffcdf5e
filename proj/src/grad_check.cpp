#include "lrdif/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lrdif {

namespace {

void check_eps(double eps) {
    if (!(eps >= 1e-6 && eps <= 1e-3)) throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-3]");
}

double eval_no_grad(const std::function<Tensor()>& loss) {
    NoGradGuard guard;
    return loss().item();
}

double probe(Tensor& leaf, std::size_t i, double eps, const std::function<Tensor()>& loss, double analytic) {
    auto vals = leaf.mutable_values();
    const double saved = vals[i];
    vals[i] = saved + eps;
    const double up = eval_no_grad(loss);
    vals[i] = saved - eps;
    const double down = eval_no_grad(loss);
    vals[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double eps) {
    check_eps(eps);
    Tensor x = Tensor::from(point.shape(), std::vector<double>(point.values().begin(), point.values().end()), true);
    std::function<Tensor()> loss = [&] { return f(x); };

    const double first = eval_no_grad(loss);
    const double second = eval_no_grad(loss);
    if (first != second) throw std::runtime_error("grad_check: function is not deterministic");

    Tensor out = loss();
    backward(out);
    const Tensor analytic = x.grad();
    x.zero_grad();
    double worst = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) worst = std::max(worst, probe(x, i, eps, loss, analytic.at(i)));
    return worst;
}

std::vector<ParamCheck> grad_check_params(const std::function<Tensor()>& loss,
                                          std::span<const std::pair<std::string, Tensor>> params, double eps,
                                          std::size_t max_coords) {
    check_eps(eps);
    const double first = eval_no_grad(loss);
    const double second = eval_no_grad(loss);
    if (first != second) throw std::runtime_error("grad_check: function is not deterministic");

    for (const auto& [_, t] : params) Tensor(t).zero_grad();
    backward(loss());
    std::vector<ParamCheck> out;
    for (const auto& [name, handle] : params) {
        Tensor leaf = handle;
        const Tensor analytic = leaf.grad();
        leaf.zero_grad();
        const std::size_t n = leaf.numel();
        const std::size_t count = max_coords == 0 ? n : std::min(n, max_coords);
        ParamCheck pc{name, 0.0, count};
        for (std::size_t j = 0; j < count; ++j) {
            const std::size_t i = count == n ? j : (j * n) / count;
            pc.max_rel_error = std::max(pc.max_rel_error, probe(leaf, i, eps, loss, analytic.at(i)));
        }
        out.push_back(pc);
    }
    return out;
}

double max_error(std::span<const ParamCheck> checks) {
    double worst = 0.0;
    for (const auto& c : checks) worst = std::max(worst, c.max_rel_error);
    return worst;
}

}  // namespace lrdif
