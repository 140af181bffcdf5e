#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "lrdif/config.hpp"
#include "lrdif/nn.hpp"
#include "lrdif/rng.hpp"
#include "lrdif/tensor.hpp"

namespace lrdif::test {

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = a.size() == b.size() ? 0.0 : INFINITY;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
    return true;
}

inline void fill(ParameterStore& store, const std::string& prefix, double value) {
    for (const auto& name : store.names_with_prefix(prefix)) {
        Tensor t = store.at(name);
        for (auto& v : t.mutable_values()) v = value;
    }
}

inline void set(Tensor t, std::vector<double> values) { t.assign(values); }

inline ModelConfig tiny_model() {
    ModelConfig m;
    m.label_dim = 6;
    m.image_dim = 6;
    m.epr_dim = 6;
    m.fpen_hidden = 8;
    m.fpen_layers = 2;
    m.image_encoder_channels = {4, 4, 8};
    m.level_channels = {4, 8, 8};
    m.blocks_per_level = 1;
    m.window = 2;
    m.heads = 2;
    m.mlp_ratio = 2;
    m.head_dim = 8;
    m.head_heads = 2;
    m.denoiser_hidden = 16;
    m.time_dim = 4;
    return m;
}

inline Config tiny_config() {
    Config c;
    c.data.num_classes = 3;
    c.data.image_size = 16;
    c.data.train_count = 24;
    c.data.test_count = 12;
    c.model = tiny_model();
    c.schedule.T = 2;
    c.run.epochs = 2;
    c.run.batch_size = 8;
    c.run.lr = 2e-3;
    return c;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("lrdif_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace lrdif::test
