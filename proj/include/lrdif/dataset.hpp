#pragma once

// Procedural toy facial-expression dataset.
//
// Each class is a parametric face glyph (mouth curvature and opening, eye
// opening, brow tilt); every sample perturbs the glyph geometry and colors
// from a stream keyed by hash(seed, index). Landmarks are Gaussian bumps at
// the glyph's own eye, brow and mouth centers.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lrdif/config.hpp"
#include "lrdif/tensor.hpp"

namespace lrdif {

struct Point {
    double x = 0.0, y = 0.0;  // pixel units, origin at the top-left image corner
};

struct GlyphParams {
    int label = 0;
    double cx = 0.0, cy = 0.0, scale = 1.0;
    double mouth_curve = 0.0, mouth_open = 0.0, eye_open = 0.5, brow_tilt = 0.0;
    std::array<double, 3> background{}, skin{}, ink{};
};

// Keypoint order: left eye, right eye, left brow, right brow, mouth.
inline constexpr std::size_t kNumKeypoints = 5;
inline constexpr std::size_t kMouthKeypoint = 4;

GlyphParams glyph_params(const ToySpec& spec, std::uint64_t index);
std::array<Point, kNumKeypoints> keypoints(const GlyphParams& g, int image_size);

// Renders one sample: image [3,S,S] and heatmap [1,S,S], values rounded to f32.
void render_glyph(const GlyphParams& g, int image_size, double* image, double* heatmap);

struct Split {
    std::string name;
    std::uint64_t index_offset = 0;  // global index of the first sample
    Tensor images;                   // [N,3,S,S] clean
    Tensor landmarks;                // [N,1,S,S]
    std::vector<int> labels;
    std::optional<Tensor> udc;  // [N,3,S,S] degraded, once paired

    std::size_t size() const { return labels.size(); }
};

struct Dataset {
    ToySpec spec;
    std::optional<DegradeParams> degrade;
    Split train, test;
};

Dataset generate(const ToySpec& spec);
Split generate_split(const ToySpec& spec, const std::string& name, std::uint64_t index_offset, std::size_t count);

// Layout: <dir>/manifest.json, <dir>/{train,test}/{manifest.json, *.tnsr}.
void save_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

void save_split(const Split& s, const ToySpec& spec, const std::optional<DegradeParams>& degrade,
                const std::filesystem::path& dir);
// Verifies every tensor file against the split manifest checksums.
Split load_split(const std::filesystem::path& dir, ToySpec* spec = nullptr,
                 std::optional<DegradeParams>* degrade = nullptr);

}  // namespace lrdif
