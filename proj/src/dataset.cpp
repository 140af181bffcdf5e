#include "lrdif/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "lrdif/errors.hpp"
#include "lrdif/io.hpp"
#include "lrdif/rng.hpp"

namespace lrdif {

namespace {

namespace fs = std::filesystem;

struct ClassShape {
    double mouth_curve, mouth_open, eye_open, brow_tilt;
};

// neutral, happy, sad, surprise, fear, disgust, angry, contempt
constexpr std::array<ClassShape, 8> kClasses{{
    {0.0, 0.0, 0.55, 0.0},
    {1.0, 0.25, 0.35, 0.1},
    {-0.9, 0.0, 0.4, 0.7},
    {0.0, 1.0, 1.0, -0.2},
    {-0.4, 0.6, 0.9, 0.6},
    {-0.5, 0.15, 0.2, -0.5},
    {-0.3, 0.0, 0.6, -0.9},
    {0.5, 0.0, 0.45, 0.35},
}};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double coverage(double distance, double half_width) { return clamp01(half_width + 0.5 - distance); }

double mouth_line(double dx, double half_w, double depth) {
    const double u = dx / half_w;
    return -depth * (u * u - 1.0 / 3.0);
}

}  // namespace

GlyphParams glyph_params(const ToySpec& spec, std::uint64_t index) {
    if (spec.image_size < 16) throw ConfigError("image_size < 16 cannot resolve the face glyphs");
    if (spec.num_classes < 2 || spec.num_classes > static_cast<int>(kClasses.size()))
        throw ConfigError("num_classes must lie in [2, 8]");
    Rng rng(hash_seed(spec.seed, {index}));
    const double j = spec.jitter;
    const double s = spec.image_size;
    GlyphParams g;
    g.label = static_cast<int>(index % static_cast<std::uint64_t>(spec.num_classes));
    const ClassShape& c = kClasses[static_cast<std::size_t>(g.label)];
    auto noise = [&](double amp) { return j * amp * (2.0 * rng.uniform() - 1.0); };
    g.cx = 0.5 * s + noise(0.06 * s);
    g.cy = 0.5 * s + noise(0.06 * s);
    g.scale = 1.0 + noise(0.12);
    g.mouth_curve = c.mouth_curve + noise(0.35);
    g.mouth_open = std::max(0.0, c.mouth_open + noise(0.3));
    g.eye_open = std::clamp(c.eye_open + noise(0.25), 0.1, 1.2);
    g.brow_tilt = c.brow_tilt + noise(0.35);
    for (std::size_t ch = 0; ch < 3; ++ch) {
        g.background[ch] = 0.25 + noise(0.15);
        g.skin[ch] = 0.8 + noise(0.15);
        g.ink[ch] = 0.12 + noise(0.08);
    }
    return g;
}

std::array<Point, kNumKeypoints> keypoints(const GlyphParams& g, int image_size) {
    const double u = image_size * g.scale;
    return {{
        {g.cx - 0.16 * u, g.cy - 0.08 * u},
        {g.cx + 0.16 * u, g.cy - 0.08 * u},
        {g.cx - 0.16 * u, g.cy - 0.22 * u},
        {g.cx + 0.16 * u, g.cy - 0.22 * u},
        {g.cx, g.cy + 0.2 * u},
    }};
}

void render_glyph(const GlyphParams& g, int image_size, double* image, double* heatmap) {
    const auto n = static_cast<std::size_t>(image_size);
    const double u = image_size * g.scale;
    const auto kp = keypoints(g, image_size);
    const double face_rx = 0.38 * u, face_ry = 0.45 * u;
    const double eye_rx = 0.07 * u, eye_ry = 0.07 * u * g.eye_open;
    const double brow_half = 0.08 * u, brow_w = 0.025 * u;
    const double mouth_half = 0.15 * u, mouth_depth = 0.09 * u * g.mouth_curve;
    const double mouth_gap = 0.1 * u * g.mouth_open, lip_w = 0.025 * u;
    const double sigma = image_size / 16.0;

    for (std::size_t py = 0; py < n; ++py)
        for (std::size_t px = 0; px < n; ++px) {
            const double x = px + 0.5, y = py + 0.5;

            // Soft-edged face ellipse over the background.
            const double ex = (x - g.cx) / face_rx, ey = (y - g.cy) / face_ry;
            const double face_edge = (std::sqrt(ex * ex + ey * ey) - 1.0) * std::min(face_rx, face_ry);
            const double face = clamp01(0.5 - face_edge);

            double ink = 0.0;
            for (std::size_t e = 0; e < 2; ++e) {
                const double dx = (x - kp[e].x) / eye_rx, dy = (y - kp[e].y) / eye_ry;
                const double r = std::sqrt(dx * dx + dy * dy);
                ink = std::max(ink, clamp01((1.0 - r) * std::min(eye_rx, eye_ry) + 0.5));
            }
            for (std::size_t b = 2; b < 4; ++b) {
                // Brows tilt toward (positive) or away from the face midline.
                const double side = b == 2 ? 1.0 : -1.0;
                const double angle = 0.45 * g.brow_tilt * side;
                const double dirx = std::cos(angle), diry = std::sin(angle);
                const double rx = x - kp[b].x, ry = y - kp[b].y;
                const double along = std::clamp(rx * dirx + ry * diry, -brow_half, brow_half);
                const double qx = rx - along * dirx, qy = ry - along * diry;
                ink = std::max(ink, coverage(std::sqrt(qx * qx + qy * qy), brow_w));
            }
            {
                const double dx = x - kp[kMouthKeypoint].x;
                if (std::abs(dx) <= mouth_half + 0.5) {
                    const double edge = clamp01(mouth_half + 0.5 - std::abs(dx));
                    const double taper = 1.0 - (dx / mouth_half) * (dx / mouth_half);
                    const double upper = kp[kMouthKeypoint].y + mouth_line(dx, mouth_half, mouth_depth) -
                                         0.5 * mouth_gap * std::max(0.0, taper);
                    const double lower = upper + mouth_gap * std::max(0.0, taper);
                    double d = 0.0;
                    if (y < upper)
                        d = upper - y;
                    else if (y > lower)
                        d = y - lower;
                    ink = std::max(ink, edge * coverage(d, lip_w));
                }
            }
            ink *= face;

            for (std::size_t ch = 0; ch < 3; ++ch) {
                double v = g.background[ch] * (1.0 - face) + g.skin[ch] * face;
                v = v * (1.0 - ink) + g.ink[ch] * ink;
                image[(ch * n + py) * n + px] = static_cast<float>(clamp01(v));
            }
            double heat = 0.0;
            for (const Point& k : kp) {
                const double ddx = x - k.x, ddy = y - k.y;
                heat = std::max(heat, std::exp(-(ddx * ddx + ddy * ddy) / (2.0 * sigma * sigma)));
            }
            heatmap[py * n + px] = static_cast<float>(heat);
        }
}

Split generate_split(const ToySpec& spec, const std::string& name, std::uint64_t index_offset, std::size_t count) {
    if (count == 0) throw ConfigError("split " + name + " is empty");
    glyph_params(spec, index_offset);  // validates the spec outside the parallel region
    const auto s = static_cast<std::size_t>(spec.image_size);
    std::vector<double> images(count * 3 * s * s), heat(count * s * s);
    std::vector<int> labels(count);
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < count; ++i) {
        const GlyphParams g = glyph_params(spec, index_offset + i);
        labels[i] = g.label;
        render_glyph(g, spec.image_size, images.data() + i * 3 * s * s, heat.data() + i * s * s);
    }
    Split out;
    out.name = name;
    out.index_offset = index_offset;
    out.images = Tensor::from({count, 3, s, s}, std::move(images));
    out.landmarks = Tensor::from({count, 1, s, s}, std::move(heat));
    out.labels = std::move(labels);
    return out;
}

Dataset generate(const ToySpec& spec) {
    if (spec.train_count <= 0 || spec.test_count <= 0) throw ConfigError("dataset counts must be positive");
    Dataset d;
    d.spec = spec;
    d.train = generate_split(spec, "train", 0, static_cast<std::size_t>(spec.train_count));
    d.test = generate_split(spec, "test", static_cast<std::uint64_t>(spec.train_count),
                            static_cast<std::size_t>(spec.test_count));
    return d;
}

void save_split(const Split& s, const ToySpec& spec, const std::optional<DegradeParams>& degrade,
                const fs::path& dir) {
    fs::create_directories(dir);
    std::vector<double> label_values(s.labels.begin(), s.labels.end());
    const Tensor labels = Tensor::from({s.labels.size()}, std::move(label_values));
    json files = json::object();
    auto put = [&](const std::string& field, const Tensor& t) {
        const std::string file = field + ".tnsr";
        const auto bytes = encode_tnsr(t, DType::f32);
        write_bytes_atomic(dir / file, bytes);
        files[field] = {{"file", file}, {"checksum", checksum_hex(bytes)}, {"shape", t.shape()}};
    };
    put("images", s.images);
    put("landmarks", s.landmarks);
    put("labels", labels);
    if (s.udc) put("udc", *s.udc);
    json manifest{{"format_version", 1},
                  {"split", s.name},
                  {"count", s.size()},
                  {"index_offset", s.index_offset},
                  {"spec", spec},
                  {"degrade", degrade ? json(*degrade) : json(nullptr)},
                  {"files", files}};
    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Split load_split(const fs::path& dir, ToySpec* spec, std::optional<DegradeParams>* degrade) {
    json m;
    try {
        m = json::parse(read_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw DataError((dir / "manifest.json").string() + ": " + e.what());
    }
    auto read_field = [&](const std::string& field) -> std::optional<Tensor> {
        if (!m.at("files").contains(field)) return std::nullopt;
        const json& f = m["files"][field];
        const fs::path path = dir / f.at("file").get<std::string>();
        if (!fs::exists(path)) throw DataError("missing tensor file " + path.string());
        const auto bytes = read_bytes(path);
        if (checksum_hex(bytes) != f.at("checksum").get<std::string>())
            throw DataError("checksum mismatch for " + path.string());
        return decode_tnsr(bytes, path.string());
    };
    Split s;
    try {
        s.name = m.at("split").get<std::string>();
        s.index_offset = m.at("index_offset").get<std::uint64_t>();
        auto images = read_field("images");
        auto landmarks = read_field("landmarks");
        auto labels = read_field("labels");
        if (!images || !landmarks || !labels) throw DataError(dir.string() + ": manifest lacks a required field");
        s.images = *images;
        s.landmarks = *landmarks;
        for (double v : labels->values()) s.labels.push_back(static_cast<int>(v));
        s.udc = read_field("udc");
        if (spec) *spec = m.at("spec").get<ToySpec>();
        if (degrade) {
            if (m.at("degrade").is_null())
                degrade->reset();
            else
                *degrade = m["degrade"].get<DegradeParams>();
        }
    } catch (const json::exception& e) {
        throw DataError(dir.string() + ": malformed split manifest: " + e.what());
    } catch (const ConfigError& e) {
        throw DataError(dir.string() + ": " + e.what());
    }
    const std::size_t n = s.labels.size();
    if (s.images.rank() != 4 || s.images.dim(0) != n || s.landmarks.dim(0) != n || (s.udc && s.udc->dim(0) != n))
        throw DataError(dir.string() + ": tensor extents disagree with the label count");
    return s;
}

void save_dataset(const Dataset& d, const fs::path& dir) {
    save_split(d.train, d.spec, d.degrade, dir / "train");
    save_split(d.test, d.spec, d.degrade, dir / "test");
    json manifest{{"format_version", 1},
                  {"spec", d.spec},
                  {"seed", d.spec.seed},
                  {"num_classes", d.spec.num_classes},
                  {"degrade", d.degrade ? json(*d.degrade) : json(nullptr)},
                  {"splits",
                   {{"train", {{"dir", "train"}, {"count", d.train.size()},
                               {"checksum", file_checksum(dir / "train" / "manifest.json")}}},
                    {"test", {{"dir", "test"}, {"count", d.test.size()},
                              {"checksum", file_checksum(dir / "test" / "manifest.json")}}}}}};
    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
    json m;
    try {
        m = json::parse(read_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw DataError((dir / "manifest.json").string() + ": " + e.what());
    }
    Dataset d;
    try {
        d.spec = m.at("spec").get<ToySpec>();
        for (const char* name : {"train", "test"}) {
            const json& entry = m.at("splits").at(name);
            const fs::path sub = dir / entry.at("dir").get<std::string>();
            if (file_checksum(sub / "manifest.json") != entry.at("checksum").get<std::string>())
                throw DataError("checksum mismatch for " + (sub / "manifest.json").string());
        }
    } catch (const json::exception& e) {
        throw DataError(dir.string() + ": malformed dataset manifest: " + e.what());
    } catch (const ConfigError& e) {
        throw DataError(dir.string() + ": " + e.what());
    }
    d.train = load_split(dir / "train", nullptr, &d.degrade);
    d.test = load_split(dir / "test");
    return d;
}

}  // namespace lrdif
