#include "lrdif/model.hpp"

#include <cmath>

#include "lrdif/errors.hpp"
#include "lrdif/io.hpp"

namespace lrdif {

namespace fs = std::filesystem;

namespace {

constexpr int kCheckpointVersion = 1;
constexpr std::uint64_t kTrainNoiseStream = 0x5a17;
constexpr std::uint64_t kReverseNoiseStream = 0x5a18;

json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string file_name_for(const std::string& param) { return param + ".tnsr"; }

}  // namespace

std::unique_ptr<Model> Model::create(const Config& config, int stage) {
    if (stage != 1 && stage != 2) throw ConfigError("model stage must be 1 or 2");
    validate(config);
    const auto& mc = config.model;
    const auto seed = config.run.seed;
    const auto s = static_cast<std::size_t>(config.data.image_size);
    const auto c = static_cast<std::size_t>(mc.epr_dim);
    const auto classes = static_cast<std::size_t>(config.data.num_classes);
    auto m = std::make_unique<Model>();
    m->config = config;
    m->stage = stage;
    auto& st = m->store;
    m->label = LabelEncoder::create(st, "enc.label", classes, static_cast<std::size_t>(mc.label_dim), seed);
    m->image = ImageEncoder::create(st, "enc.image", s, mc.image_encoder_channels,
                                    static_cast<std::size_t>(mc.image_dim), seed);
    m->landmarks = LandmarkEncoder::create(st, "enc.flm", s, mc.level_channels, seed);
    m->s1 = Fpen::create(st, "fpen.s1", static_cast<std::size_t>(mc.label_dim + mc.image_dim),
                         static_cast<std::size_t>(mc.fpen_hidden), c, mc.fpen_layers, seed);
    m->udc = UdcFormer::create(st, mc, s, classes, seed);
    if (stage == 2) {
        m->s2 = Fpen::create(st, "fpen.s2", static_cast<std::size_t>(mc.image_dim),
                             static_cast<std::size_t>(mc.fpen_hidden), c, mc.fpen_layers, seed);
        if (config.run.use_diffusion) {
            m->schedule = schedule_from_config(config.schedule);
            m->denoiser = Denoiser::create(st, "diff.denoiser", c, static_cast<std::size_t>(mc.time_dim),
                                           static_cast<std::size_t>(mc.denoiser_hidden), seed);
        }
    }
    return m;
}

NoiseEstimator Model::noise_estimator() const {
    if (!denoiser) throw ConfigError("model has no denoiser (diffusion disabled)");
    const Denoiser* d = &*denoiser;
    return [d](const Tensor& z_t, int t, const Tensor& x_s2) { return (*d)(z_t, t, x_s2); };
}

Batch make_batch(const Split& split, std::span<const std::size_t> rows) {
    if (!split.udc) throw DataError("split " + split.name + " has no UDC images; run degrade first");
    const Shape& is = split.udc->shape();
    const Shape& ls = split.landmarks.shape();
    const std::size_t ip = is[1] * is[2] * is[3], lp = ls[1] * ls[2] * ls[3];
    std::vector<double> img(rows.size() * ip), lm(rows.size() * lp);
    Batch b;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t r = rows[i];
        std::copy_n(split.udc->values().begin() + static_cast<std::ptrdiff_t>(r * ip), ip, img.begin() + static_cast<std::ptrdiff_t>(i * ip));
        std::copy_n(split.landmarks.values().begin() + static_cast<std::ptrdiff_t>(r * lp), lp,
                    lm.begin() + static_cast<std::ptrdiff_t>(i * lp));
        b.labels.push_back(split.labels[r]);
        b.keys.push_back(split.index_offset + r);
    }
    b.udc = Tensor::from({rows.size(), is[1], is[2], is[3]}, std::move(img));
    b.landmarks = Tensor::from({rows.size(), ls[1], ls[2], ls[3]}, std::move(lm));
    return b;
}

ForwardOut stage1_forward(const Model& m, const Batch& b) {
    ForwardOut out;
    const Tensor img = m.image(b.udc);
    out.z_s1 = fpen_s1(m.s1, m.label(b.labels), img);
    out.z = out.z_s1;
    const auto flm = m.landmarks(b.landmarks);
    const HeadOutput h = m.udc(b.udc, out.z, flm);
    out.logits = h.logits;
    out.features = h.features;
    out.ce = cross_entropy(out.logits, b.labels);
    out.loss = out.ce;
    return out;
}

ForwardOut stage2_train_forward(const Model& m, const Batch& b, int epoch) {
    if (!m.s2) throw ConfigError("stage-2 forward on a stage-1 model");
    const RunConfig& run = m.config.run;
    const std::size_t c = m.epr_dim();
    ForwardOut out;
    const Tensor img = m.image(b.udc);
    {
        NoGradGuard frozen;
        out.z_s1 = fpen_s1(m.s1, m.label(b.labels), img);
    }
    const Tensor x_s2 = fpen_s2(*m.s2, img);
    if (!m.denoiser) {
        out.z = x_s2;
    } else {
        const DiffusionSchedule& s = *m.schedule;
        const auto ep = static_cast<std::uint64_t>(epoch);
        Tensor z_T;
        ReverseNoise extra;
        if (run.noise_semantics == "forward") {
            z_T = run.insert_noise ? forward_diffuse(out.z_s1, s, normal_rows(run.seed, {kTrainNoiseStream, ep}, b.keys, c))
                                   : ops::scale(out.z_s1, std::sqrt(s.alpha_bar.back()));
        } else {
            z_T = forward_diffuse(out.z_s1, s, normal_rows(run.seed, {kTrainNoiseStream, ep}, b.keys, c));
            if (run.insert_noise)
                extra = [&](int t, const Shape&) {
                    const auto step = static_cast<std::uint64_t>(t);
                    return ops::scale(normal_rows(run.seed, {kReverseNoiseStream, ep, step}, b.keys, c),
                                      posterior_sigma(s, t));
                };
        }
        out.z = reverse_chain(z_T, x_s2, s, m.noise_estimator(), m.config.schedule.ddpm_coeff, extra);
    }
    const HeadOutput h = m.udc(b.udc, out.z, m.landmarks(b.landmarks));
    out.logits = h.logits;
    out.features = h.features;
    if (run.loss == LossKind::total) {
        const Losses l = total_loss(out.logits, b.labels, out.z_s1, out.z);
        out.ce = l.ce;
        out.kl = l.kl;
        out.loss = l.total;
    } else {
        out.ce = cross_entropy(out.logits, b.labels);
        out.loss = out.ce;
    }
    return out;
}

ForwardOut stage2_infer(const Model& m, const Tensor& udc, const Tensor& landmarks,
                        std::span<const std::uint64_t> keys) {
    if (!m.s2) throw ConfigError("label-free inference needs a stage-2 model");
    ForwardOut out;
    const Tensor x_s2 = fpen_s2(*m.s2, m.image(udc));
    if (!m.denoiser) {
        out.z = x_s2;
    } else {
        const Tensor z_T = normal_rows(m.config.run.eval_seed, {}, keys, m.epr_dim());
        out.z = reverse_chain(z_T, x_s2, *m.schedule, m.noise_estimator(), m.config.schedule.ddpm_coeff);
    }
    const HeadOutput h = m.udc(udc, out.z, m.landmarks(landmarks));
    out.logits = h.logits;
    out.features = h.features;
    return out;
}

void round_to_storage(ParameterStore& store) {
    for (const auto& [name, t] : store.all()) {
        Tensor p = t;
        for (auto& v : p.mutable_values()) v = static_cast<float>(v);
    }
}

void save_checkpoint(const Model& m, const fs::path& dir) {
    fs::create_directories(dir);
    json params = json::array();
    for (const auto& [name, t] : m.store.all()) {
        const auto bytes = encode_tnsr(t, DType::f32);
        const std::string file = file_name_for(name);
        write_bytes_atomic(dir / file, bytes);
        params.push_back({{"name", name}, {"shape", t.shape()}, {"file", file}, {"checksum", checksum_hex(bytes)}});
    }
    const std::string config_text = json(m.config).dump(2) + "\n";
    write_text_atomic(dir / "config.json", config_text);
    json manifest{{"format_version", kCheckpointVersion},
                  {"config_hash", config_hash(m.config)},
                  {"stage", m.stage},
                  {"C", m.config.model.epr_dim},
                  {"T", m.denoiser ? json(m.schedule->T) : json(nullptr)},
                  {"use_diffusion", m.denoiser.has_value()},
                  {"params", params}};
    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

namespace {

void copy_params(Model& m, const fs::path& dir, const json& manifest, bool require_all) {
    std::size_t loaded = 0;
    for (const json& p : manifest.at("params")) {
        const std::string name = p.at("name").get<std::string>();
        if (!m.store.contains(name)) {
            if (require_all) throw DataError("checkpoint parameter " + name + " is unknown to the model");
            continue;
        }
        const fs::path path = dir / p.at("file").get<std::string>();
        if (!fs::exists(path)) throw DataError("missing checkpoint tensor " + path.string());
        const auto bytes = read_bytes(path);
        if (checksum_hex(bytes) != p.at("checksum").get<std::string>())
            throw DataError("checksum mismatch for " + path.string());
        const Tensor t = decode_tnsr(bytes, path.string());
        Tensor& dst = m.store.at(name);
        if (t.shape() != dst.shape())
            throw ConfigError("checkpoint parameter " + name + " has shape " + shape_str(t.shape()) + ", model expects " +
                              shape_str(dst.shape()));
        dst.assign(t.values());
        ++loaded;
    }
    if (require_all && loaded != m.store.all().size())
        throw DataError(dir.string() + ": checkpoint lists " + std::to_string(loaded) + " of " +
                        std::to_string(m.store.all().size()) + " model parameters");
}

}  // namespace

std::unique_ptr<Model> load_checkpoint(const fs::path& dir) {
    const json manifest = read_json(dir / "manifest.json");
    Config cfg;
    try {
        if (manifest.at("format_version").get<int>() != kCheckpointVersion)
            throw DataError(dir.string() + ": unsupported checkpoint format version");
        cfg = config_from_json(read_json(dir / "config.json"));
        if (config_hash(cfg) != manifest.at("config_hash").get<std::string>())
            throw DataError(dir.string() + ": config.json does not match the manifest hash");
        auto m = Model::create(cfg, manifest.at("stage").get<int>());
        if (manifest.at("C").get<int>() != cfg.model.epr_dim)
            throw DataError(dir.string() + ": manifest C disagrees with config");
        copy_params(*m, dir, manifest, true);
        return m;
    } catch (const json::exception& e) {
        throw DataError(dir.string() + ": malformed checkpoint manifest: " + e.what());
    }
}

void load_parameters(Model& m, const fs::path& dir) {
    const json manifest = read_json(dir / "manifest.json");
    try {
        const Config src = config_from_json(read_json(dir / "config.json"));
        if (json(src.model) != json(m.config.model) || src.data.num_classes != m.config.data.num_classes ||
            src.data.image_size != m.config.data.image_size)
            throw ConfigError("checkpoint " + dir.string() + " was trained with a different model configuration");
        if (manifest.at("C").get<int>() != m.config.model.epr_dim)
            throw ConfigError("checkpoint C differs from the configured epr_dim");
        copy_params(m, dir, manifest, false);
    } catch (const json::exception& e) {
        throw DataError(dir.string() + ": malformed checkpoint manifest: " + e.what());
    }
}

std::string checkpoint_digest(const fs::path& dir) { return file_checksum(dir / "manifest.json"); }

}  // namespace lrdif
