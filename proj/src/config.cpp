#include "lrdif/config.hpp"

#include <fstream>
#include <set>

#include "lrdif/errors.hpp"
#include "lrdif/io.hpp"

namespace lrdif {

namespace {

// Reads `key` into `out` when present; records it as known.
struct Reader {
    const json& j;
    const char* section;
    std::set<std::string> known;

    template <typename T>
    void operator()(const char* key, T& out) {
        known.insert(key);
        if (!j.contains(key)) return;
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string(section) + "." + key + ": " + e.what());
        }
    }

    void finish() const {
        if (!j.is_object()) throw ConfigError(std::string(section) + ": expected a JSON object");
        for (const auto& [k, _] : j.items())
            if (!known.count(k)) throw ConfigError(std::string("unknown config key ") + section + "." + k);
    }
};

}  // namespace

void to_json(json& j, const ToySpec& v) {
    j = json{{"num_classes", v.num_classes}, {"image_size", v.image_size}, {"channels", v.channels},
             {"train_count", v.train_count}, {"test_count", v.test_count}, {"seed", v.seed},
             {"jitter", v.jitter}};
}
void from_json(const json& j, ToySpec& v) {
    Reader r{j, "data", {}};
    r("num_classes", v.num_classes);
    r("image_size", v.image_size);
    r("channels", v.channels);
    r("train_count", v.train_count);
    r("test_count", v.test_count);
    r("seed", v.seed);
    r("jitter", v.jitter);
    r.finish();
}

void to_json(json& j, const DegradeParams& v) {
    j = json{{"brightness_gamma", v.brightness_gamma}, {"blur_sigma", v.blur_sigma},
             {"noise_sigma", v.noise_sigma}, {"seed", v.seed}};
}
void from_json(const json& j, DegradeParams& v) {
    Reader r{j, "degrade", {}};
    r("brightness_gamma", v.brightness_gamma);
    r("blur_sigma", v.blur_sigma);
    r("noise_sigma", v.noise_sigma);
    r("seed", v.seed);
    r.finish();
}

void to_json(json& j, const ModelConfig& v) {
    j = json{{"label_dim", v.label_dim},
             {"image_dim", v.image_dim},
             {"epr_dim", v.epr_dim},
             {"fpen_hidden", v.fpen_hidden},
             {"fpen_layers", v.fpen_layers},
             {"image_encoder_channels", v.image_encoder_channels},
             {"level_channels", v.level_channels},
             {"blocks_per_level", v.blocks_per_level},
             {"window", v.window},
             {"heads", v.heads},
             {"mlp_ratio", v.mlp_ratio},
             {"head_dim", v.head_dim},
             {"head_heads", v.head_heads},
             {"per_head_temperature", v.per_head_temperature},
             {"denoiser_hidden", v.denoiser_hidden},
             {"time_dim", v.time_dim}};
}
void from_json(const json& j, ModelConfig& v) {
    Reader r{j, "model", {}};
    r("label_dim", v.label_dim);
    r("image_dim", v.image_dim);
    r("epr_dim", v.epr_dim);
    r("fpen_hidden", v.fpen_hidden);
    r("fpen_layers", v.fpen_layers);
    r("image_encoder_channels", v.image_encoder_channels);
    r("level_channels", v.level_channels);
    r("blocks_per_level", v.blocks_per_level);
    r("window", v.window);
    r("heads", v.heads);
    r("mlp_ratio", v.mlp_ratio);
    r("head_dim", v.head_dim);
    r("head_heads", v.head_heads);
    r("per_head_temperature", v.per_head_temperature);
    r("denoiser_hidden", v.denoiser_hidden);
    r("time_dim", v.time_dim);
    r.finish();
}

void to_json(json& j, const ScheduleConfig& v) {
    j = json{{"T", v.T}, {"beta_start", v.beta_start}, {"beta_end", v.beta_end}, {"ddpm_coeff", v.ddpm_coeff}};
}
void from_json(const json& j, ScheduleConfig& v) {
    Reader r{j, "schedule", {}};
    r("T", v.T);
    r("beta_start", v.beta_start);
    r("beta_end", v.beta_end);
    r("ddpm_coeff", v.ddpm_coeff);
    r.finish();
}

std::string loss_name(LossKind k) { return k == LossKind::ce ? "ce" : "total"; }

void to_json(json& j, const RunConfig& v) {
    j = json{{"stage", v.stage},
             {"seed", v.seed},
             {"epochs", v.epochs},
             {"stage2_epochs", v.stage2_epochs},
             {"batch_size", v.batch_size},
             {"lr", v.lr},
             {"weight_decay", v.weight_decay},
             {"beta1", v.beta1},
             {"beta2", v.beta2},
             {"use_diffusion", v.use_diffusion},
             {"loss", loss_name(v.loss)},
             {"insert_noise", v.insert_noise},
             {"noise_semantics", v.noise_semantics},
             {"eval_seed", v.eval_seed},
             {"train_encoders_s2", v.train_encoders_s2},
             {"eval_each_epoch", v.eval_each_epoch}};
}
void from_json(const json& j, RunConfig& v) {
    Reader r{j, "run", {}};
    r("stage", v.stage);
    r("seed", v.seed);
    r("epochs", v.epochs);
    r("stage2_epochs", v.stage2_epochs);
    r("batch_size", v.batch_size);
    r("lr", v.lr);
    r("weight_decay", v.weight_decay);
    r("beta1", v.beta1);
    r("beta2", v.beta2);
    r("use_diffusion", v.use_diffusion);
    std::string loss = loss_name(v.loss);
    r("loss", loss);
    if (loss == "ce")
        v.loss = LossKind::ce;
    else if (loss == "total")
        v.loss = LossKind::total;
    else
        throw ConfigError("run.loss must be \"ce\" or \"total\", got \"" + loss + "\"");
    r("insert_noise", v.insert_noise);
    r("noise_semantics", v.noise_semantics);
    r("eval_seed", v.eval_seed);
    r("train_encoders_s2", v.train_encoders_s2);
    r("eval_each_epoch", v.eval_each_epoch);
    r.finish();
}

void to_json(json& j, const Config& v) {
    j = json{{"data", v.data}, {"degrade", v.degrade}, {"model", v.model}, {"schedule", v.schedule}, {"run", v.run}};
}
void from_json(const json& j, Config& v) {
    Reader r{j, "config", {}};
    r("data", v.data);
    r("degrade", v.degrade);
    r("model", v.model);
    r("schedule", v.schedule);
    r("run", v.run);
    r.finish();
}

Config config_from_json(const json& j) {
    Config c;
    from_json(j, c);
    validate(c);
    return c;
}

Config load_config(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    return config_from_json(j);
}

void validate(const Config& c) {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (c.data.num_classes < 2 || c.data.num_classes > 8) fail("data.num_classes must lie in [2, 8]");
    if (c.data.image_size < 16) fail("data.image_size must be >= 16");
    if (c.data.channels != 3) fail("data.channels must be 3");
    if (c.data.train_count <= 0 || c.data.test_count <= 0) fail("data counts must be positive");
    if (c.data.jitter < 0) fail("data.jitter must be >= 0");
    if (!(c.degrade.brightness_gamma > 0 && c.degrade.brightness_gamma <= 1)) fail("degrade.brightness_gamma in (0,1]");
    if (c.degrade.blur_sigma < 0 || c.degrade.noise_sigma < 0) fail("degrade sigmas must be >= 0");
    const auto& m = c.model;
    if (m.level_channels.size() != 3) fail("model.level_channels needs 3 entries");
    if (m.image_encoder_channels.size() != 3) fail("model.image_encoder_channels needs 3 entries");
    for (int ch : m.level_channels)
        if (ch <= 0 || ch % m.heads) fail("model.level_channels must be positive multiples of model.heads");
    if (m.head_dim <= 0 || m.head_dim % m.head_heads) fail("model.head_dim must be a multiple of model.head_heads");
    if (m.fpen_layers < 1) fail("model.fpen_layers must be >= 1");
    if (m.time_dim <= 0 || m.time_dim % 2) fail("model.time_dim must be even");
    if (m.window <= 0) fail("model.window must be positive");
    if (c.schedule.T < 1) fail("schedule.T must be >= 1");
    if (c.run.stage != 1 && c.run.stage != 2) fail("run.stage must be 1 or 2");
    if (c.run.epochs < 0 || c.run.batch_size <= 0) fail("run.epochs >= 0 and run.batch_size > 0 required");
    if (c.run.lr < 0) fail("run.lr must be >= 0");
    if (c.run.noise_semantics != "forward" && c.run.noise_semantics != "reverse")
        fail("run.noise_semantics must be \"forward\" or \"reverse\"");
}

std::string config_hash(const Config& c) { return text_checksum(json(c).dump()); }

RunConfig apply_variant(RunConfig run, const std::string& variant) {
    run.stage = 2;
    if (variant == "V1") {
        run.use_diffusion = false;
        run.loss = LossKind::ce;
        run.insert_noise = false;
    } else if (variant == "V2") {
        run.use_diffusion = true;
        run.loss = LossKind::ce;
        run.insert_noise = false;
    } else if (variant == "V3") {
        run.use_diffusion = true;
        run.loss = LossKind::total;
        run.insert_noise = true;
    } else if (variant == "V4") {
        run.use_diffusion = true;
        run.loss = LossKind::total;
        run.insert_noise = false;
    } else {
        throw ConfigError("unknown variant " + variant + " (expected V1..V4)");
    }
    return run;
}

int epochs_for_stage(const RunConfig& run, int stage) {
    return stage == 2 && run.stage2_epochs >= 0 ? run.stage2_epochs : run.epochs;
}

Config stage1_canonical(Config c) {
    const RunConfig defaults;
    c.schedule = ScheduleConfig{};
    c.run.stage = 1;
    c.run.stage2_epochs = defaults.stage2_epochs;
    c.run.use_diffusion = defaults.use_diffusion;
    c.run.loss = defaults.loss;
    c.run.insert_noise = defaults.insert_noise;
    c.run.noise_semantics = defaults.noise_semantics;
    c.run.train_encoders_s2 = defaults.train_encoders_s2;
    return c;
}

}  // namespace lrdif
