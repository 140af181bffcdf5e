#include "lrdif/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include "lrdif/errors.hpp"
#include "lrdif/io.hpp"
#include "lrdif/optim.hpp"
#include "lrdif/rng.hpp"

namespace lrdif {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kShuffleStream = 0xe90c;
constexpr std::size_t kEvalBatch = 64;

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(hash_seed(seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

std::vector<std::string> trainable_names(Model& m) {
    const RunConfig& run = m.config.run;
    if (m.stage == 2) {
        m.store.set_trainable("enc.label.", false);
        m.store.set_trainable("fpen.s1.", false);
        m.store.set_trainable("enc.image.", run.train_encoders_s2);
        m.store.set_trainable("enc.flm.", run.train_encoders_s2);
    }
    std::vector<std::string> names;
    for (const auto& [name, t] : m.store.all())
        if (t.requires_grad()) names.push_back(name);
    return names;
}

AdamOptions adam_options(const RunConfig& run) {
    AdamOptions o;
    o.lr = run.lr;
    o.beta1 = run.beta1;
    o.beta2 = run.beta2;
    o.weight_decay = run.weight_decay;
    return o;
}

std::string result_key(const Config& cfg, const std::string& dataset_digest, const std::string& parent) {
    return text_checksum(json(cfg).dump() + "|" + dataset_digest + "|" + parent);
}

std::string dataset_digest(const Dataset& d) {
    std::vector<std::uint8_t> acc;
    for (const Split* s : {&d.train, &d.test}) {
        for (const Tensor* t : {&s->images, &s->landmarks}) {
            const auto h = checksum_hex(encode_tnsr(*t, DType::f32));
            acc.insert(acc.end(), h.begin(), h.end());
        }
        if (s->udc) {
            const auto h = checksum_hex(encode_tnsr(*s->udc, DType::f32));
            acc.insert(acc.end(), h.begin(), h.end());
        }
        for (int l : s->labels) acc.push_back(static_cast<std::uint8_t>(l));
    }
    return checksum_hex(acc);
}

std::optional<TrainResult> try_reuse(const fs::path& out, const std::string& key) {
    const fs::path marker = out / "result.json";
    if (!fs::exists(marker)) return std::nullopt;
    try {
        const json r = json::parse(read_text(marker));
        if (r.at("key").get<std::string>() != key) return std::nullopt;
        if (checkpoint_digest(out / "checkpoint") != r.at("checkpoint_digest").get<std::string>()) return std::nullopt;
        TrainResult t;
        t.dir = out;
        t.reused = true;
        const json e = r.at("eval");
        t.final_eval.accuracy = e.at("accuracy").get<double>();
        t.final_eval.confusion = e.at("confusion").get<std::vector<std::vector<int>>>();
        std::istringstream lines(read_text(out / "metrics.jsonl"));
        for (std::string line; std::getline(lines, line);) {
            if (line.empty()) continue;
            const json j = json::parse(line);
            MetricsRecord m;
            m.epoch = j.at("epoch").get<int>();
            m.train_loss = j.at("train_loss").get<double>();
            m.ce = j.at("ce").get<double>();
            m.has_kl = j.contains("kl");
            if (m.has_kl) m.kl = j.at("kl").get<double>();
            m.train_acc = j.at("train_acc").get<double>();
            if (j.contains("test_acc")) m.test_acc = j.at("test_acc").get<double>();
            t.metrics.push_back(m);
        }
        return t;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

TrainResult train_loop(Model& m, const Dataset& data, const fs::path& out, const std::string& key,
                       const TrainOptions& opt) {
    const RunConfig& run = m.config.run;
    if (data.train.size() == 0) throw DataError("training split is empty");
    if (!data.train.udc || !data.test.udc) throw DataError("dataset has no UDC images; run degrade first");
    fs::create_directories(out);
    const auto names = trainable_names(m);
    Adam adam(m.store, names, adam_options(run));
    TrainResult result;
    result.dir = out;
    std::vector<json> metrics_rows, timing_rows;
    const std::size_t n = data.train.size();
    const auto bs = static_cast<std::size_t>(run.batch_size);
    const int epochs = epochs_for_stage(run, m.stage);
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto order = epoch_order(run.seed, epoch, n);
        double loss_sum = 0.0, ce_sum = 0.0, kl_sum = 0.0;
        std::size_t correct = 0;
        bool has_kl = false;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t len = std::min(bs, n - start);
            const Batch batch = make_batch(data.train, std::span(order).subspan(start, len));
            ForwardOut f;
            try {
                f = m.stage == 1 ? stage1_forward(m, batch) : stage2_train_forward(m, batch, epoch);
                backward(f.loss);
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + ", batch at sample " + std::to_string(start) +
                                   ": " + e.what());
            }
            adam.step();
            const double w = static_cast<double>(len);
            loss_sum += f.loss.item() * w;
            ce_sum += f.ce.item() * w;
            if (f.kl.defined()) {
                has_kl = true;
                kl_sum += f.kl.item() * w;
            }
            const auto pred = predict(f.logits);
            for (std::size_t i = 0; i < len; ++i) correct += pred[i] == batch.labels[i];
        }
        const bool last = epoch == epochs;
        if (last) round_to_storage(m.store);
        MetricsRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(n);
        rec.ce = ce_sum / static_cast<double>(n);
        rec.has_kl = has_kl;
        rec.kl = kl_sum / static_cast<double>(n);
        rec.train_acc = static_cast<double>(correct) / static_cast<double>(n);
        if (run.eval_each_epoch || last) {
            result.final_eval = evaluate(m, data.test);
            rec.test_acc = result.final_eval.accuracy;
        }
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        result.metrics.push_back(rec);
        metrics_rows.push_back(to_json(rec));
        timing_rows.push_back({{"epoch", epoch}, {"wall_ms", ms}});
        write_jsonl(out / "metrics.jsonl", metrics_rows);
        write_jsonl(out / "timing.jsonl", timing_rows);
        if (opt.verbose) {
            std::cerr << "[stage" << m.stage << "] epoch " << epoch << " loss " << rec.train_loss << " train_acc "
                      << rec.train_acc;
            if (rec.test_acc) std::cerr << " test_acc " << *rec.test_acc;
            std::cerr << " (" << static_cast<long>(ms) << " ms)\n";
        }
    }
    if (epochs == 0) {
        round_to_storage(m.store);
        result.final_eval = evaluate(m, data.test);
        write_jsonl(out / "metrics.jsonl", {});
        write_jsonl(out / "timing.jsonl", {});
    }
    save_checkpoint(m, out / "checkpoint");
    write_text_atomic(out / "eval.json", to_json(result.final_eval).dump(2) + "\n");
    json marker{{"key", key},
                {"checkpoint_digest", checkpoint_digest(out / "checkpoint")},
                {"eval", {{"accuracy", result.final_eval.accuracy}, {"confusion", result.final_eval.confusion}}}};
    write_text_atomic(out / "result.json", marker.dump(2) + "\n");
    return result;
}

}  // namespace

json to_json(const MetricsRecord& r) {
    json j{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"ce", r.ce}};
    if (r.has_kl) j["kl"] = r.kl;
    j["train_acc"] = r.train_acc;
    if (r.test_acc) j["test_acc"] = *r.test_acc;
    return j;
}

EvalResult evaluate(const Model& m, const Split& split) {
    if (split.size() == 0) throw DataError("evaluation split is empty");
    if (!split.udc) throw DataError("split " + split.name + " has no UDC images");
    NoGradGuard no_grad;
    const auto classes = static_cast<std::size_t>(m.config.data.num_classes);
    EvalResult r;
    r.confusion.assign(classes, std::vector<int>(classes, 0));
    for (std::size_t start = 0; start < split.size(); start += kEvalBatch) {
        const std::size_t len = std::min(kEvalBatch, split.size() - start);
        std::vector<std::size_t> rows(len);
        std::iota(rows.begin(), rows.end(), start);
        const Batch b = make_batch(split, rows);
        const ForwardOut f = m.stage == 1 ? stage1_forward(m, b) : stage2_infer(m, b.udc, b.landmarks, b.keys);
        const auto pred = predict(f.logits);
        r.predictions.insert(r.predictions.end(), pred.begin(), pred.end());
        r.keys.insert(r.keys.end(), b.keys.begin(), b.keys.end());
    }
    r.labels = split.labels;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < r.labels.size(); ++i) {
        const int y = r.labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) throw DataError("label out of range in split " + split.name);
        ++r.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(r.predictions[i])];
        correct += r.predictions[i] == y;
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.labels.size());
    return r;
}

json to_json(const EvalResult& r) {
    return json{{"accuracy", r.accuracy}, {"count", r.labels.size()}, {"confusion", r.confusion}};
}

TrainResult train_stage1(const Config& cfg, const Dataset& data, const fs::path& out, const TrainOptions& opt) {
    const Config c = stage1_canonical(cfg);
    const std::string key = result_key(c, dataset_digest(data), "");
    if (opt.reuse)
        if (auto r = try_reuse(out, key)) return *r;
    auto m = Model::create(c, 1);
    return train_loop(*m, data, out, key, opt);
}

TrainResult train_stage2(const Config& cfg, const Dataset& data, const fs::path& stage1_checkpoint,
                         const fs::path& out, const TrainOptions& opt) {
    Config c = cfg;
    c.run.stage = 2;
    if (!fs::exists(stage1_checkpoint / "manifest.json"))
        throw DataError("missing stage-1 checkpoint at " + stage1_checkpoint.string());
    const std::string key = result_key(c, dataset_digest(data), checkpoint_digest(stage1_checkpoint));
    if (opt.reuse)
        if (auto r = try_reuse(out, key)) return *r;
    auto m = Model::create(c, 2);
    load_parameters(*m, stage1_checkpoint);
    return train_loop(*m, data, out, key, opt);
}

double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<AblationRow> run_ablation(const Config& cfg, const Dataset& data, const std::vector<std::uint64_t>& seeds,
                                      const fs::path& out, const TrainOptions& opt) {
    if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
    const std::vector<std::string> variants{"V1", "V2", "V3", "V4"};
    std::vector<AblationRow> rows;
    for (const auto& v : variants) rows.push_back({v, 0.0, seeds, {}});
    for (std::uint64_t seed : seeds) {
        Config c = cfg;
        c.run.seed = seed;
        const fs::path base = out / ("seed" + std::to_string(seed));
        TrainOptions s1 = opt;
        s1.reuse = true;
        train_stage1(c, data, base / "stage1", s1);
        for (auto& row : rows) {
            Config v = c;
            v.run = apply_variant(c.run, row.variant);
            const auto r = train_stage2(v, data, base / "stage1" / "checkpoint", base / row.variant, opt);
            row.per_seed.push_back(r.final_eval.accuracy);
        }
    }
    std::ostringstream csv;
    csv << "variant,acc,seeds\n";
    for (auto& row : rows) {
        row.acc = median(row.per_seed);
        std::ostringstream s;
        for (std::size_t i = 0; i < seeds.size(); ++i) s << (i ? " " : "") << seeds[i];
        csv << row.variant << "," << row.acc << "," << s.str() << "\n";
    }
    write_text_atomic(out / "ablation.csv", csv.str());
    std::ostringstream detail;
    detail << "variant,seed,acc\n";
    for (const auto& row : rows)
        for (std::size_t i = 0; i < seeds.size(); ++i) detail << row.variant << "," << seeds[i] << "," << row.per_seed[i] << "\n";
    write_text_atomic(out / "ablation_runs.csv", detail.str());
    return rows;
}

std::vector<SweepPoint> sweep_iterations(const Config& cfg, const Dataset& data, const std::vector<int>& T_values,
                                         const std::vector<std::uint64_t>& seeds, const fs::path& out,
                                         const TrainOptions& opt) {
    if (seeds.empty()) throw ConfigError("sweep needs at least one seed");
    std::vector<SweepPoint> points;
    for (int T : T_values) {
        SweepPoint p;
        p.T = T;
        Config c = cfg;
        c.schedule.T = T;
        try {
            schedule_from_config(c.schedule);
        } catch (const ConfigError& e) {
            p.status = e.what();
            points.push_back(p);
            continue;
        }
        for (std::uint64_t seed : seeds) {
            c.run.seed = seed;
            const fs::path base = out / ("seed" + std::to_string(seed));
            TrainOptions s1 = opt;
            s1.reuse = true;
            train_stage1(c, data, base / "stage1", s1);
            const auto r = train_stage2(c, data, base / "stage1" / "checkpoint", base / ("T" + std::to_string(T)), opt);
            p.per_seed.push_back(r.final_eval.accuracy);
        }
        p.acc = median(p.per_seed);
        points.push_back(p);
    }
    std::ostringstream csv;
    csv << "T,acc,seeds,status\n";
    for (const auto& p : points) {
        csv << p.T << ",";
        if (p.acc) csv << *p.acc;
        csv << ",";
        for (std::size_t i = 0; i < p.per_seed.size(); ++i) csv << (i ? " " : "") << seeds[i];
        std::string status = p.status;
        std::replace(status.begin(), status.end(), ',', ';');
        csv << "," << status << "\n";
    }
    write_text_atomic(out / "sweep.csv", csv.str());
    return points;
}

FeatureExport extract_features(const Model& m, const Split& split) {
    NoGradGuard no_grad;
    FeatureExport fe;
    std::vector<double> feats;
    std::size_t width = 0;
    for (std::size_t start = 0; start < split.size(); start += kEvalBatch) {
        const std::size_t len = std::min(kEvalBatch, split.size() - start);
        std::vector<std::size_t> rows(len);
        std::iota(rows.begin(), rows.end(), start);
        const Batch b = make_batch(split, rows);
        const ForwardOut f = m.stage == 1 ? stage1_forward(m, b) : stage2_infer(m, b.udc, b.landmarks, b.keys);
        width = f.features.dim(1);
        feats.insert(feats.end(), f.features.values().begin(), f.features.values().end());
    }
    fe.features = Tensor::from({split.size(), width}, std::move(feats));
    fe.projection = principal_projection(fe.features);
    fe.labels = split.labels;
    return fe;
}

Tensor principal_projection(const Tensor& features, int components) {
    const std::size_t n = features.dim(0), d = features.dim(1);
    const auto k = static_cast<std::size_t>(components);
    if (k > d) throw ShapeError("principal_projection: more components than feature dims");
    const auto x = features.values();
    std::vector<double> mean(d, 0.0), centered(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += x[i * d + j];
    for (auto& v : mean) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) centered[i * d + j] = x[i * d + j] - mean[j];
    // Covariance, then cyclic Jacobi rotations for its eigenvectors.
    std::vector<double> a(d * d, 0.0), v(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = 0; q < d; ++q) a[p * d + q] += centered[i * d + p] * centered[i * d + q];
    for (std::size_t p = 0; p < d; ++p) v[p * d + p] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) off += a[p * d + q] * a[p * d + q];
        if (off < 1e-22) break;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) {
                const double apq = a[p * d + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t r = 0; r < d; ++r) {
                    const double arp = a[r * d + p], arq = a[r * d + q];
                    a[r * d + p] = c * arp - s * arq;
                    a[r * d + q] = s * arp + c * arq;
                }
                for (std::size_t r = 0; r < d; ++r) {
                    const double apr = a[p * d + r], aqr = a[q * d + r];
                    a[p * d + r] = c * apr - s * aqr;
                    a[q * d + r] = s * apr + c * aqr;
                }
                for (std::size_t r = 0; r < d; ++r) {
                    const double vrp = v[r * d + p], vrq = v[r * d + q];
                    v[r * d + p] = c * vrp - s * vrq;
                    v[r * d + q] = s * vrp + c * vrq;
                }
            }
    }
    std::vector<std::size_t> idx(d);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return a[i * d + i] > a[j * d + j]; });
    std::vector<double> proj(n * k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t col = idx[c];
        std::size_t big = 0;
        for (std::size_t r = 1; r < d; ++r)
            if (std::abs(v[r * d + col]) > std::abs(v[big * d + col])) big = r;
        const double sign = v[big * d + col] < 0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t r = 0; r < d; ++r) acc += centered[i * d + r] * v[r * d + col];
            proj[i * k + c] = sign * acc;
        }
    }
    return Tensor::from({n, k}, std::move(proj));
}

double class_separation(const Tensor& features, const std::vector<int>& labels) {
    const std::size_t n = features.dim(0), d = features.dim(1);
    const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<double> cent(static_cast<std::size_t>(classes) * d, 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(classes), 0);
    const auto x = features.values();
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        ++count[c];
        for (std::size_t j = 0; j < d; ++j) cent[c * d + j] += x[i * d + j];
    }
    for (std::size_t c = 0; c < count.size(); ++c)
        for (std::size_t j = 0; j < d; ++j) cent[c * d + j] /= std::max<std::size_t>(1, count[c]);
    auto dist = [d](const double* a, const double* b) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
        return std::sqrt(s);
    };
    double inter = 0.0, intra = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < count.size(); ++a)
        for (std::size_t b = a + 1; b < count.size(); ++b)
            if (count[a] && count[b]) {
                inter += dist(&cent[a * d], &cent[b * d]);
                ++pairs;
            }
    for (std::size_t i = 0; i < n; ++i) intra += dist(&x[i * d], &cent[static_cast<std::size_t>(labels[i]) * d]);
    inter /= static_cast<double>(std::max<std::size_t>(1, pairs));
    intra /= static_cast<double>(n);
    return intra > 0.0 ? inter / intra : std::numeric_limits<double>::infinity();
}

void write_features(const FeatureExport& f, const fs::path& out) {
    fs::create_directories(out);
    write_tnsr(f.features, out / "features.tnsr");
    write_tnsr(f.projection, out / "projection.tnsr");
    const std::size_t n = f.labels.size();
    write_tnsr(Tensor::from({n}, std::vector<double>(f.labels.begin(), f.labels.end())), out / "labels.tnsr");
    std::ostringstream csv;
    csv.precision(17);
    csv << "index,label,pc1,pc2\n";
    const auto p = f.projection.values();
    for (std::size_t i = 0; i < f.labels.size(); ++i)
        csv << i << "," << f.labels[i] << "," << p[i * 2] << "," << p[i * 2 + 1] << "\n";
    write_text_atomic(out / "projection.csv", csv.str());
}

void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
    std::string text;
    for (const auto& r : rows) text += r.dump() + "\n";
    write_text_atomic(path, text);
}

}  // namespace lrdif
