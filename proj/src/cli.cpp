#include "lrdif/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "lrdif/config.hpp"
#include "lrdif/dataset.hpp"
#include "lrdif/degrade.hpp"
#include "lrdif/errors.hpp"
#include "lrdif/grad_suite.hpp"
#include "lrdif/harness.hpp"
#include "lrdif/io.hpp"
#include "lrdif/model.hpp"

namespace lrdif {

namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

Config resolve_config(const Globals& g) { return g.config_path.empty() ? Config{} : load_config(g.config_path); }

void write_run_json(const fs::path& out, const std::string& command, const json& config, const json& args) {
    fs::create_directories(out);
    const json run{{"command", command}, {"config", config}, {"args", args}};
    write_text_atomic(out / "run.json", run.dump(2) + "\n");
}

// Accepts either a split directory or a dataset root (its test split).
Split load_any_split(const fs::path& path) {
    const json manifest = json::parse(read_text(path / "manifest.json"), nullptr, false);
    if (manifest.is_object() && manifest.contains("splits")) return load_dataset(path).test;
    return load_split(path);
}

std::string variant_or_default(const std::string& v) { return v.empty() ? "custom" : v; }

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Label-restoration diffusion on a procedural toy expression dataset", "lrdif"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "JSON config (partial; unspecified keys keep defaults)");
    app.add_option("--seed", g.seed, "Seed override (data seed for gen-data, run seed otherwise)");
    app.add_option("--out", g.out, "Output directory");

    std::string data_dir, checkpoint, stage1, variant;
    std::optional<int> epochs;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<int> t_values{1, 2, 4, 8, 16, 32};
    double eps = 1e-6;
    std::size_t max_coords = 8;
    bool reuse = false, quiet = false;

    auto* gen = app.add_subcommand("gen-data", "Generate the clean toy dataset");
    auto* deg = app.add_subcommand("degrade", "Pair a dataset with degraded UDC images");
    deg->add_option("--data", data_dir, "Dataset directory")->required();
    auto* tr1 = app.add_subcommand("train-stage1", "Train the label-prior network");
    auto* tr2 = app.add_subcommand("train-stage2", "Train the label-free diffusion stage");
    for (auto* sc : {tr1, tr2}) {
        sc->add_option("--data", data_dir, "Paired dataset directory")->required();
        sc->add_option("--epochs", epochs, "Epoch override");
        sc->add_flag("--reuse", reuse, "Skip training when an identical finished run exists in --out");
        sc->add_flag("--quiet", quiet, "No per-epoch progress");
    }
    tr2->add_option("--stage1", stage1, "Stage-1 checkpoint directory")->required();
    tr2->add_option("--variant", variant, "Ablation variant")->check(CLI::IsMember({"V1", "V2", "V3", "V4"}));
    auto* inf = app.add_subcommand("infer", "Predict a split with a trained checkpoint");
    auto* exf = app.add_subcommand("export-features", "Export penultimate features and a 2-D projection");
    for (auto* sc : {inf, exf}) {
        sc->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
        sc->add_option("--data", data_dir, "Split directory or dataset root (test split)")->required();
    }
    auto* abl = app.add_subcommand("ablate", "Train the V1-V4 ablation matrix");
    auto* swp = app.add_subcommand("sweep-t", "Sweep the number of diffusion iterations");
    for (auto* sc : {abl, swp}) {
        sc->add_option("--data", data_dir, "Paired dataset directory")->required();
        sc->add_option("--seeds", seeds, "Training seeds")->delimiter(',');
        sc->add_option("--epochs", epochs, "Epoch override");
        sc->add_flag("--reuse", reuse, "Reuse identical finished runs");
        sc->add_flag("--quiet", quiet, "No per-epoch progress");
    }
    swp->add_option("--T", t_values, "Iteration counts")->delimiter(',');
    auto* gck = app.add_subcommand("grad-check", "Finite-difference check of every block");
    gck->add_option("--eps", eps, "Central-difference step")->check(CLI::Range(1e-6, 1e-3));
    gck->add_option("--max-coords", max_coords, "Coordinates probed per tensor (0 = all)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitConfig;
    }

    const fs::path outdir = g.out;
    const TrainOptions topt{reuse, !quiet};
    try {
        Config cfg = resolve_config(g);
        if (epochs) cfg.run.epochs = *epochs;
        if (gen->parsed()) {
            if (g.seed) cfg.data.seed = *g.seed;
            validate(cfg);
            write_run_json(outdir, "gen-data", cfg, json::object());
            const Dataset d = generate(cfg.data);
            save_dataset(d, outdir);
            out << "wrote " << d.train.size() << " train + " << d.test.size() << " test samples to " << outdir.string()
                << "\n";
            return kExitOk;
        }
        if (g.seed) cfg.run.seed = *g.seed;
        validate(cfg);
        if (deg->parsed()) {
            write_run_json(outdir, "degrade", cfg, {{"data", data_dir}});
            Dataset d = load_dataset(data_dir);
            degrade_dataset(d, cfg.degrade);
            save_dataset(d, outdir);
            out << "paired " << d.train.size() + d.test.size() << " samples into " << outdir.string() << "\n";
            return kExitOk;
        }
        if (tr1->parsed()) {
            cfg.run.stage = 1;
            write_run_json(outdir, "train-stage1", cfg, {{"data", data_dir}});
            const TrainResult r = train_stage1(cfg, load_dataset(data_dir), outdir, topt);
            out << "stage-1 test accuracy " << r.final_eval.accuracy << (r.reused ? " (reused)" : "") << "\n";
            return kExitOk;
        }
        if (tr2->parsed()) {
            cfg.run.stage = 2;
            if (!variant.empty()) cfg.run = apply_variant(cfg.run, variant);
            write_run_json(outdir, "train-stage2", cfg,
                           {{"data", data_dir}, {"stage1", stage1}, {"variant", variant_or_default(variant)}});
            const TrainResult r = train_stage2(cfg, load_dataset(data_dir), stage1, outdir, topt);
            out << "stage-2 test accuracy " << r.final_eval.accuracy << (r.reused ? " (reused)" : "") << "\n";
            return kExitOk;
        }
        if (inf->parsed() || exf->parsed()) {
            const auto m = load_checkpoint(checkpoint);
            const std::string command = inf->parsed() ? "infer" : "export-features";
            write_run_json(outdir, command, m->config, {{"checkpoint", checkpoint}, {"data", data_dir}});
            const Split split = load_any_split(data_dir);
            if (inf->parsed()) {
                const EvalResult r = evaluate(*m, split);
                std::ostringstream csv;
                csv << "index,pred,label\n";
                for (std::size_t i = 0; i < r.predictions.size(); ++i)
                    csv << r.keys[i] << ',' << r.predictions[i] << ',' << r.labels[i] << '\n';
                write_text_atomic(outdir / "predictions.csv", csv.str());
                write_text_atomic(outdir / "eval.json", to_json(r).dump(2) + "\n");
                out << "accuracy " << r.accuracy << " over " << r.predictions.size() << " samples\n";
            } else {
                const FeatureExport f = extract_features(*m, split);
                write_features(f, outdir);
                out << "exported " << f.labels.size() << " feature rows; class separation "
                    << class_separation(f.features, f.labels) << "\n";
            }
            return kExitOk;
        }
        if (abl->parsed()) {
            write_run_json(outdir, "ablate", cfg, {{"data", data_dir}, {"seeds", seeds}});
            const auto rows = run_ablation(cfg, load_dataset(data_dir), seeds, outdir, topt);
            for (const auto& r : rows) out << r.variant << ' ' << r.acc << '\n';
            return kExitOk;
        }
        if (swp->parsed()) {
            write_run_json(outdir, "sweep-t", cfg, {{"data", data_dir}, {"seeds", seeds}, {"T", t_values}});
            const auto pts = sweep_iterations(cfg, load_dataset(data_dir), t_values, seeds, outdir, topt);
            for (const auto& p : pts) {
                out << "T=" << p.T << ' ';
                if (p.acc)
                    out << *p.acc;
                else
                    out << p.status;
                out << '\n';
            }
            return kExitOk;
        }
        if (gck->parsed()) {
            write_run_json(outdir, "grad-check", cfg, {{"eps", eps}, {"max_coords", max_coords}});
            const auto report = run_grad_suite(cfg.run.seed, eps, max_coords);
            json rows = json::array();
            bool ok = true;
            for (const auto& b : report) {
                const bool pass = b.max_rel_error < kGradTolerance;
                ok = ok && pass;
                out << std::left << std::setw(34) << b.name << std::scientific << std::setprecision(3)
                    << b.max_rel_error << "  " << (pass ? "ok" : "FAIL") << '\n';
                rows.push_back({{"block", b.name}, {"max_rel_error", b.max_rel_error}, {"coords", b.coords}});
            }
            out << std::defaultfloat;
            write_text_atomic(outdir / "grad_check.json",
                              json{{"tolerance", kGradTolerance}, {"blocks", rows}}.dump(2) + "\n");
            return ok ? kExitOk : kExitNumeric;
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    }
    err << app.help();
    return kExitConfig;
}

int cli_dispatch(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace lrdif
