// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
//
// voxcal: synthesize dishes, train the three-module estimator, run inference
// and evaluation. One process per command; everything is seed-deterministic.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "voxcal/checkpoint.hpp"
#include "voxcal/pipeline.hpp"

namespace fs = std::filesystem;
using namespace voxcal;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    bool has_seed = false;
    uint64_t seed = 0;
    bool force = false;
    bool oracle = false;
};

RunConfig resolve_config(const GlobalArgs& g) {
    std::string text;
    if (!g.config_path.empty()) {
        std::ifstream is(g.config_path);
        if (!is) throw MissingArtifact("cannot open config file: " + g.config_path);
        text.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    } else {
        text = RunConfig::defaults().to_json_text();
    }
    std::vector<std::string> ov = g.overrides;
    if (g.has_seed) ov.push_back("seed=" + std::to_string(g.seed));
    if (!ov.empty()) text = RunConfig::apply_overrides(text, ov);
    return RunConfig::from_json_text(text);
}

class StageClock {
public:
    explicit StageClock(pipeline::RunRecord& rec) : rec_(rec) {}

    template <class F>
    void run(const std::string& name, F&& f) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        rec_.add_stage(name, dt.count());
    }

private:
    pipeline::RunRecord& rec_;
};

void print_metrics_table(const std::vector<AblationRow>& rows) {
    std::printf("%-14s %8s %6s %12s %10s %10s\n", "config", "seed", "n", "mae_kcal", "mape_pct",
                "maeom_pct");
    for (const auto& r : rows) {
        std::printf("%-14s %8llu %6lld %12.3f %10.3f %10.3f\n", r.config.c_str(),
                    (unsigned long long)r.seed, (long long)r.report.n, r.report.mae_kcal,
                    r.report.mape_pct, r.report.maeom_pct);
    }
}

bool checkpoints_exist(const std::string& dir, bool with_module2) {
    const bool base = fs::exists(fs::path(dir) / "gan.ckpt") &&
                      fs::exists(fs::path(dir) / "regressor.ckpt") &&
                      fs::exists(fs::path(dir) / "adaptation.ckpt");
    if (!with_module2) return base;
    return base && fs::exists(fs::path(dir) / "module2_direct.ckpt");
}

void write_estimates(const std::vector<EnergyEstimate>& estimates, const std::string& out_dir) {
    fs::create_directories(out_dir);
    for (const auto& e : estimates) {
        const fs::path path = fs::path(out_dir) / (e.sample_id + ".json");
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw IoError("cannot write " + path.string());
        os << energy_estimate_json(e);
    }
}

// --------------------------------------------------------------------------
// subcommands
// --------------------------------------------------------------------------

int cmd_synth(const GlobalArgs& g) {
    RunConfig cfg = resolve_config(g);
    pipeline::run_synth(cfg, g.force);
    return 0;
}

int cmd_train(const GlobalArgs& g, const std::string& stage) {
    RunConfig cfg = resolve_config(g);
    LoadedDataset ds = load_dataset(cfg.dataset_dir);
    std::vector<pipeline::PreparedSample> train =
        pipeline::prepare_samples(ds, "train", cfg.z_res);

    pipeline::RunRecord record(cfg);
    StageClock clock(record);
    if (stage == "gan" || stage == "all") {
        clock.run("gan", [&] { pipeline::train_gan_stage(cfg, train, cfg.checkpoint_dir); });
    }
    if (stage == "regressor" || stage == "all") {
        clock.run("regressor",
                  [&] { pipeline::train_regressor_stage(cfg, train, cfg.checkpoint_dir); });
    }
    if (stage == "adaptation" || stage == "all") {
        clock.run("adaptation",
                  [&] { pipeline::train_adaptation_stage(cfg, train, cfg.checkpoint_dir); });
    }
    if (stage == "module2") {
        clock.run("module2", [&] { pipeline::train_module2_stage(cfg, train, cfg.checkpoint_dir); });
    }
    if (cfg.joint_finetune && stage == "all") {
        clock.run("joint", [&] { pipeline::joint_finetune_stage(cfg, train, cfg.checkpoint_dir); });
    }
    record.write(cfg.report_dir);
    std::cout << "train: stage '" << stage << "' complete; checkpoints under " << cfg.checkpoint_dir
              << "\n";
    return 0;
}

int cmd_infer(const GlobalArgs& g, const std::vector<std::string>& images,
              const std::string& out_dir_flag) {
    if (g.oracle) throw UsageError("--oracle applies to eval/ablate, not infer");
    RunConfig cfg = resolve_config(g);

    Generator gen = pipeline::load_generator(cfg, cfg.checkpoint_dir);
    DensityRegressor reg = pipeline::load_regressor(cfg, cfg.checkpoint_dir);
    AdaptationLayer adapt = pipeline::load_adaptation(cfg, cfg.checkpoint_dir);

    const std::string out_dir =
        out_dir_flag.empty() ? (fs::path(cfg.report_dir) / "estimates").string() : out_dir_flag;
    fs::create_directories(out_dir);

    for (const std::string& path : images) {
        img::RgbU8 rgb = img::read_ppm8(path);
        if (rgb.width != cfg.image_size || rgb.height != cfg.image_size) {
            throw UsageError("image " + path + " is " + std::to_string(rgb.width) + "x" +
                             std::to_string(rgb.height) + ", config expects " +
                             std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size));
        }
        const int64_t s = rgb.width;
        std::vector<float> data(size_t(3 * s * s));
        for (int64_t y = 0; y < s; ++y) {
            for (int64_t x = 0; x < s; ++x) {
                for (int64_t c = 0; c < 3; ++c) {
                    data[size_t(c * s * s + y * s + x)] =
                        float(rgb.pixels[size_t((y * s + x) * 3 + c)]) / 255.0f;
                }
            }
        }
        const std::string id = fs::path(path).stem().string();
        EnergyEstimate e = estimate_energy(Tensor(Shape{3, s, s}, std::move(data)), gen, reg, adapt,
                                           cfg.binarize_tau, id);
        const fs::path out_path = fs::path(out_dir) / (id + ".json");
        std::ofstream os(out_path, std::ios::trunc);
        if (!os) throw IoError("cannot write " + out_path.string());
        os << energy_estimate_json(e);
        std::cout << out_path.string() << "\n";
    }
    return 0;
}

int cmd_eval(const GlobalArgs& g) {
    RunConfig cfg = resolve_config(g);
    LoadedDataset ds = load_dataset(cfg.dataset_dir);
    std::vector<pipeline::EvalSample> test = pipeline::load_eval_samples(ds, "test");

    pipeline::RunRecord record(cfg);
    StageClock clock(record);
    pipeline::EvalOutput out;
    clock.run("eval", [&] {
        out = g.oracle ? pipeline::evaluate_oracle(test)
                       : pipeline::evaluate_full(cfg, cfg.checkpoint_dir, test);
    });

    std::vector<AblationRow> rows{AblationRow{g.oracle ? "oracle" : "full", cfg.seed, out.report}};
    emit_report(rows, out.points, cfg.report_dir);
    if (!out.estimates.empty()) {
        write_estimates(out.estimates, (fs::path(cfg.report_dir) / "estimates").string());
    }
    record.set_summary_metric("mae_kcal", out.report.mae_kcal);
    record.set_summary_metric("mape_pct", out.report.mape_pct);
    record.set_summary_metric("maeom_pct", out.report.maeom_pct);
    record.write(cfg.report_dir);
    print_metrics_table(rows);
    return 0;
}

int cmd_ablate(const GlobalArgs& g, std::vector<uint64_t> seeds) {
    RunConfig cfg = resolve_config(g);
    LoadedDataset ds = load_dataset(cfg.dataset_dir);
    std::vector<pipeline::EvalSample> test = pipeline::load_eval_samples(ds, "test");

    if (seeds.empty()) seeds = {cfg.seed, cfg.seed + 1, cfg.seed + 2};

    pipeline::RunRecord record(cfg);
    StageClock clock(record);

    std::vector<AblationRow> rows;
    std::vector<ScatterPoint> full_points;

    if (g.oracle) {
        pipeline::EvalOutput out = pipeline::evaluate_oracle(test);
        for (const char* config : {"module2_only", "module1_2", "full"}) {
            rows.push_back(AblationRow{config, cfg.seed, out.report});
        }
        full_points = out.points;
    } else {
        std::vector<pipeline::PreparedSample> train; // built lazily, only if training is needed
        for (uint64_t s : seeds) {
            RunConfig scfg = cfg;
            scfg.seed = s;
            const std::string ckpt_dir =
                (fs::path(cfg.checkpoint_dir) / ("seed_" + std::to_string(s))).string();

            if (!checkpoints_exist(ckpt_dir, /*with_module2=*/true)) {
                if (train.empty()) train = pipeline::prepare_samples(ds, "train", cfg.z_res);
                std::cout << "ablate: training seed " << s << " under " << ckpt_dir << "\n";
                clock.run("train_gan_seed" + std::to_string(s),
                          [&] { pipeline::train_gan_stage(scfg, train, ckpt_dir); });
                clock.run("train_regressor_seed" + std::to_string(s),
                          [&] { pipeline::train_regressor_stage(scfg, train, ckpt_dir); });
                clock.run("train_adaptation_seed" + std::to_string(s),
                          [&] { pipeline::train_adaptation_stage(scfg, train, ckpt_dir); });
                clock.run("train_module2_seed" + std::to_string(s),
                          [&] { pipeline::train_module2_stage(scfg, train, ckpt_dir); });
            }

            pipeline::EvalOutput m2 = pipeline::evaluate_module2(scfg, ckpt_dir, test);
            pipeline::EvalOutput m12 = pipeline::evaluate_module1_2(scfg, ckpt_dir, test);
            pipeline::EvalOutput full = pipeline::evaluate_full(scfg, ckpt_dir, test);
            rows.push_back(AblationRow{"module2_only", s, m2.report});
            rows.push_back(AblationRow{"module1_2", s, m12.report});
            rows.push_back(AblationRow{"full", s, full.report});
            full_points.insert(full_points.end(), full.points.begin(), full.points.end());
        }
    }

    emit_report(rows, full_points, cfg.report_dir);

    // median-over-seeds table
    std::printf("\nper-seed rows:\n");
    print_metrics_table(rows);
    std::printf("\nmedian over %zu seed(s):\n", seeds.size());
    std::printf("%-14s %12s %10s %10s\n", "config", "mae_kcal", "mape_pct", "maeom_pct");
    {
        std::ofstream ms(fs::path(cfg.report_dir) / "ablation_median.csv", std::ios::trunc);
        if (!ms) throw IoError("cannot write ablation_median.csv");
        ms << "config,median_mae_kcal,median_mape_pct,median_maeom_pct\n";
        for (const char* config : {"module2_only", "module1_2", "full"}) {
            std::vector<double> maes, mapes, maeoms;
            for (const auto& r : rows) {
                if (r.config == config) {
                    maes.push_back(r.report.mae_kcal);
                    mapes.push_back(r.report.mape_pct);
                    maeoms.push_back(r.report.maeom_pct);
                }
            }
            if (maes.empty()) continue;
            const double mmae = median(maes), mmape = median(mapes), mmaeom = median(maeoms);
            std::printf("%-14s %12.3f %10.3f %10.3f\n", config, mmae, mmape, mmaeom);
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f", config, mmae, mmape, mmaeom);
            ms << buf << "\n";
            record.set_summary_metric(std::string(config) + "_median_mape", mmape);
        }
    }
    record.write(cfg.report_dir);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"voxcal: monocular food-energy estimation via voxel reconstruction"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "JSON run configuration");
    auto* seed_opt = app.add_option("--seed", g.seed, "override the run seed");
    app.add_flag("--force", g.force, "overwrite existing outputs");
    app.add_flag("--oracle", g.oracle, "groundtruth-passthrough models (eval/ablate)");
    app.add_option("--set", g.overrides, "config override, dotted.key=value")->take_all();

    auto* synth = app.add_subcommand("synth", "generate the synthetic dish dataset");

    auto* train = app.add_subcommand("train", "train pipeline stages");
    std::string stage = "all";
    train->add_option("--stage", stage, "gan | regressor | adaptation | module2 | all")
        ->check(CLI::IsMember({"gan", "regressor", "adaptation", "module2", "all"}));

    auto* infer = app.add_subcommand("infer", "estimate energy from RGB images");
    std::vector<std::string> images;
    std::string infer_out;
    infer->add_option("images", images, "input PPM images")->required()->expected(-1);
    infer->add_option("--out", infer_out, "output directory for estimate JSONs");

    auto* eval = app.add_subcommand("eval", "evaluate the full pipeline on the test split");
    auto* ablate = app.add_subcommand("ablate", "run the three-configuration ablation");
    std::string seeds_text;
    ablate->add_option("--seeds", seeds_text, "comma-separated seeds (default: seed, seed+1, seed+2)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    g.has_seed = seed_opt->count() > 0;

    try {
        if (synth->parsed()) return cmd_synth(g);
        if (train->parsed()) return cmd_train(g, stage);
        if (infer->parsed()) return cmd_infer(g, images, infer_out);
        if (eval->parsed()) return cmd_eval(g);
        if (ablate->parsed()) {
            std::vector<uint64_t> seeds;
            if (!seeds_text.empty()) {
                size_t start = 0;
                while (start <= seeds_text.size()) {
                    const size_t comma = seeds_text.find(',', start);
                    const std::string tok = seeds_text.substr(
                        start, comma == std::string::npos ? comma : comma - start);
                    if (!tok.empty()) seeds.push_back(std::stoull(tok));
                    if (comma == std::string::npos) break;
                    start = comma + 1;
                }
                if (seeds.empty()) throw UsageError("--seeds given but no seeds parsed");
            }
            return cmd_ablate(g, seeds);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const MissingArtifact& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
