// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "voxcal/checkpoint.hpp"
#include "voxcal/voxel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace voxcal {

namespace {

uint64_t subseed(uint64_t seed, uint64_t tag) {
    uint64_t s = seed ^ (tag * 0x9e3779b97f4a7c15ULL);
    return splitmix64(s);
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::vector<double>>& rows) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os << header << "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) os << ",";
            if (i == 0) {
                os << int64_t(row[i]);
            } else {
                os << fmt6(row[i]);
            }
        }
        os << "\n";
    }
    if (!os) throw IoError("failed writing " + path);
}

} // namespace

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

void RunConfig::validate() const {
    if (image_size != z_res) {
        throw InvalidArgument("config: image_size (" + std::to_string(image_size) +
                              ") must equal z_res (" + std::to_string(z_res) +
                              ") for cubic voxel output");
    }
    if (classes < 2) throw InvalidArgument("config: classes must be >= 2");
    if (dataset_n < classes) throw InvalidArgument("config: dataset n smaller than class count");
    if (gan_epochs < 0 || reg_epochs < 0 || adapt_epochs < 0) {
        throw InvalidArgument("config: epochs must be >= 0");
    }
    if (!(binarize_tau > 0.0f && binarize_tau < 1.0f)) {
        throw InvalidArgument("config: binarize_tau must be in (0,1)");
    }
    generator_config().validate();
    backbone_config().validate();
}

RunConfig RunConfig::defaults() { return RunConfig{}; }

GeneratorConfig RunConfig::generator_config() const {
    GeneratorConfig g;
    g.resolution = image_size;
    g.z_res = z_res;
    g.levels = gan_levels;
    g.base_channels = gan_base_channels;
    g.noise_len = gan_noise_len;
    g.dropout_rate = gan_dropout;
    return g;
}

BackboneConfig RunConfig::backbone_config() const {
    BackboneConfig b;
    b.image_size = image_size;
    b.channels = backbone_channels;
    b.classes = classes;
    return b;
}

DatasetConfig RunConfig::dataset_config() const {
    DatasetConfig d;
    d.n = dataset_n;
    d.classes = classes;
    d.train_ratio = train_ratio;
    d.seed = seed;
    d.image_size = image_size;
    d.depth = depth;
    d.depth.z_res = z_res;
    return d;
}

float RunConfig::volume_scale() const { return float(z_res) * float(z_res) * float(z_res); }

std::string RunConfig::to_json_text() const {
    ordered_json j;
    j["seed"] = seed;
    j["image_size"] = image_size;
    j["z_res"] = z_res;
    j["classes"] = classes;
    j["dataset"] = {{"n", dataset_n},
                    {"train_ratio", train_ratio},
                    {"near", depth.near},
                    {"far", depth.far},
                    {"world_extent", depth.world_extent},
                    {"holes", depth.holes},
                    {"salt_rate", depth.salt_rate},
                    {"specular_threshold", depth.specular_threshold},
                    {"specular_shininess", depth.specular_shininess},
                    {"noise_sigma", depth.noise_sigma}};
    j["gan"] = {{"lambda_l1", gan_lambda_l1}, {"lr", gan_lr},
                {"beta1", gan_beta1},         {"epochs", gan_epochs},
                {"batch", gan_batch},         {"levels", gan_levels},
                {"base_channels", gan_base_channels}, {"noise_len", gan_noise_len},
                {"dropout", gan_dropout}};
    j["regressor"] = {{"lr", reg_lr},
                      {"beta_density", reg_beta_density},
                      {"epochs", reg_epochs},
                      {"batch", reg_batch},
                      {"channels", backbone_channels}};
    j["adaptation"] = {{"lr", adapt_lr},
                       {"epochs", adapt_epochs},
                       {"batch", adapt_batch},
                       {"use_bias", adapt_use_bias}};
    j["binarize_tau"] = binarize_tau;
    j["joint_finetune"] = joint_finetune;
    j["joint_epochs"] = joint_epochs;
    j["paths"] = {{"dataset_dir", dataset_dir},
                  {"checkpoint_dir", checkpoint_dir},
                  {"report_dir", report_dir}};
    return j.dump(2);
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw UsageError(std::string("bad config JSON: ") + e.what());
    }

    RunConfig c;
    try {
        auto get = [&](const json& obj, const char* key, auto fallback) {
            using T = decltype(fallback);
            return obj.contains(key) ? obj.at(key).get<T>() : fallback;
        };
        c.seed = get(j, "seed", c.seed);
        c.image_size = get(j, "image_size", c.image_size);
        c.z_res = get(j, "z_res", c.z_res);
        c.classes = get(j, "classes", c.classes);
        if (j.contains("dataset")) {
            const json& d = j.at("dataset");
            c.dataset_n = get(d, "n", c.dataset_n);
            c.train_ratio = get(d, "train_ratio", c.train_ratio);
            c.depth.near = get(d, "near", c.depth.near);
            c.depth.far = get(d, "far", c.depth.far);
            c.depth.world_extent = get(d, "world_extent", c.depth.world_extent);
            c.depth.holes = get(d, "holes", c.depth.holes);
            c.depth.salt_rate = get(d, "salt_rate", c.depth.salt_rate);
            c.depth.specular_threshold = get(d, "specular_threshold", c.depth.specular_threshold);
            c.depth.specular_shininess = get(d, "specular_shininess", c.depth.specular_shininess);
            c.depth.noise_sigma = get(d, "noise_sigma", c.depth.noise_sigma);
        }
        if (j.contains("gan")) {
            const json& g = j.at("gan");
            c.gan_lambda_l1 = get(g, "lambda_l1", c.gan_lambda_l1);
            c.gan_lr = get(g, "lr", c.gan_lr);
            c.gan_beta1 = get(g, "beta1", c.gan_beta1);
            c.gan_epochs = get(g, "epochs", c.gan_epochs);
            c.gan_batch = get(g, "batch", c.gan_batch);
            c.gan_levels = get(g, "levels", c.gan_levels);
            c.gan_base_channels = get(g, "base_channels", c.gan_base_channels);
            c.gan_noise_len = get(g, "noise_len", c.gan_noise_len);
            c.gan_dropout = get(g, "dropout", c.gan_dropout);
        }
        if (j.contains("regressor")) {
            const json& r = j.at("regressor");
            c.reg_lr = get(r, "lr", c.reg_lr);
            c.reg_beta_density = get(r, "beta_density", c.reg_beta_density);
            c.reg_epochs = get(r, "epochs", c.reg_epochs);
            c.reg_batch = get(r, "batch", c.reg_batch);
            c.backbone_channels = get(r, "channels", c.backbone_channels);
        }
        if (j.contains("adaptation")) {
            const json& a = j.at("adaptation");
            c.adapt_lr = get(a, "lr", c.adapt_lr);
            c.adapt_epochs = get(a, "epochs", c.adapt_epochs);
            c.adapt_batch = get(a, "batch", c.adapt_batch);
            c.adapt_use_bias = get(a, "use_bias", c.adapt_use_bias);
        }
        c.binarize_tau = get(j, "binarize_tau", c.binarize_tau);
        c.joint_finetune = get(j, "joint_finetune", c.joint_finetune);
        c.joint_epochs = get(j, "joint_epochs", c.joint_epochs);
        if (j.contains("paths")) {
            const json& p = j.at("paths");
            c.dataset_dir = get(p, "dataset_dir", c.dataset_dir);
            c.checkpoint_dir = get(p, "checkpoint_dir", c.checkpoint_dir);
            c.report_dir = get(p, "report_dir", c.report_dir);
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw MissingArtifact("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string RunConfig::apply_overrides(const std::string& json_text,
                                       const std::vector<std::string>& overrides) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw UsageError(std::string("bad config JSON: ") + e.what());
    }
    for (const std::string& ov : overrides) {
        const size_t eq = ov.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw UsageError("override must look like dotted.key=value, got '" + ov + "'");
        }
        const std::string path = ov.substr(0, eq);
        const std::string value = ov.substr(eq + 1);

        json* node = &j;
        size_t start = 0;
        while (true) {
            const size_t dot = path.find('.', start);
            const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
            if (key.empty()) throw UsageError("bad override key '" + path + "'");
            if (dot == std::string::npos) {
                json parsed;
                try {
                    parsed = json::parse(value);
                } catch (const json::exception&) {
                    parsed = value; // plain string
                }
                (*node)[key] = parsed;
                break;
            }
            node = &(*node)[key];
            start = dot + 1;
        }
    }
    return j.dump();
}

// ---------------------------------------------------------------------------
// sample preparation
// ---------------------------------------------------------------------------

namespace pipeline {

std::vector<PreparedSample> prepare_samples(const LoadedDataset& ds, const std::string& split,
                                            int64_t z_res) {
    std::vector<PreparedSample> out;
    for (const ManifestRow& row : ds.rows) {
        if (row.split != split) continue;
        const SampleOnDisk s = load_sample(ds, row.sample_id);

        const RawDepthMap filled = inpaint_dilate(s.depth, s.depth.width + s.depth.height);
        const MaskedDepth masked = apply_mask(filled, s.mask);
        const NormalizedDepthMap dbar = normalize(masked.depth, masked.mask);
        const VoxelGrid ref = depth_to_voxel(dbar, z_res);

        PreparedSample p;
        p.id = row.sample_id;
        p.image = s.rgb_tensor();
        p.ref_voxel = voxel_to_tensor(ref);
        p.class_id = s.class_id;
        p.density = s.density;
        p.true_volume = s.true_volume;
        p.energy = s.energy;
        out.push_back(std::move(p));
    }
    if (out.empty()) throw MissingArtifact("dataset has no '" + split + "' samples");
    return out;
}

std::vector<EvalSample> load_eval_samples(const LoadedDataset& ds, const std::string& split) {
    std::vector<EvalSample> out;
    for (const ManifestRow& row : ds.rows) {
        if (row.split != split) continue;
        const fs::path dir = fs::path(ds.root) / "samples" / row.sample_id;
        img::RgbU8 rgb = img::read_ppm8((dir / "rgb.ppm").string());
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
        out.push_back(EvalSample{row.sample_id, Tensor(Shape{3, s, s}, std::move(data)), row.energy});
    }
    if (out.empty()) throw MissingArtifact("dataset has no '" + split + "' samples");
    return out;
}

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

void run_synth(const RunConfig& cfg, bool force) {
    const fs::path dir(cfg.dataset_dir);
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) {
            throw UsageError("dataset directory '" + cfg.dataset_dir +
                             "' is not empty; pass --force to regenerate");
        }
        fs::remove_all(dir);
    }
    const SplitManifest m = make_dataset(cfg.dataset_config(), cfg.dataset_dir);
    std::cout << "synth: wrote " << m.rows.size() << " samples (" << m.count("train") << " train / "
              << m.count("test") << " test) under " << cfg.dataset_dir << "\n";
}

void train_gan_stage(const RunConfig& cfg, const std::vector<PreparedSample>& train,
                     const std::string& ckpt_dir) {
    GeneratorConfig gcfg = cfg.generator_config();
    Rng init_g(subseed(cfg.seed, 101));
    Rng init_d(subseed(cfg.seed, 102));
    Generator gen(gcfg, init_g);
    Discriminator disc(gcfg, init_d);

    std::vector<GanSample> data;
    data.reserve(train.size());
    for (const auto& p : train) data.push_back(GanSample{p.image, p.ref_voxel});

    GanTrainConfig tcfg;
    tcfg.lambda_l1 = cfg.gan_lambda_l1;
    tcfg.lr = cfg.gan_lr;
    tcfg.beta1 = cfg.gan_beta1;
    tcfg.epochs = cfg.gan_epochs;
    tcfg.batch = cfg.gan_batch;
    tcfg.seed = subseed(cfg.seed, 103);

    const std::string ckpt_path = (fs::path(ckpt_dir) / "gan.ckpt").string();
    auto save = [&]() {
        auto tensors = nn::snapshot(gen.named_params());
        for (auto& [name, t] : tensors) name = "gen." + name;
        auto dtensors = nn::snapshot(disc.named_params());
        for (auto& [name, t] : dtensors) tensors.emplace_back("disc." + name, t);
        save_checkpoint(ckpt_path, tensors);
    };

    std::vector<GanIterStats> stats =
        gan_train(gen, disc, data, tcfg, [&](int64_t epoch) {
            save();
            std::cout << "gan: epoch " << epoch + 1 << "/" << cfg.gan_epochs << " done\n";
        });
    if (cfg.gan_epochs == 0) save(); // persist the untrained pair as well

    std::vector<std::vector<double>> rows;
    rows.reserve(stats.size());
    for (const auto& s : stats) {
        rows.push_back({double(s.iteration), s.d_loss, s.g_adv, s.g_l1, s.g_total});
    }
    write_csv((fs::path(ckpt_dir) / "gan_loss.csv").string(),
              "iteration,d_loss,g_adv,g_l1,g_total", rows);
}

void train_regressor_stage(const RunConfig& cfg, const std::vector<PreparedSample>& train,
                           const std::string& ckpt_dir) {
    Rng init(subseed(cfg.seed, 111));
    DensityRegressor model(cfg.backbone_config(), init);

    std::vector<RegSample> data;
    data.reserve(train.size());
    for (const auto& p : train) data.push_back(RegSample{p.image, p.class_id, p.density});

    RegTrainConfig tcfg;
    tcfg.lr = cfg.reg_lr;
    tcfg.beta_density = cfg.reg_beta_density;
    tcfg.epochs = cfg.reg_epochs;
    tcfg.batch = cfg.reg_batch;
    tcfg.seed = subseed(cfg.seed, 112);

    auto stats = train_regressor(model, data, tcfg, [&](int64_t epoch) {
        if ((epoch + 1) % 10 == 0 || epoch + 1 == cfg.reg_epochs) {
            std::cout << "regressor: epoch " << epoch + 1 << "/" << cfg.reg_epochs << " done\n";
        }
    });

    save_checkpoint((fs::path(ckpt_dir) / "regressor.ckpt").string(),
                    nn::snapshot(model.named_params()));
    std::vector<std::vector<double>> rows;
    for (const auto& s : stats) rows.push_back({double(s.iteration), s.ce, s.density_l1, s.total});
    write_csv((fs::path(ckpt_dir) / "regressor_loss.csv").string(), "iteration,ce,density_l1,total",
              rows);
}

void train_module2_stage(const RunConfig& cfg, const std::vector<PreparedSample>& train,
                         const std::string& ckpt_dir) {
    Rng init(subseed(cfg.seed, 121));
    DirectEnergyModel model(cfg.backbone_config(), init);

    std::vector<EnergySample> data;
    data.reserve(train.size());
    for (const auto& p : train) data.push_back(EnergySample{p.image, p.energy});

    RegTrainConfig tcfg;
    tcfg.lr = cfg.reg_lr;
    tcfg.epochs = cfg.reg_epochs;
    tcfg.batch = cfg.reg_batch;
    tcfg.seed = subseed(cfg.seed, 122);

    auto stats = train_direct_energy(model, data, tcfg);
    save_checkpoint((fs::path(ckpt_dir) / "module2_direct.ckpt").string(),
                    nn::snapshot(model.named_params()));
    std::vector<std::vector<double>> rows;
    for (const auto& s : stats) rows.push_back({double(s.iteration), s.total});
    write_csv((fs::path(ckpt_dir) / "module2_loss.csv").string(), "iteration,l1", rows);
}

void train_adaptation_stage(const RunConfig& cfg, const std::vector<PreparedSample>& train,
                            const std::string& ckpt_dir) {
    Generator gen = load_generator(cfg, ckpt_dir);
    DensityRegressor reg = load_regressor(cfg, ckpt_dir);

    AdaptationLayer layer =
        AdaptationLayer::identity(cfg.classes, cfg.volume_scale(), cfg.adapt_use_bias);

    // cache upstream outputs once; the adaptation trains on scalars
    std::vector<AdaptSample> data;
    data.reserve(train.size());
    {
        TapeScope no_tape(nullptr);
        for (const auto& p : train) {
            Tensor probs = gen.forward_single(p.image, gen.zero_noise());
            const float v = volume(binarize(probs, cfg.binarize_tau));
            const RegressorOutput r = reg.predict(p.image);
            data.push_back(AdaptSample{r.probabilities, v, r.density, p.energy});
        }
    }

    AdaptTrainConfig tcfg;
    tcfg.lr = cfg.adapt_lr;
    tcfg.epochs = cfg.adapt_epochs;
    tcfg.batch = cfg.adapt_batch;
    tcfg.seed = subseed(cfg.seed, 131);
    auto stats = train_adaptation(layer, data, tcfg);

    std::vector<std::pair<std::string, Tensor>> tensors = nn::snapshot(layer.named_params());
    tensors.emplace_back("v_scale", Tensor::scalar(layer.v_scale));
    tensors.emplace_back("use_bias", Tensor::scalar(layer.use_bias ? 1.0f : 0.0f));
    save_checkpoint((fs::path(ckpt_dir) / "adaptation.ckpt").string(), tensors);

    std::vector<std::vector<double>> rows;
    for (const auto& s : stats) rows.push_back({double(s.iteration), s.l1});
    write_csv((fs::path(ckpt_dir) / "adaptation_loss.csv").string(), "iteration,l1", rows);
}

// ---------------------------------------------------------------------------
// loading
// ---------------------------------------------------------------------------

namespace {

std::map<std::string, Tensor> with_prefix_stripped(const std::map<std::string, Tensor>& all,
                                                   const std::string& prefix) {
    std::map<std::string, Tensor> out;
    for (const auto& [name, t] : all) {
        if (name.rfind(prefix, 0) == 0) out.emplace(name.substr(prefix.size()), t);
    }
    return out;
}

} // namespace

Generator load_generator(const RunConfig& cfg, const std::string& ckpt_dir) {
    const std::string path = (fs::path(ckpt_dir) / "gan.ckpt").string();
    auto all = load_checkpoint_required(path);
    Rng init(subseed(cfg.seed, 101));
    Generator gen(cfg.generator_config(), init);
    nn::load_named_params(gen.named_params(), with_prefix_stripped(all, "gen."), "generator");
    return gen;
}

DensityRegressor load_regressor(const RunConfig& cfg, const std::string& ckpt_dir) {
    const std::string path = (fs::path(ckpt_dir) / "regressor.ckpt").string();
    auto all = load_checkpoint_required(path);
    Rng init(subseed(cfg.seed, 111));
    DensityRegressor model(cfg.backbone_config(), init);
    nn::load_named_params(model.named_params(), all, "regressor");
    return model;
}

AdaptationLayer load_adaptation(const RunConfig& cfg, const std::string& ckpt_dir) {
    const std::string path = (fs::path(ckpt_dir) / "adaptation.ckpt").string();
    auto all = load_checkpoint_required(path);
    const float v_scale = all.at("v_scale").item();
    const bool use_bias = all.at("use_bias").item() != 0.0f;
    AdaptationLayer layer = AdaptationLayer::identity(cfg.classes, v_scale, use_bias);
    all.erase("v_scale");
    all.erase("use_bias");
    nn::load_named_params(layer.named_params(), all, "adaptation");
    return layer;
}

DirectEnergyModel load_module2(const RunConfig& cfg, const std::string& ckpt_dir) {
    const std::string path = (fs::path(ckpt_dir) / "module2_direct.ckpt").string();
    auto all = load_checkpoint_required(path);
    Rng init(subseed(cfg.seed, 121));
    DirectEnergyModel model(cfg.backbone_config(), init);
    nn::load_named_params(model.named_params(), all, "module2_direct");
    return model;
}

// ---------------------------------------------------------------------------
// joint fine-tune (optional; gradients flow through all three modules using a
// soft volume, the sum of occupancy probabilities)
// ---------------------------------------------------------------------------

void joint_finetune_stage(const RunConfig& cfg, const std::vector<PreparedSample>& train,
                          const std::string& ckpt_dir) {
    Generator gen = load_generator(cfg, ckpt_dir);
    DensityRegressor reg = load_regressor(cfg, ckpt_dir);
    AdaptationLayer layer = load_adaptation(cfg, ckpt_dir);

    std::vector<Tensor> params;
    for (auto& [n, p] : gen.named_params()) params.push_back(*p);
    for (auto& [n, p] : reg.named_params()) params.push_back(*p);
    params.push_back(layer.weights);
    if (layer.use_bias) params.push_back(layer.bias);
    Adam opt(AdamConfig{cfg.adapt_lr, 0.9f, 0.999f, 1e-8f}, params);

    Rng rng(subseed(cfg.seed, 141));
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const int64_t zhw = cfg.z_res * cfg.image_size * cfg.image_size;
    Tensor ones_col(Shape{zhw, 1}, std::vector<float>(size_t(zhw), 1.0f));

    int64_t iteration = 0;
    for (int64_t epoch = 0; epoch < cfg.joint_epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t pos = 0; pos < order.size(); pos += size_t(cfg.gan_batch)) {
            const size_t b = std::min(size_t(cfg.gan_batch), order.size() - pos);
            std::vector<Tensor> imgs;
            std::vector<float> gts;
            for (size_t k = 0; k < b; ++k) {
                imgs.push_back(train[order[pos + k]].image);
                gts.push_back(train[order[pos + k]].energy);
            }
            Tensor image_batch;
            {
                TapeScope no_tape(nullptr);
                image_batch = nn::stack(imgs);
            }
            Tensor gt(Shape{int64_t(b), 1}, std::move(gts));

            Tape tape;
            TapeScope scope(tape);
            Tensor probs = gen.forward(image_batch, gen.zero_noise(int64_t(b)));
            Tensor soft_v = ops::matmul(ops::reshape(probs, Shape{int64_t(b), zhw}), ones_col);
            Tensor v_norm = ops::mul(soft_v, Tensor::scalar(1.0f / cfg.volume_scale()));
            auto rout = reg.forward(image_batch);
            Tensor pv = ops::concat({rout.probs, v_norm}, 1);
            Tensor refined = layer.refine_batch(pv);
            Tensor w = ops::mul(refined, rout.density);
            Tensor loss = ops::l1_loss(w, gt);
            if (!std::isfinite(loss.item())) {
                throw NumericError("non-finite loss at iteration " + std::to_string(iteration));
            }
            GradMap grads = tape.backward(loss);
            std::vector<std::vector<float>> g;
            for (const Tensor& p : params) g.push_back(grads.get_or_zero(p));
            opt.step(params, g);
            ++iteration;
        }
        std::cout << "joint: epoch " << epoch + 1 << "/" << cfg.joint_epochs << " done\n";
    }

    // persist all three modules with the fine-tuned weights
    {
        auto tensors = nn::snapshot(gen.named_params());
        for (auto& [name, t] : tensors) name = "gen." + name;
        Rng init_d(subseed(cfg.seed, 102));
        Discriminator disc(cfg.generator_config(), init_d);
        auto all = load_checkpoint_required((fs::path(ckpt_dir) / "gan.ckpt").string());
        nn::load_named_params(disc.named_params(), with_prefix_stripped(all, "disc."), "discriminator");
        for (auto& [name, t] : nn::snapshot(disc.named_params())) tensors.emplace_back("disc." + name, t);
        save_checkpoint((fs::path(ckpt_dir) / "gan.ckpt").string(), tensors);
    }
    save_checkpoint((fs::path(ckpt_dir) / "regressor.ckpt").string(),
                    nn::snapshot(reg.named_params()));
    {
        auto tensors = nn::snapshot(layer.named_params());
        tensors.emplace_back("v_scale", Tensor::scalar(layer.v_scale));
        tensors.emplace_back("use_bias", Tensor::scalar(layer.use_bias ? 1.0f : 0.0f));
        save_checkpoint((fs::path(ckpt_dir) / "adaptation.ckpt").string(), tensors);
    }
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

namespace {

EvalOutput finish_eval(std::vector<double> preds, std::vector<double> gts,
                       std::vector<ScatterPoint> points, std::vector<EnergyEstimate> estimates) {
    EvalOutput out;
    out.report = compute_metrics(preds, gts);
    out.points = std::move(points);
    out.estimates = std::move(estimates);
    return out;
}

} // namespace

EvalOutput evaluate_full(const RunConfig& cfg, const std::string& ckpt_dir,
                         const std::vector<EvalSample>& test) {
    Generator gen = load_generator(cfg, ckpt_dir);
    DensityRegressor reg = load_regressor(cfg, ckpt_dir);
    AdaptationLayer layer = load_adaptation(cfg, ckpt_dir);

    std::vector<double> preds, gts;
    std::vector<ScatterPoint> points;
    std::vector<EnergyEstimate> estimates;
    for (const EvalSample& s : test) {
        EnergyEstimate e = estimate_energy(s.image, gen, reg, layer, cfg.binarize_tau, s.id);
        preds.push_back(e.energy_kcal);
        gts.push_back(s.energy);
        points.push_back(ScatterPoint{e.energy_kcal, s.energy});
        estimates.push_back(std::move(e));
    }
    return finish_eval(std::move(preds), std::move(gts), std::move(points), std::move(estimates));
}

EvalOutput evaluate_module1_2(const RunConfig& cfg, const std::string& ckpt_dir,
                              const std::vector<EvalSample>& test) {
    Generator gen = load_generator(cfg, ckpt_dir);
    DensityRegressor reg = load_regressor(cfg, ckpt_dir);
    const AdaptationLayer identity =
        AdaptationLayer::identity(cfg.classes, cfg.volume_scale(), false);

    std::vector<double> preds, gts;
    std::vector<ScatterPoint> points;
    std::vector<EnergyEstimate> estimates;
    for (const EvalSample& s : test) {
        EnergyEstimate e = estimate_energy(s.image, gen, reg, identity, cfg.binarize_tau, s.id);
        preds.push_back(e.energy_kcal);
        gts.push_back(s.energy);
        points.push_back(ScatterPoint{e.energy_kcal, s.energy});
        estimates.push_back(std::move(e));
    }
    return finish_eval(std::move(preds), std::move(gts), std::move(points), std::move(estimates));
}

EvalOutput evaluate_module2(const RunConfig& cfg, const std::string& ckpt_dir,
                            const std::vector<EvalSample>& test) {
    DirectEnergyModel model = load_module2(cfg, ckpt_dir);
    std::vector<double> preds, gts;
    std::vector<ScatterPoint> points;
    for (const EvalSample& s : test) {
        const double w = model.predict_energy(s.image);
        preds.push_back(w);
        gts.push_back(s.energy);
        points.push_back(ScatterPoint{w, s.energy});
    }
    return finish_eval(std::move(preds), std::move(gts), std::move(points), {});
}

EvalOutput evaluate_oracle(const std::vector<EvalSample>& test) {
    std::vector<double> preds, gts;
    std::vector<ScatterPoint> points;
    for (const EvalSample& s : test) {
        preds.push_back(s.energy);
        gts.push_back(s.energy);
        points.push_back(ScatterPoint{double(s.energy), double(s.energy)});
    }
    return finish_eval(std::move(preds), std::move(gts), std::move(points), {});
}

// ---------------------------------------------------------------------------
// run record
// ---------------------------------------------------------------------------

std::string version_string() { return "voxcal-0.1.0"; }

RunRecord::RunRecord(const RunConfig& cfg) : config_json_(cfg.to_json_text()) {}

void RunRecord::add_stage(const std::string& name, double seconds) {
    stages_.emplace_back(name, seconds);
}

void RunRecord::set_summary_metric(const std::string& key, double value) {
    summary_.emplace_back(key, value);
}

void RunRecord::write(const std::string& report_dir) const {
    fs::create_directories(report_dir);
    ordered_json j;
    j["version"] = version_string();
    j["config"] = json::parse(config_json_);
    j["stage_seconds"] = ordered_json::object();
    for (const auto& [name, sec] : stages_) j["stage_seconds"][name] = sec;
    j["summary"] = ordered_json::object();
    for (const auto& [name, v] : summary_) j["summary"][name] = v;

    const fs::path path = fs::path(report_dir) / "run_record.json";
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << j.dump(2) << "\n";
}

} // namespace pipeline

} // namespace voxcal
