// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "voxcal/adaptation.hpp"
#include "voxcal/gan.hpp"
#include "voxcal/metrics.hpp"
#include "voxcal/regressor.hpp"
#include "voxcal/synth.hpp"

namespace voxcal {

/// Whole-run configuration. One JSON file; command-line flags override keys.
struct RunConfig {
    uint64_t seed = 0;
    int64_t image_size = 32;
    int64_t z_res = 32;
    int64_t classes = 4;

    // dataset
    int64_t dataset_n = 400;
    double train_ratio = 0.845;
    DepthSimParams depth;

    // module 1 (shape GAN)
    float gan_lambda_l1 = 100.0f;
    float gan_lr = 2e-4f;
    float gan_beta1 = 0.5f;
    int64_t gan_epochs = 50;
    int64_t gan_batch = 1;
    int64_t gan_levels = 4;
    int64_t gan_base_channels = 16;
    int64_t gan_noise_len = 16;
    float gan_dropout = 0.5f;

    // module 2 (density regressor)
    float reg_lr = 1e-3f;
    float reg_beta_density = 1.0f;
    int64_t reg_epochs = 50;
    int64_t reg_batch = 8;
    std::vector<int64_t> backbone_channels = {16, 32, 64, 128};

    // module 3 (energy adaptation)
    float adapt_lr = 1e-3f;
    int64_t adapt_epochs = 20;
    int64_t adapt_batch = 16;
    bool adapt_use_bias = true;

    float binarize_tau = 0.5f;
    bool joint_finetune = false;
    int64_t joint_epochs = 2;

    std::string dataset_dir = "data";
    std::string checkpoint_dir = "checkpoints";
    std::string report_dir = "report";

    void validate() const;

    static RunConfig defaults();
    static RunConfig from_json_file(const std::string& path);
    static RunConfig from_json_text(const std::string& text);
    std::string to_json_text() const;

    /// Applies "dotted.key=value" overrides onto the JSON form, e.g.
    /// "gan.epochs=6" or "paths.report_dir=out".
    static std::string apply_overrides(const std::string& json_text,
                                       const std::vector<std::string>& overrides);

    GeneratorConfig generator_config() const;
    BackboneConfig backbone_config() const;
    DatasetConfig dataset_config() const;
    float volume_scale() const; // z_res^3, the adaptation conditioning constant
};

namespace pipeline {

/// A dataset row pulled through the depth pipeline: image tensor, reference
/// voxel (from inpaint -> mask -> normalize -> voxelize), groundtruth fields.
struct PreparedSample {
    std::string id;
    Tensor image;     // [3,S,S]
    Tensor ref_voxel; // [Z,S,S] hard 0/1
    int64_t class_id = 0;
    float density = 0.0f;
    float true_volume = 0.0f;
    float energy = 0.0f;
};

std::vector<PreparedSample> prepare_samples(const LoadedDataset& ds, const std::string& split,
                                            int64_t z_res);

/// Image-only variant (no depth touched); used for inference-side evaluation.
struct EvalSample {
    std::string id;
    Tensor image;
    float energy = 0.0f;
};

std::vector<EvalSample> load_eval_samples(const LoadedDataset& ds, const std::string& split);

// Stage runners. Each writes its checkpoint and a loss CSV under ckpt_dir and
// returns nothing; missing prerequisites throw MissingArtifact naming the file.
void run_synth(const RunConfig& cfg, bool force);
void train_gan_stage(const RunConfig& cfg, const std::vector<PreparedSample>& train,
                     const std::string& ckpt_dir);
void train_regressor_stage(const RunConfig& cfg, const std::vector<PreparedSample>& train,
                           const std::string& ckpt_dir);
void train_adaptation_stage(const RunConfig& cfg, const std::vector<PreparedSample>& train,
                            const std::string& ckpt_dir);
void train_module2_stage(const RunConfig& cfg, const std::vector<PreparedSample>& train,
                         const std::string& ckpt_dir);
void joint_finetune_stage(const RunConfig& cfg, const std::vector<PreparedSample>& train,
                          const std::string& ckpt_dir);

// Checkpoint-backed model loading.
Generator load_generator(const RunConfig& cfg, const std::string& ckpt_dir);
DensityRegressor load_regressor(const RunConfig& cfg, const std::string& ckpt_dir);
AdaptationLayer load_adaptation(const RunConfig& cfg, const std::string& ckpt_dir);
DirectEnergyModel load_module2(const RunConfig& cfg, const std::string& ckpt_dir);

struct EvalOutput {
    MetricsReport report;
    std::vector<ScatterPoint> points;
    std::vector<EnergyEstimate> estimates;
};

/// full: generator + regressor + trained adaptation (w = d * f(p, v)).
EvalOutput evaluate_full(const RunConfig& cfg, const std::string& ckpt_dir,
                         const std::vector<EvalSample>& test);
/// module1_2: unrefined volume (identity adaptation).
EvalOutput evaluate_module1_2(const RunConfig& cfg, const std::string& ckpt_dir,
                              const std::vector<EvalSample>& test);
/// module2_only: direct energy regression from the image.
EvalOutput evaluate_module2(const RunConfig& cfg, const std::string& ckpt_dir,
                            const std::vector<EvalSample>& test);
/// predictions == groundtruth; validates report plumbing end to end.
EvalOutput evaluate_oracle(const std::vector<EvalSample>& test);

/// Stage timings + summary, persisted as report_dir/run_record.json.
class RunRecord {
public:
    explicit RunRecord(const RunConfig& cfg);
    void add_stage(const std::string& name, double seconds);
    void set_summary_metric(const std::string& key, double value);
    void write(const std::string& report_dir) const;

private:
    std::string config_json_;
    std::vector<std::pair<std::string, double>> stages_;
    std::vector<std::pair<std::string, double>> summary_;
};

std::string version_string();

} // namespace pipeline

} // namespace voxcal
