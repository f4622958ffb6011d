// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <functional>

#include "voxcal/nn.hpp"
#include "voxcal/optim.hpp"

namespace voxcal {

/// Small from-scratch CNN trunk: stride-2 conv blocks with instance norm and
/// relu, then global average pooling. Both output heads branch from the
/// pooled feature.
struct BackboneConfig {
    int64_t image_size = 32;
    std::vector<int64_t> channels = {16, 32, 64, 128}; // one stride-2 block each
    int64_t classes = 4;                               // K

    void validate() const;
    int64_t feature_width() const { return channels.back(); }
};

struct RegressorOutput {
    std::vector<float> probabilities; // length K, sums to 1
    float density;                    // >= 0 (softplus head)
};

class DensityRegressor {
public:
    DensityRegressor(const BackboneConfig& cfg, Rng& rng);

    struct BatchOut {
        Tensor logits;  // [N,K]
        Tensor probs;   // [N,K]
        Tensor density; // [N,1], softplus
    };
    /// images [N,3,S,S] in [0,1]
    BatchOut forward(const Tensor& images) const;

    /// Single image [3,S,S].
    RegressorOutput predict(const Tensor& image) const;

    nn::NamedParams named_params();
    const BackboneConfig& config() const { return cfg_; }

private:
    Tensor trunk(const Tensor& images) const;
    friend class DirectEnergyModel;

    BackboneConfig cfg_;
    std::vector<nn::Conv2d> blocks_;
    std::vector<nn::InstanceNorm> norms_;
    nn::Linear cls_head_;
    nn::Linear density_head_;
};

struct RegSample {
    Tensor image; // [3,S,S]
    int64_t label;
    float density;
};

struct RegTrainConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float beta_density = 1.0f; // weight of the density L1 term
    int64_t epochs = 50;
    int64_t batch = 8;
    uint64_t seed = 0;
};

struct RegIterStats {
    int64_t iteration;
    float ce, density_l1, total;
};

/// Minimizes cross_entropy(p, label) + beta * L1(d, density) with Adam.
std::vector<RegIterStats> train_regressor(DensityRegressor& model,
                                          const std::vector<RegSample>& dataset,
                                          const RegTrainConfig& cfg,
                                          const std::function<void(int64_t)>& on_epoch_end = {});

/// Ablation baseline: the same trunk with one linear head regressing energy
/// directly. Energies are trained in units of `energy_scale` (mean training
/// energy) to keep the head well-conditioned.
class DirectEnergyModel {
public:
    DirectEnergyModel(const BackboneConfig& cfg, Rng& rng);

    Tensor forward_normalized(const Tensor& images) const; // [N,1], softplus
    float predict_energy(const Tensor& image) const;       // rescaled to kcal

    void set_energy_scale(float s) { scale_store_.mutable_data()[0] = s; }
    float energy_scale() const { return scale_store_.at(0); }

    nn::NamedParams named_params(); // includes the scale as "energy_scale"

private:
    BackboneConfig cfg_;
    std::vector<nn::Conv2d> blocks_;
    std::vector<nn::InstanceNorm> norms_;
    nn::Linear energy_head_;
    Tensor scale_store_; // [1], persisted with the weights; not a learned weight
};

struct EnergySample {
    Tensor image;
    float energy;
};

std::vector<RegIterStats> train_direct_energy(DirectEnergyModel& model,
                                              const std::vector<EnergySample>& dataset,
                                              const RegTrainConfig& cfg,
                                              const std::function<void(int64_t)>& on_epoch_end = {});

} // namespace voxcal
