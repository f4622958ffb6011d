// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <span>
#include <string>

#include "voxcal/gan.hpp"
#include "voxcal/regressor.hpp"
#include "voxcal/voxel.hpp"

namespace voxcal {

/// Affine refinement of the voxel volume by the class probabilities:
/// f(p, v) = (sum_i w_i * p_i + w_v * v/v_scale + bias) * v_scale.
/// v_scale (the voxel grid cell count, a power of two) conditions the affine
/// map; with identity initialization (w_v = 1, everything else 0) the
/// refinement is exactly a no-op.
struct AdaptationLayer {
    Tensor weights; // [K+1]: K class weights then the volume weight
    Tensor bias;    // [1]
    bool use_bias = true;
    float v_scale = 1.0f;

    static AdaptationLayer identity(int64_t classes, float v_scale, bool use_bias = true);

    int64_t classes() const { return weights.numel() - 1; }

    /// Plain evaluation (no tape); p must have length K.
    float refine(std::span<const float> p, float v) const;

    /// Tape-friendly evaluation: rows of [p..., v / v_scale] -> refined
    /// volumes [N,1] (already rescaled by v_scale).
    Tensor refine_batch(const Tensor& pv_norm) const;

    nn::NamedParams named_params();
};

/// Full pipeline answer with provenance, one per image.
struct EnergyEstimate {
    std::string sample_id;
    std::vector<float> probabilities; // p
    float volume_voxels = 0.0f;       // v, voxel units
    float volume_refined = 0.0f;      // f(p, v)
    float density = 0.0f;             // d
    float energy_kcal = 0.0f;         // w = d * f(p, v)
};

/// JSON object with fields sample_id, p, v, v_refined, d, w_kcal.
std::string energy_estimate_json(const EnergyEstimate& e);

/// Runs generator -> binarize -> volume -> regressor -> refine -> multiply.
/// The RGB image is the only runtime input; inference uses zero noise and no
/// dropout, so it is deterministic.
EnergyEstimate estimate_energy(const Tensor& image, const Generator& gen,
                               const DensityRegressor& reg, const AdaptationLayer& adapt,
                               float binarize_tau = 0.5f, const std::string& sample_id = "");

struct AdaptSample {
    std::vector<float> p; // class probabilities from the frozen regressor
    float v;              // voxel volume from the frozen generator
    float d;              // density from the frozen regressor
    float energy_gt;      // groundtruth energy
};

struct AdaptTrainConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    int64_t epochs = 20;
    int64_t batch = 16;
    uint64_t seed = 0;
};

struct AdaptIterStats {
    int64_t iteration;
    float l1;
};

/// Minimizes L1(d * f(p, v), groundtruth energy) over the adaptation
/// parameters only; upstream models stay frozen (their outputs arrive here as
/// cached constants). Zero epochs returns the layer untouched.
std::vector<AdaptIterStats> train_adaptation(AdaptationLayer& layer,
                                             const std::vector<AdaptSample>& dataset,
                                             const AdaptTrainConfig& cfg);

} // namespace voxcal
