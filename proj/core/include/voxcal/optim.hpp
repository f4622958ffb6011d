// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <cstdint>
#include <vector>

#include "voxcal/tensor.hpp"

namespace voxcal {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

/// Adam with bias correction. Holds first/second moment buffers per parameter;
/// parameters are identified positionally and must keep their shapes.
class Adam {
public:
    Adam(AdamConfig cfg, const std::vector<Tensor>& params);

    /// Applies one update in place. Every parameter must have a gradient entry
    /// in `grads`; a missing entry is rejected.
    void step(std::vector<Tensor>& params, const GradMap& grads);

    /// Same update, but with gradients listed positionally (use
    /// GradMap::get_or_zero when a parameter may be outside the loss graph).
    void step(std::vector<Tensor>& params, const std::vector<std::vector<float>>& grads);

    int64_t step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::vector<std::vector<float>> m_, v_;
    int64_t step_ = 0;
};

} // namespace voxcal
