// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/optim.hpp"

#include <cmath>

namespace voxcal {

Adam::Adam(AdamConfig cfg, const std::vector<Tensor>& params) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Tensor& p : params) {
        m_.emplace_back(size_t(p.numel()), 0.0f);
        v_.emplace_back(size_t(p.numel()), 0.0f);
    }
}

void Adam::step(std::vector<Tensor>& params, const GradMap& grads) {
    std::vector<std::vector<float>> g;
    g.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        const auto* gp = grads.find(params[i]);
        if (!gp) {
            throw InvalidArgument("optimizer_step: parameter " + std::to_string(i) +
                                  " has no gradient entry");
        }
        g.push_back(*gp);
    }
    step(params, g);
}

void Adam::step(std::vector<Tensor>& params, const std::vector<std::vector<float>>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw InvalidArgument("optimizer_step: parameter/gradient count mismatch");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(double(cfg_.beta1), double(step_));
    const double bc2 = 1.0 - std::pow(double(cfg_.beta2), double(step_));
    for (size_t i = 0; i < params.size(); ++i) {
        if (int64_t(grads[i].size()) != params[i].numel()) {
            throw InvalidArgument("optimizer_step: gradient size mismatch for parameter " +
                                  std::to_string(i));
        }
        float* p = params[i].mutable_data().data();
        float* m = m_[i].data();
        float* v = v_[i].data();
        const float* g = grads[i].data();
        const size_t n = grads[i].size();
        for (size_t j = 0; j < n; ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * g[j] * g[j];
            const float mhat = float(double(m[j]) / bc1);
            const float vhat = float(double(v[j]) / bc2);
            p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

} // namespace voxcal
