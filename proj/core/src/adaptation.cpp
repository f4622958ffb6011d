// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/adaptation.hpp"

#include <cmath>

#include <json.hpp>

namespace voxcal {

AdaptationLayer AdaptationLayer::identity(int64_t classes, float v_scale, bool use_bias) {
    if (classes < 1) throw InvalidArgument("adaptation: need at least one class");
    if (!(v_scale > 0.0f)) throw InvalidArgument("adaptation: v_scale must be positive");
    AdaptationLayer l;
    std::vector<float> w(size_t(classes + 1), 0.0f);
    w.back() = 1.0f;
    l.weights = Tensor::param(Shape{classes + 1}, std::move(w));
    l.bias = Tensor::param(Shape{1}, std::vector<float>{0.0f});
    l.use_bias = use_bias;
    l.v_scale = v_scale;
    return l;
}

float AdaptationLayer::refine(std::span<const float> p, float v) const {
    if (int64_t(p.size()) != classes()) {
        throw InvalidArgument("adaptation: expected " + std::to_string(classes()) +
                              " probabilities, got " + std::to_string(p.size()));
    }
    const auto w = weights.data();
    float acc = use_bias ? bias.at(0) : 0.0f;
    for (size_t i = 0; i < p.size(); ++i) acc += w[i] * p[i];
    acc += w[p.size()] * (v / v_scale);
    return acc * v_scale;
}

Tensor AdaptationLayer::refine_batch(const Tensor& pv_norm) const {
    if (pv_norm.dim() != 2 || pv_norm.shape()[1] != classes() + 1) {
        throw InvalidArgument("adaptation: rows must be [N," + std::to_string(classes() + 1) +
                              "], got " + shape_str(pv_norm.shape()));
    }
    Tensor col = ops::reshape(weights, Shape{classes() + 1, 1});
    Tensor f = ops::matmul(pv_norm, col);
    if (use_bias) f = ops::add(f, bias);
    return ops::mul(f, Tensor::scalar(v_scale));
}

nn::NamedParams AdaptationLayer::named_params() {
    nn::NamedParams out;
    out.emplace_back("weights", &weights);
    out.emplace_back("bias", &bias);
    return out;
}

std::string energy_estimate_json(const EnergyEstimate& e) {
    nlohmann::ordered_json j;
    j["sample_id"] = e.sample_id;
    j["p"] = e.probabilities;
    j["v"] = e.volume_voxels;
    j["v_refined"] = e.volume_refined;
    j["d"] = e.density;
    j["w_kcal"] = e.energy_kcal;
    return j.dump(2) + "\n";
}

EnergyEstimate estimate_energy(const Tensor& image, const Generator& gen,
                               const DensityRegressor& reg, const AdaptationLayer& adapt,
                               float binarize_tau, const std::string& sample_id) {
    TapeScope no_tape(nullptr);

    Tensor probs = gen.forward_single(image, gen.zero_noise());
    const VoxelGrid grid = binarize(probs, binarize_tau);
    const float v = volume(grid);

    const RegressorOutput r = reg.predict(image);

    EnergyEstimate e;
    e.sample_id = sample_id;
    e.probabilities = r.probabilities;
    e.volume_voxels = v;
    e.volume_refined = adapt.refine(r.probabilities, v);
    e.density = r.density;
    e.energy_kcal = e.density * e.volume_refined;
    return e;
}

std::vector<AdaptIterStats> train_adaptation(AdaptationLayer& layer,
                                             const std::vector<AdaptSample>& dataset,
                                             const AdaptTrainConfig& cfg) {
    if (dataset.empty()) throw InvalidArgument("train_adaptation: empty dataset");
    const int64_t K = layer.classes();
    for (const AdaptSample& s : dataset) {
        if (int64_t(s.p.size()) != K) {
            throw InvalidArgument("train_adaptation: sample has " + std::to_string(s.p.size()) +
                                  " probabilities, expected " + std::to_string(K));
        }
    }

    std::vector<Tensor> params;
    params.push_back(layer.weights);
    if (layer.use_bias) params.push_back(layer.bias);
    Adam opt(AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8f}, params);

    Rng rng(cfg.seed);
    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<AdaptIterStats> stats;
    int64_t iteration = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t pos = 0; pos < order.size(); pos += size_t(cfg.batch)) {
            const size_t b = std::min(size_t(cfg.batch), order.size() - pos);
            std::vector<float> rows, dens, gts;
            rows.reserve(b * size_t(K + 1));
            for (size_t k = 0; k < b; ++k) {
                const AdaptSample& s = dataset[order[pos + k]];
                rows.insert(rows.end(), s.p.begin(), s.p.end());
                rows.push_back(s.v / layer.v_scale);
                dens.push_back(s.d);
                gts.push_back(s.energy_gt);
            }
            Tensor pv(Shape{int64_t(b), K + 1}, std::move(rows));
            Tensor d(Shape{int64_t(b), 1}, std::move(dens));
            Tensor gt(Shape{int64_t(b), 1}, std::move(gts));

            Tape tape;
            TapeScope scope(tape);
            Tensor refined = layer.refine_batch(pv);
            Tensor w = ops::mul(refined, d);
            Tensor loss = ops::l1_loss(w, gt);
            const float loss_v = loss.item();
            if (!std::isfinite(loss_v)) {
                throw NumericError("non-finite loss at iteration " + std::to_string(iteration));
            }

            GradMap grads = tape.backward(loss);
            std::vector<std::vector<float>> g;
            for (const Tensor& p : params) g.push_back(grads.get_or_zero(p));
            opt.step(params, g);

            stats.push_back(AdaptIterStats{iteration, loss_v});
            ++iteration;
        }
    }
    return stats;
}

} // namespace voxcal
