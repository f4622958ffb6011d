// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/regressor.hpp"

#include <cmath>

namespace voxcal {

namespace {

void check_finite_loss(float v, int64_t iteration) {
    if (!std::isfinite(v)) {
        throw NumericError("non-finite loss at iteration " + std::to_string(iteration));
    }
}

std::vector<nn::Conv2d> make_trunk(const BackboneConfig& cfg, Rng& rng,
                                   std::vector<nn::InstanceNorm>& norms) {
    std::vector<nn::Conv2d> blocks;
    int64_t in_ch = 3;
    for (int64_t ch : cfg.channels) {
        blocks.push_back(nn::Conv2d::make(rng, in_ch, ch, 3, 2, 1, nn::Init::He));
        norms.push_back(nn::InstanceNorm::make(ch));
        in_ch = ch;
    }
    return blocks;
}

Tensor run_trunk(const std::vector<nn::Conv2d>& blocks, const std::vector<nn::InstanceNorm>& norms,
                 const BackboneConfig& cfg, const Tensor& images) {
    if (images.dim() != 4 || images.shape()[1] != 3 || images.shape()[2] != cfg.image_size ||
        images.shape()[3] != cfg.image_size) {
        throw InvalidArgument("backbone: images must be [N,3," + std::to_string(cfg.image_size) + "," +
                              std::to_string(cfg.image_size) + "], got " + shape_str(images.shape()));
    }
    Tensor h = images;
    for (size_t i = 0; i < blocks.size(); ++i) {
        h = ops::relu(norms[i].forward(blocks[i].forward(h)));
    }
    return nn::global_avg_pool(h); // [N,F]
}

} // namespace

void BackboneConfig::validate() const {
    if (classes < 2) throw InvalidArgument("backbone: need K >= 2 classes");
    if (channels.empty()) throw InvalidArgument("backbone: need at least one conv block");
    if (feature_width() < classes) {
        throw InvalidArgument("backbone: feature width " + std::to_string(feature_width()) +
                              " smaller than class count " + std::to_string(classes));
    }
    const int64_t final_spatial = image_size >> channels.size();
    if (final_spatial < 2) {
        throw InvalidArgument("backbone: image size " + std::to_string(image_size) +
                              " too small for " + std::to_string(channels.size()) + " stride-2 blocks");
    }
}

DensityRegressor::DensityRegressor(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    blocks_ = make_trunk(cfg_, rng, norms_);
    cls_head_ = nn::Linear::make(rng, cfg_.feature_width(), cfg_.classes, nn::Init::Xavier);
    density_head_ = nn::Linear::make(rng, cfg_.feature_width(), 1, nn::Init::Xavier);
}

Tensor DensityRegressor::trunk(const Tensor& images) const {
    return run_trunk(blocks_, norms_, cfg_, images);
}

DensityRegressor::BatchOut DensityRegressor::forward(const Tensor& images) const {
    Tensor feat = trunk(images);
    BatchOut out;
    out.logits = cls_head_.forward(feat);
    out.probs = ops::softmax(out.logits, 1);
    out.density = ops::softplus(density_head_.forward(feat));
    return out;
}

RegressorOutput DensityRegressor::predict(const Tensor& image) const {
    TapeScope no_tape(nullptr);
    Tensor img = ops::reshape(image, Shape{1, 3, cfg_.image_size, cfg_.image_size});
    BatchOut out = forward(img);
    RegressorOutput r;
    r.probabilities.assign(out.probs.data().begin(), out.probs.data().end());
    r.density = out.density.item();
    return r;
}

nn::NamedParams DensityRegressor::named_params() {
    nn::NamedParams out;
    for (size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].collect("block" + std::to_string(i), out);
        norms_[i].collect("block" + std::to_string(i) + ".norm", out);
    }
    cls_head_.collect("cls_head", out);
    density_head_.collect("density_head", out);
    return out;
}

std::vector<RegIterStats> train_regressor(DensityRegressor& model,
                                          const std::vector<RegSample>& dataset,
                                          const RegTrainConfig& cfg,
                                          const std::function<void(int64_t)>& on_epoch_end) {
    if (dataset.empty()) throw InvalidArgument("train_regressor: empty dataset");
    const int64_t K = model.config().classes;
    for (const RegSample& s : dataset) {
        if (s.label < 0 || s.label >= K) {
            throw InvalidArgument("train_regressor: label " + std::to_string(s.label) +
                                  " out of range [0," + std::to_string(K) + ")");
        }
    }

    nn::NamedParams named = model.named_params();
    std::vector<Tensor> params = nn::param_tensors(named);
    Adam opt(AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8f}, params);

    Rng rng(cfg.seed);
    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<RegIterStats> stats;
    int64_t iteration = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t pos = 0; pos < order.size(); pos += size_t(cfg.batch)) {
            const size_t b = std::min(size_t(cfg.batch), order.size() - pos);
            std::vector<Tensor> imgs;
            std::vector<int64_t> labels;
            std::vector<float> densities;
            for (size_t k = 0; k < b; ++k) {
                const RegSample& s = dataset[order[pos + k]];
                imgs.push_back(s.image);
                labels.push_back(s.label);
                densities.push_back(s.density);
            }
            Tensor image_batch;
            {
                TapeScope no_tape(nullptr);
                image_batch = nn::stack(imgs);
            }
            Tensor density_targets(Shape{int64_t(b), 1}, std::move(densities));

            Tape tape;
            TapeScope scope(tape);
            auto out = model.forward(image_batch);
            Tensor ce = ops::cross_entropy(out.logits, labels);
            Tensor l1d = ops::l1_loss(out.density, density_targets);
            Tensor total = ops::add(ce, ops::mul(l1d, Tensor::scalar(cfg.beta_density)));

            const float ce_v = ce.item(), l1_v = l1d.item(), total_v = total.item();
            check_finite_loss(total_v, iteration);

            GradMap grads = tape.backward(total);
            std::vector<std::vector<float>> g;
            g.reserve(params.size());
            for (const Tensor& p : params) g.push_back(grads.get_or_zero(p));
            opt.step(params, g);

            stats.push_back(RegIterStats{iteration, ce_v, l1_v, total_v});
            ++iteration;
        }
        if (on_epoch_end) on_epoch_end(epoch);
    }
    return stats;
}

// ---------------------------------------------------------------------------
// DirectEnergyModel
// ---------------------------------------------------------------------------

DirectEnergyModel::DirectEnergyModel(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    blocks_ = make_trunk(cfg_, rng, norms_);
    energy_head_ = nn::Linear::make(rng, cfg_.feature_width(), 1, nn::Init::Xavier);
    scale_store_ = Tensor(Shape{1}, std::vector<float>{1.0f});
}

Tensor DirectEnergyModel::forward_normalized(const Tensor& images) const {
    Tensor feat = run_trunk(blocks_, norms_, cfg_, images);
    return ops::softplus(energy_head_.forward(feat));
}

float DirectEnergyModel::predict_energy(const Tensor& image) const {
    TapeScope no_tape(nullptr);
    Tensor img = ops::reshape(image, Shape{1, 3, cfg_.image_size, cfg_.image_size});
    return forward_normalized(img).item() * energy_scale();
}

nn::NamedParams DirectEnergyModel::named_params() {
    nn::NamedParams out;
    for (size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].collect("block" + std::to_string(i), out);
        norms_[i].collect("block" + std::to_string(i) + ".norm", out);
    }
    energy_head_.collect("energy_head", out);
    out.emplace_back("energy_scale", &scale_store_);
    return out;
}

std::vector<RegIterStats> train_direct_energy(DirectEnergyModel& model,
                                              const std::vector<EnergySample>& dataset,
                                              const RegTrainConfig& cfg,
                                              const std::function<void(int64_t)>& on_epoch_end) {
    if (dataset.empty()) throw InvalidArgument("train_direct_energy: empty dataset");

    double mean_energy = 0.0;
    for (const EnergySample& s : dataset) mean_energy += double(s.energy);
    mean_energy /= double(dataset.size());
    if (!(mean_energy > 0.0)) throw InvalidArgument("train_direct_energy: mean energy must be > 0");
    model.set_energy_scale(float(mean_energy));

    nn::NamedParams named = model.named_params();
    std::vector<Tensor> params;
    for (auto& [name, ptr] : named) {
        if (name != "energy_scale") params.push_back(*ptr); // the scale is data, not a weight
    }
    Adam opt(AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8f}, params);

    Rng rng(cfg.seed);
    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<RegIterStats> stats;
    int64_t iteration = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t pos = 0; pos < order.size(); pos += size_t(cfg.batch)) {
            const size_t b = std::min(size_t(cfg.batch), order.size() - pos);
            std::vector<Tensor> imgs;
            std::vector<float> targets;
            for (size_t k = 0; k < b; ++k) {
                const EnergySample& s = dataset[order[pos + k]];
                imgs.push_back(s.image);
                targets.push_back(s.energy / model.energy_scale());
            }
            Tensor image_batch;
            {
                TapeScope no_tape(nullptr);
                image_batch = nn::stack(imgs);
            }
            Tensor target_batch(Shape{int64_t(b), 1}, std::move(targets));

            Tape tape;
            TapeScope scope(tape);
            Tensor pred = model.forward_normalized(image_batch);
            Tensor loss = ops::l1_loss(pred, target_batch);
            const float loss_v = loss.item();
            check_finite_loss(loss_v, iteration);

            GradMap grads = tape.backward(loss);
            std::vector<std::vector<float>> g;
            g.reserve(params.size());
            for (const Tensor& p : params) g.push_back(grads.get_or_zero(p));
            opt.step(params, g);

            stats.push_back(RegIterStats{iteration, 0.0f, loss_v, loss_v});
            ++iteration;
        }
        if (on_epoch_end) on_epoch_end(epoch);
    }
    return stats;
}

} // namespace voxcal
