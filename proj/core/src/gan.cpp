// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/gan.hpp"

#include <cmath>

namespace voxcal {

namespace {

bool is_pow2(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

void check_finite(std::initializer_list<float> vals, int64_t iteration) {
    for (float v : vals) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite loss at iteration " + std::to_string(iteration));
        }
    }
}

} // namespace

void GeneratorConfig::validate() const {
    if (!is_pow2(resolution)) {
        throw InvalidArgument("generator: resolution must be a power of two, got " +
                              std::to_string(resolution));
    }
    if (z_res != resolution) {
        throw InvalidArgument("generator: z_res (" + std::to_string(z_res) +
                              ") must equal resolution (" + std::to_string(resolution) + ")");
    }
    if (levels < 2) throw InvalidArgument("generator: need at least 2 encoder levels");
    if ((resolution >> levels) < 2) {
        throw InvalidArgument("generator: resolution " + std::to_string(resolution) + " too small for " +
                              std::to_string(levels) + " levels (bottleneck would drop below 2x2)");
    }
    for (int64_t i = 0; i + 1 < levels; ++i) {
        const int64_t spatial = resolution >> (i + 1);
        if (enc_channels(i) % spatial != 0) {
            throw InvalidArgument("generator: encoder level " + std::to_string(i) + " has " +
                                  std::to_string(enc_channels(i)) + " channels, not divisible by its " +
                                  std::to_string(spatial) + " depth slices");
        }
    }
    if (enc_channels(levels - 1) % bottleneck_size() != 0) {
        throw InvalidArgument("generator: bottleneck channels not divisible by bottleneck size");
    }
    if (noise_len < 0 || dropout_rate < 0.0f || dropout_rate >= 1.0f) {
        throw InvalidArgument("generator: bad noise/dropout settings");
    }
}

int64_t GeneratorConfig::enc_channels(int64_t level) const {
    return std::min(base_channels << level, max_channels);
}

Tensor skip_reshape_2d_to_3d(const Tensor& feat, int64_t depth_slices) {
    if (feat.dim() != 3 && feat.dim() != 4) {
        throw InvalidArgument("skip_reshape_2d_to_3d: need [C,h,w] or [N,C,h,w], got " +
                              shape_str(feat.shape()));
    }
    const bool batched = feat.dim() == 4;
    const int64_t c = feat.shape()[batched ? 1 : 0];
    if (depth_slices < 1 || c % depth_slices != 0) {
        throw InvalidArgument("skip_reshape_2d_to_3d: channel count " + std::to_string(c) +
                              " not divisible by " + std::to_string(depth_slices) + " depth slices");
    }
    const int64_t h = feat.shape()[batched ? 2 : 1];
    const int64_t w = feat.shape()[batched ? 3 : 2];
    Shape out = batched ? Shape{feat.shape()[0], c / depth_slices, depth_slices, h, w}
                        : Shape{c / depth_slices, depth_slices, h, w};
    return ops::reshape(feat, out);
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

Generator::Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int64_t L = cfg_.levels;
    const int64_t sb = cfg_.bottleneck_size();

    int64_t in_ch = 3;
    for (int64_t i = 0; i < L; ++i) {
        enc_.push_back(nn::Conv2d::make(rng, in_ch, cfg_.enc_channels(i), 4, 2, 1, nn::Init::He));
        if (i > 0) enc_norm_.push_back(nn::InstanceNorm::make(cfg_.enc_channels(i)));
        in_ch = cfg_.enc_channels(i);
    }

    const int64_t bott_ch = cfg_.enc_channels(L - 1);
    if (cfg_.noise_len > 0) {
        noise_fc_ = nn::Linear::make(rng, cfg_.noise_len, noise_planes_ * sb * sb, nn::Init::Xavier);
    }
    const int64_t fuse_in = bott_ch + (cfg_.noise_len > 0 ? noise_planes_ : 0);
    fuse_ = nn::Conv2d::make(rng, fuse_in, bott_ch, 3, 1, 1, nn::Init::He);
    fuse_norm_ = nn::InstanceNorm::make(bott_ch);

    // decoder level j: spatial 2^j*sb -> 2^(j+1)*sb; skip from encoder level L-2-j
    int64_t dec_in = bott_ch / sb;
    for (int64_t j = 0; j < L; ++j) {
        const int64_t out_ch =
            j <= L - 2 ? cfg_.enc_channels(L - 2 - j) : std::max<int64_t>(cfg_.base_channels / 2, 4);
        dec_.push_back(nn::ConvTranspose3d::make(rng, dec_in, out_ch, 4, 2, 1, nn::Init::He));
        dec_norm_.push_back(nn::InstanceNorm::make(out_ch));
        dec_in = out_ch;
        if (j <= L - 2) {
            const int64_t skip_level = L - 2 - j;
            const int64_t skip_spatial = cfg_.resolution >> (skip_level + 1);
            dec_in += cfg_.enc_channels(skip_level) / skip_spatial;
        }
    }
    head_ = nn::Conv3d::make(rng, dec_in, 1, 3, 1, 1, nn::Init::Xavier);
}

Tensor Generator::zero_noise(int64_t batch) const {
    return Tensor(Shape{batch, std::max<int64_t>(cfg_.noise_len, 1)});
}

Tensor Generator::forward(const Tensor& images, const Tensor& noise, bool training,
                          uint64_t dropout_seed,
                          std::vector<std::pair<std::string, Tensor>>* capture) const {
    if (images.dim() != 4 || images.shape()[1] != 3 || images.shape()[2] != cfg_.resolution ||
        images.shape()[3] != cfg_.resolution) {
        throw InvalidArgument("generator: images must be [N,3," + std::to_string(cfg_.resolution) +
                              "," + std::to_string(cfg_.resolution) + "], got " +
                              shape_str(images.shape()));
    }
    const int64_t n = images.shape()[0];
    const int64_t L = cfg_.levels;
    const int64_t sb = cfg_.bottleneck_size();

    auto cap = [&](const char* name, const Tensor& t) {
        if (capture) capture->emplace_back(name, t);
    };

    // encoder
    std::vector<Tensor> skips;
    Tensor h = images;
    for (int64_t i = 0; i < L; ++i) {
        h = enc_[size_t(i)].forward(h);
        if (i > 0) h = enc_norm_[size_t(i - 1)].forward(h);
        h = ops::leaky_relu(h, 0.2f);
        cap(("enc" + std::to_string(i)).c_str(), h);
        if (i <= L - 2) skips.push_back(h);
    }

    // bottleneck: inject noise as extra channel planes, fuse, lift to 3D
    if (cfg_.noise_len > 0) {
        if (noise.dim() != 2 || noise.shape()[0] != n || noise.shape()[1] != cfg_.noise_len) {
            throw InvalidArgument("generator: noise must be [N," + std::to_string(cfg_.noise_len) +
                                  "], got " + shape_str(noise.shape()));
        }
        Tensor planes = ops::reshape(noise_fc_.forward(noise), Shape{n, noise_planes_, sb, sb});
        h = ops::concat({h, planes}, 1);
    }
    h = ops::leaky_relu(fuse_norm_.forward(fuse_.forward(h)), 0.2f);
    cap("bottleneck2d", h);
    h = skip_reshape_2d_to_3d(h, sb);
    cap("bottleneck3d", h);

    // decoder
    for (int64_t j = 0; j < L; ++j) {
        h = dec_[size_t(j)].forward(h);
        h = dec_norm_[size_t(j)].forward(h);
        h = ops::relu(h);
        if (training && cfg_.dropout_rate > 0.0f && j < 2) {
            h = ops::dropout(h, cfg_.dropout_rate, dropout_seed * 2654435761u + uint64_t(j));
        }
        if (j <= L - 2) {
            const int64_t skip_level = L - 2 - j;
            const int64_t skip_spatial = cfg_.resolution >> (skip_level + 1);
            h = ops::concat({h, skip_reshape_2d_to_3d(skips[size_t(skip_level)], skip_spatial)}, 1);
        }
        cap(("dec" + std::to_string(j)).c_str(), h);
    }

    Tensor logits = head_.forward(h);
    cap("logits", logits);
    return ops::sigmoid(logits);
}

Tensor Generator::forward_single(const Tensor& image, const Tensor& noise) const {
    Tensor img = ops::reshape(image, Shape{1, 3, cfg_.resolution, cfg_.resolution});
    Tensor nz = cfg_.noise_len > 0 ? ops::reshape(noise, Shape{1, cfg_.noise_len}) : noise;
    Tensor probs = forward(img, nz);
    return ops::reshape(probs, Shape{cfg_.z_res, cfg_.resolution, cfg_.resolution});
}

nn::NamedParams Generator::named_params() {
    nn::NamedParams out;
    for (size_t i = 0; i < enc_.size(); ++i) enc_[i].collect("enc" + std::to_string(i), out);
    for (size_t i = 0; i < enc_norm_.size(); ++i)
        enc_norm_[i].collect("enc" + std::to_string(i + 1) + ".norm", out);
    if (cfg_.noise_len > 0) noise_fc_.collect("noise_fc", out);
    fuse_.collect("fuse", out);
    fuse_norm_.collect("fuse.norm", out);
    for (size_t j = 0; j < dec_.size(); ++j) {
        dec_[j].collect("dec" + std::to_string(j), out);
        dec_norm_[j].collect("dec" + std::to_string(j) + ".norm", out);
    }
    head_.collect("head", out);
    return out;
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

Discriminator::Discriminator(const GeneratorConfig& cfg, Rng& rng)
    : resolution_(cfg.resolution), z_res_(cfg.z_res) {
    int64_t levels = 3;
    while ((resolution_ >> levels) < 2) --levels;
    int64_t in_ch = 4; // rgb tiled along z + occupancy
    for (int64_t i = 0; i < levels; ++i) {
        const int64_t out_ch = cfg.base_channels << i;
        blocks_.push_back(nn::Conv3d::make(rng, in_ch, out_ch, 4, 2, 1, nn::Init::He));
        if (i > 0) norms_.push_back(nn::InstanceNorm::make(out_ch));
        in_ch = out_ch;
    }
    head_ = nn::Conv3d::make(rng, in_ch, 1, 3, 1, 1, nn::Init::Xavier);
}

Tensor Discriminator::forward(const Tensor& images, const Tensor& voxels) const {
    if (voxels.dim() != 5 || voxels.shape()[1] != 1) {
        throw InvalidArgument("discriminator: voxels must be [N,1,Z,H,W], got " +
                              shape_str(voxels.shape()));
    }
    if (images.dim() != 4 || images.shape()[0] != voxels.shape()[0]) {
        throw InvalidArgument("discriminator: images " + shape_str(images.shape()) +
                              " do not pair with voxels " + shape_str(voxels.shape()));
    }
    const int64_t n = images.shape()[0];

    // condition on the image by tiling RGB along the Z axis
    Tensor img5 = ops::reshape(images, Shape{n, 3, 1, resolution_, resolution_});
    Tensor tiled = ops::mul(img5, Tensor::ones(Shape{1, 1, z_res_, 1, 1}));
    Tensor h = ops::concat({tiled, voxels}, 1);

    for (size_t i = 0; i < blocks_.size(); ++i) {
        h = blocks_[i].forward(h);
        if (i > 0) h = norms_[i - 1].forward(h);
        h = ops::leaky_relu(h, 0.2f);
    }
    return head_.forward(h);
}

nn::NamedParams Discriminator::named_params() {
    nn::NamedParams out;
    for (size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("block" + std::to_string(i), out);
    for (size_t i = 0; i < norms_.size(); ++i)
        norms_[i].collect("block" + std::to_string(i + 1) + ".norm", out);
    head_.collect("head", out);
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

std::vector<GanIterStats> gan_train(Generator& gen, Discriminator& disc,
                                    const std::vector<GanSample>& dataset, const GanTrainConfig& cfg,
                                    const EpochCallback& on_epoch_end) {
    if (dataset.empty()) throw InvalidArgument("gan_train: empty dataset");
    const GeneratorConfig& gcfg = gen.config();

    nn::NamedParams gen_named = gen.named_params();
    nn::NamedParams disc_named = disc.named_params();
    std::vector<Tensor> gen_params = nn::param_tensors(gen_named);
    std::vector<Tensor> disc_params = nn::param_tensors(disc_named);
    Adam opt_g(AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8f}, gen_params);
    Adam opt_d(AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8f}, disc_params);

    Rng rng(cfg.seed);
    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<GanIterStats> stats;
    int64_t iteration = 0;

    auto collect_grads = [](const std::vector<Tensor>& params, const GradMap& grads) {
        std::vector<std::vector<float>> out;
        out.reserve(params.size());
        for (const Tensor& p : params) out.push_back(grads.get_or_zero(p));
        return out;
    };

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t pos = 0; pos < order.size(); pos += size_t(cfg.batch)) {
            const size_t b = std::min(size_t(cfg.batch), order.size() - pos);
            std::vector<Tensor> imgs, refs;
            imgs.reserve(b);
            refs.reserve(b);
            for (size_t k = 0; k < b; ++k) {
                const GanSample& s = dataset[order[pos + k]];
                imgs.push_back(s.image);
                refs.push_back(ops::reshape(s.ref_voxel,
                                            Shape{1, gcfg.z_res, gcfg.resolution, gcfg.resolution}));
            }

            Tensor noise(Shape{int64_t(b), std::max<int64_t>(gcfg.noise_len, 1)});
            if (gcfg.noise_len > 0) {
                for (float& v : noise.mutable_data()) v = float(rng.normal());
            }

            Tensor image_batch, ref_batch;
            {
                TapeScope no_tape(nullptr);
                image_batch = nn::stack(imgs);
                ref_batch = nn::stack(refs);
            }

            // discriminator step (generator output detached)
            float d_loss_v;
            {
                Tensor fake;
                {
                    TapeScope no_tape(nullptr);
                    fake = gen.forward(image_batch, noise, true, uint64_t(iteration) * 2);
                }
                Tape tape;
                TapeScope scope(tape);
                Tensor d_real = disc.forward(image_batch, ref_batch);
                Tensor d_fake = disc.forward(image_batch, fake);
                Tensor loss_d = ops::mul(
                    ops::add(ops::bce_with_logits(d_real, Tensor::ones(d_real.shape())),
                             ops::bce_with_logits(d_fake, Tensor::zeros(d_fake.shape()))),
                    Tensor::scalar(0.5f));
                d_loss_v = loss_d.item();
                GradMap grads = tape.backward(loss_d);
                opt_d.step(disc_params, collect_grads(disc_params, grads));
            }

            // generator step
            float g_adv_v, g_l1_v, g_total_v;
            {
                Tape tape;
                TapeScope scope(tape);
                Tensor fake = gen.forward(image_batch, noise, true, uint64_t(iteration) * 2 + 1);
                Tensor d_out = disc.forward(image_batch, fake);
                Tensor adv = ops::bce_with_logits(d_out, Tensor::ones(d_out.shape()));
                Tensor l1 = ops::l1_loss(fake, ref_batch);
                Tensor total = ops::add(adv, ops::mul(l1, Tensor::scalar(cfg.lambda_l1)));
                g_adv_v = adv.item();
                g_l1_v = l1.item();
                g_total_v = total.item();
                GradMap grads = tape.backward(total);
                opt_g.step(gen_params, collect_grads(gen_params, grads));
            }

            check_finite({d_loss_v, g_adv_v, g_l1_v, g_total_v}, iteration);
            stats.push_back(GanIterStats{iteration, d_loss_v, g_adv_v, g_l1_v, g_total_v});
            ++iteration;
        }
        if (on_epoch_end) on_epoch_end(epoch);
    }
    return stats;
}

} // namespace voxcal
