// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <functional>

#include "voxcal/nn.hpp"
#include "voxcal/optim.hpp"

namespace voxcal {

/// Image-to-voxel generator layout. The encoder is a 2D conv stack; the
/// decoder upsamples with 3D transposed convs; encoder features re-enter the
/// decoder as skip connections after a channel->depth reinterpretation.
struct GeneratorConfig {
    int64_t resolution = 32; // H = W, power of two
    int64_t z_res = 32;      // must equal resolution (cubic output)
    int64_t levels = 4;      // encoder downsampling levels
    int64_t base_channels = 16;
    int64_t max_channels = 128;
    int64_t noise_len = 16;    // 0 disables the noise input
    float dropout_rate = 0.5f; // decoder dropout while training; 0 disables

    void validate() const;
    int64_t enc_channels(int64_t level) const;
    int64_t bottleneck_size() const { return resolution >> levels; }
};

/// Reinterprets the channel axis of a [C,h,w] (or [N,C,h,w]) feature map as
/// (channel, depth) slices: C/depth_slices channels of depth_slices planes.
/// Pure reshape; data order is unchanged.
Tensor skip_reshape_2d_to_3d(const Tensor& feat, int64_t depth_slices);

class Generator {
public:
    Generator(const GeneratorConfig& cfg, Rng& rng);

    /// images [N,3,R,R] in [0,1], noise [N,noise_len] (ignored when
    /// noise_len == 0) -> occupancy probabilities [N,1,Z,R,R] in (0,1).
    /// `capture`, when set, receives named intermediate activations.
    Tensor forward(const Tensor& images, const Tensor& noise, bool training = false,
                   uint64_t dropout_seed = 0,
                   std::vector<std::pair<std::string, Tensor>>* capture = nullptr) const;

    /// Single-image convenience: [3,R,R] + [noise_len] -> [Z,R,R].
    Tensor forward_single(const Tensor& image, const Tensor& noise) const;

    Tensor zero_noise(int64_t batch = 1) const;

    nn::NamedParams named_params();
    const GeneratorConfig& config() const { return cfg_; }

private:
    GeneratorConfig cfg_;
    std::vector<nn::Conv2d> enc_;
    std::vector<nn::InstanceNorm> enc_norm_; // levels-1 entries (level 0 unnormalized)
    nn::Linear noise_fc_;                    // noise -> noise plane channels
    nn::Conv2d fuse_;
    nn::InstanceNorm fuse_norm_;
    std::vector<nn::ConvTranspose3d> dec_;
    std::vector<nn::InstanceNorm> dec_norm_;
    nn::Conv3d head_;
    int64_t noise_planes_ = 8;
};

/// 3D conv stack scoring (image, voxel) pairs; the RGB image conditions the
/// score by tiling along Z and concatenating as extra channels. Outputs a
/// patch-style logit map.
class Discriminator {
public:
    Discriminator(const GeneratorConfig& cfg, Rng& rng);

    /// images [N,3,R,R], voxels [N,1,Z,R,R] in [0,1] -> logits [N,1,z',h',w']
    Tensor forward(const Tensor& images, const Tensor& voxels) const;

    nn::NamedParams named_params();

private:
    int64_t resolution_ = 0, z_res_ = 0;
    std::vector<nn::Conv3d> blocks_;
    std::vector<nn::InstanceNorm> norms_; // per block from level 1 on
    nn::Conv3d head_;
};

struct GanSample {
    Tensor image;     // [3,R,R] in [0,1]
    Tensor ref_voxel; // [Z,R,R] hard 0/1
};

struct GanTrainConfig {
    float lambda_l1 = 100.0f;
    float lr = 2e-4f;
    float beta1 = 0.5f;
    float beta2 = 0.999f;
    int64_t epochs = 50;
    int64_t batch = 1;
    uint64_t seed = 0;
};

struct GanIterStats {
    int64_t iteration;
    float d_loss, g_adv, g_l1, g_total;
};

using EpochCallback = std::function<void(int64_t epoch)>;

/// Alternating discriminator/generator Adam steps with the pix2pix objective:
/// generator loss = BCE(D(x,G(x,z)), 1) + lambda * L1(G(x,z), reference).
/// Aborts with NumericError (naming the iteration) if any loss goes non-finite.
std::vector<GanIterStats> gan_train(Generator& gen, Discriminator& disc,
                                    const std::vector<GanSample>& dataset,
                                    const GanTrainConfig& cfg,
                                    const EpochCallback& on_epoch_end = {});

} // namespace voxcal
