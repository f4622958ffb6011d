// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "voxcal/ops.hpp"
#include "voxcal/rng.hpp"
#include "voxcal/tensor.hpp"

namespace voxcal::nn {

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

enum class Init {
    He,     // layers feeding relu / leaky_relu
    Xavier, // tanh / sigmoid / linear heads
};

std::vector<float> init_uniform(Rng& rng, Init kind, int64_t fan_in, int64_t fan_out, int64_t count);

struct Conv2d {
    Tensor w; // [Co,Ci,k,k]
    Tensor b; // [Co,1,1]
    int64_t stride = 1, pad = 0;

    static Conv2d make(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride,
                       int64_t pad, Init init);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out);
};

struct Conv3d {
    Tensor w; // [Co,Ci,k,k,k]
    Tensor b; // [Co,1,1,1]
    int64_t stride = 1, pad = 0;

    static Conv3d make(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride,
                       int64_t pad, Init init);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out);
};

struct ConvTranspose3d {
    Tensor w; // [Ci,Co,k,k,k]
    Tensor b; // [Co,1,1,1]
    int64_t stride = 1, pad = 0;

    static ConvTranspose3d make(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride,
                                int64_t pad, Init init);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out);
};

struct InstanceNorm {
    Tensor gamma; // [C]
    Tensor beta;  // [C]

    static InstanceNorm make(int64_t channels);
    Tensor forward(const Tensor& x) const { return ops::instance_norm(x, gamma, beta); }
    void collect(const std::string& prefix, NamedParams& out);
};

struct Linear {
    Tensor w; // [in,out]
    Tensor b; // [out]

    static Linear make(Rng& rng, int64_t in, int64_t out, Init init);
    Tensor forward(const Tensor& x) const { return ops::add(ops::matmul(x, w), b); }
    void collect(const std::string& prefix, NamedParams& out);
};

/// Stacks same-shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& xs);

/// Mean over all trailing spatial axes of [N,C,spatial...] -> [N,C].
Tensor global_avg_pool(const Tensor& x);

/// Copies checkpoint values into the model's parameters in place. Every
/// parameter must be present with a matching shape; extras are rejected.
void load_named_params(const NamedParams& params,
                       const std::map<std::string, Tensor>& loaded, const std::string& what);

/// Snapshot of parameters for checkpointing.
std::vector<std::pair<std::string, Tensor>> snapshot(const NamedParams& params);

/// Just the tensors, in declaration order (optimizer slots).
std::vector<Tensor> param_tensors(const NamedParams& params);

} // namespace voxcal::nn
