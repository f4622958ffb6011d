// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/nn.hpp"

#include <cmath>
#include <map>

namespace voxcal::nn {

std::vector<float> init_uniform(Rng& rng, Init kind, int64_t fan_in, int64_t fan_out, int64_t count) {
    double limit;
    switch (kind) {
        case Init::He:
            limit = std::sqrt(6.0 / double(fan_in));
            break;
        case Init::Xavier:
        default:
            limit = std::sqrt(6.0 / double(fan_in + fan_out));
            break;
    }
    std::vector<float> out(static_cast<size_t>(count));
    for (auto& v : out) v = float(rng.uniform(-limit, limit));
    return out;
}

Conv2d Conv2d::make(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride, int64_t pad,
                    Init init) {
    Conv2d c;
    c.w = Tensor::param(Shape{out_ch, in_ch, k, k},
                        init_uniform(rng, init, in_ch * k * k, out_ch * k * k, out_ch * in_ch * k * k));
    c.b = Tensor::param(Shape{out_ch, 1, 1}, std::vector<float>(size_t(out_ch), 0.0f));
    c.stride = stride;
    c.pad = pad;
    return c;
}

Tensor Conv2d::forward(const Tensor& x) const { return ops::add(ops::conv2d(x, w, stride, pad), b); }

void Conv2d::collect(const std::string& prefix, NamedParams& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
}

Conv3d Conv3d::make(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride, int64_t pad,
                    Init init) {
    Conv3d c;
    const int64_t taps = k * k * k;
    c.w = Tensor::param(Shape{out_ch, in_ch, k, k, k},
                        init_uniform(rng, init, in_ch * taps, out_ch * taps, out_ch * in_ch * taps));
    c.b = Tensor::param(Shape{out_ch, 1, 1, 1}, std::vector<float>(size_t(out_ch), 0.0f));
    c.stride = stride;
    c.pad = pad;
    return c;
}

Tensor Conv3d::forward(const Tensor& x) const { return ops::add(ops::conv3d(x, w, stride, pad), b); }

void Conv3d::collect(const std::string& prefix, NamedParams& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
}

ConvTranspose3d ConvTranspose3d::make(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t k,
                                      int64_t stride, int64_t pad, Init init) {
    ConvTranspose3d c;
    const int64_t taps = k * k * k;
    c.w = Tensor::param(Shape{in_ch, out_ch, k, k, k},
                        init_uniform(rng, init, in_ch * taps, out_ch * taps, out_ch * in_ch * taps));
    c.b = Tensor::param(Shape{out_ch, 1, 1, 1}, std::vector<float>(size_t(out_ch), 0.0f));
    c.stride = stride;
    c.pad = pad;
    return c;
}

Tensor ConvTranspose3d::forward(const Tensor& x) const {
    return ops::add(ops::conv_transpose3d(x, w, stride, pad), b);
}

void ConvTranspose3d::collect(const std::string& prefix, NamedParams& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
}

InstanceNorm InstanceNorm::make(int64_t channels) {
    InstanceNorm n;
    n.gamma = Tensor::param(Shape{channels}, std::vector<float>(size_t(channels), 1.0f));
    n.beta = Tensor::param(Shape{channels}, std::vector<float>(size_t(channels), 0.0f));
    return n;
}

void InstanceNorm::collect(const std::string& prefix, NamedParams& out) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
}

Linear Linear::make(Rng& rng, int64_t in, int64_t out, Init init) {
    Linear l;
    l.w = Tensor::param(Shape{in, out}, init_uniform(rng, init, in, out, in * out));
    l.b = Tensor::param(Shape{out}, std::vector<float>(size_t(out), 0.0f));
    return l;
}

void Linear::collect(const std::string& prefix, NamedParams& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
}

Tensor stack(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw InvalidArgument("stack: need at least one tensor");
    std::vector<Tensor> rows;
    rows.reserve(xs.size());
    for (const Tensor& x : xs) {
        Shape s = x.shape();
        s.insert(s.begin(), 1);
        rows.push_back(ops::reshape(x, s));
    }
    return ops::concat(rows, 0);
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.dim() < 3) {
        throw InvalidArgument("global_avg_pool: need [N,C,spatial...], got " + shape_str(x.shape()));
    }
    const int64_t n = x.shape()[0], c = x.shape()[1];
    const int64_t m = x.numel() / (n * c);
    // mean over spatial axes as a matmul with a constant averaging vector
    Tensor flat = ops::reshape(x, Shape{n * c, m});
    Tensor avg(Shape{m, 1}, std::vector<float>(size_t(m), 1.0f / float(m)));
    return ops::reshape(ops::matmul(flat, avg), Shape{n, c});
}

void load_named_params(const NamedParams& params, const std::map<std::string, Tensor>& loaded,
                       const std::string& what) {
    size_t used = 0;
    for (const auto& [name, ptr] : params) {
        auto it = loaded.find(name);
        if (it == loaded.end()) {
            throw IoError(what + ": checkpoint is missing tensor '" + name + "'");
        }
        if (it->second.shape() != ptr->shape()) {
            throw IoError(what + ": tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                          ", expected " + shape_str(ptr->shape()));
        }
        std::copy(it->second.data().begin(), it->second.data().end(), ptr->mutable_data().begin());
        ++used;
    }
    if (used != loaded.size()) {
        throw IoError(what + ": checkpoint carries " + std::to_string(loaded.size() - used) +
                      " unexpected tensors");
    }
}

std::vector<std::pair<std::string, Tensor>> snapshot(const NamedParams& params) {
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(params.size());
    for (const auto& [name, ptr] : params) out.emplace_back(name, *ptr);
    return out;
}

std::vector<Tensor> param_tensors(const NamedParams& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& [name, ptr] : params) out.push_back(*ptr);
    return out;
}

} // namespace voxcal::nn
