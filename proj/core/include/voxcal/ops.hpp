// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "voxcal/tensor.hpp"

namespace voxcal::ops {

// Elementwise binaries follow numpy broadcasting: shapes are aligned on the
// trailing axes and size-1 axes stretch. The gradient of a broadcast input is
// summed over the broadcast axes back to the input shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor concat(const std::vector<Tensor>& xs, int64_t axis);
Tensor slice(const Tensor& x, int64_t axis, int64_t start, int64_t len);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float alpha);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor softmax(const Tensor& x, int64_t axis);

/// Full reductions to a scalar of shape [1].
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// x: [N,Ci,H,W], w: [Co,Ci,kh,kw]; symmetric zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad);
/// x: [N,Ci,D,H,W], w: [Co,Ci,kd,kh,kw]
Tensor conv3d(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad);
/// x: [N,Ci,D,H,W], w: [Ci,Co,kd,kh,kw]; out extent = (in-1)*stride - 2*pad + k
Tensor conv_transpose3d(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad);

/// Per-(sample, channel) normalization over the spatial axes of [N,C,...].
/// gamma/beta have shape [C].
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     float eps = 1e-5f);

/// Inverted dropout with a caller-supplied mask seed; deterministic.
Tensor dropout(const Tensor& x, float rate, uint64_t seed);

Tensor l1_loss(const Tensor& pred, const Tensor& target);
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
/// logits: [N,K]; labels: N class indices in [0,K).
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels);

// ---------------------------------------------------------------------------
// Uniform dispatch surface
// ---------------------------------------------------------------------------

class Attrs {
public:
    using Value = std::variant<int64_t, double, std::vector<int64_t>, std::string>;

    Attrs() = default;
    Attrs& set(const std::string& k, int64_t v) { values_[k] = v; return *this; }
    Attrs& set(const std::string& k, double v) { values_[k] = v; return *this; }
    Attrs& set(const std::string& k, std::vector<int64_t> v) { values_[k] = std::move(v); return *this; }
    Attrs& set(const std::string& k, std::string v) { values_[k] = std::move(v); return *this; }

    bool has(const std::string& k) const { return values_.count(k) != 0; }
    int64_t get_int(const std::string& k) const;
    double get_float(const std::string& k) const;
    const std::vector<int64_t>& get_ints(const std::string& k) const;
    int64_t get_int_or(const std::string& k, int64_t fallback) const;
    double get_float_or(const std::string& k, double fallback) const;

private:
    std::map<std::string, Value> values_;
};

/// Apply a primitive by id. Unknown ids and incomplete attrs are rejected.
Tensor apply_primitive(const std::string& kind, const std::vector<Tensor>& inputs,
                       const Attrs& attrs = {});

/// Shape of the result of broadcasting a against b; throws naming both shapes.
Shape broadcast_shape(const Shape& a, const Shape& b);

} // namespace voxcal::ops
