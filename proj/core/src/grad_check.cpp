// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/grad_check.hpp"

#include <cmath>
#include <cstring>

namespace voxcal {

namespace {

float eval_scalar(const TensorFn& f, const Tensor& x) {
    TapeScope no_tape(nullptr);
    Tensor y = f(x);
    if (y.numel() != 1) {
        throw InvalidArgument("grad_check: f must be scalar-valued, got shape " + shape_str(y.shape()));
    }
    return y.item();
}

} // namespace

float grad_check(const TensorFn& f, const Tensor& x, float eps) {
    if (!(eps > 0.0f)) throw InvalidArgument("grad_check: eps must be > 0");

    // Determinism probe: two functional evaluations must agree bitwise.
    const float probe_a = eval_scalar(f, x);
    const float probe_b = eval_scalar(f, x);
    if (std::memcmp(&probe_a, &probe_b, sizeof(float)) != 0) {
        throw InvalidArgument("grad_check: f is not deterministic (two evaluations differ)");
    }

    // Analytic gradient.
    Tensor tracked = x.clone();
    tracked.set_requires_grad(true);
    std::vector<float> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor y = f(tracked);
        if (y.numel() != 1) {
            throw InvalidArgument("grad_check: f must be scalar-valued, got shape " + shape_str(y.shape()));
        }
        GradMap grads = tape.backward(y);
        analytic = grads.get_or_zero(tracked);
    }

    // Central differences, one element at a time.
    float max_rel = 0.0f;
    Tensor probe = x.clone();
    std::span<float> pd = probe.mutable_data();
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float orig = pd[size_t(i)];
        pd[size_t(i)] = orig + eps;
        const double fp = double(eval_scalar(f, probe));
        pd[size_t(i)] = orig - eps;
        const double fm = double(eval_scalar(f, probe));
        pd[size_t(i)] = orig;

        const double numeric = (fp - fm) / (2.0 * double(eps));
        const double a = double(analytic[size_t(i)]);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, float(std::abs(a - numeric) / denom));
    }
    return max_rel;
}

} // namespace voxcal
