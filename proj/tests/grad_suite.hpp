// Shared between the unit tests and the acceptance suite: central-difference
// gradient checks for every autodiff primitive.
//
// Probe construction notes. grad_check compares f32 forward evaluations at
// eps = 1e-3 against a 1e-3 relative tolerance, so the probes keep the loss
// magnitude small (the f32 ulp of the loss is the noise floor) and gradient
// entries bounded away from zero:
//   - tensor-valued ops are probed through mse_loss(op(x), op(x0) - r) with a
//     small positive offset pattern r, which keeps |loss| ~ 0.3 while probing
//     random Jacobian combinations;
//   - kinked ops (relu family, l1) get inputs bounded away from their kinks;
//   - conv weights/inputs stay positive where sign cancellation would let a
//     Jacobian column sum collapse to zero.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "voxcal/grad_check.hpp"
#include "voxcal/ops.hpp"
#include "voxcal/rng.hpp"

namespace gradsuite {

using voxcal::Rng;
using voxcal::Shape;
using voxcal::Tensor;
namespace ops = voxcal::ops;

struct Result {
    std::string name;
    float max_err = 0.0f;
    int trials = 0;
};

namespace detail {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
    std::vector<float> d(size_t(voxcal::shape_numel(shape)));
    for (auto& v : d) v = float(rng.uniform(lo, hi));
    return Tensor(std::move(shape), std::move(d));
}

// values in +/-[lo, hi]: random sign, magnitude bounded away from zero
inline Tensor random_signed(Rng& rng, Shape shape, double lo, double hi) {
    std::vector<float> d(size_t(voxcal::shape_numel(shape)));
    for (auto& v : d) {
        const double mag = rng.uniform(lo, hi);
        v = float(rng.bernoulli(0.5) ? mag : -mag);
    }
    return Tensor(std::move(shape), std::move(d));
}

// alternating {0.2, 0.8} offsets with jitter; spread keeps weighted Jacobian
// column sums away from zero
inline Tensor offset_pattern(Rng& rng, const Shape& shape) {
    std::vector<float> d(size_t(voxcal::shape_numel(shape)));
    for (size_t i = 0; i < d.size(); ++i) {
        d[i] = float((i % 2 == 0 ? 0.2 : 0.8) + rng.uniform(-0.05, 0.05));
    }
    return Tensor(shape, std::move(d));
}

// f(x) = mse_loss(op(x), op(x0) - r)
inline voxcal::TensorFn mse_probe(const std::function<Tensor(const Tensor&)>& op, const Tensor& x0,
                                  Rng& rng) {
    Tensor y0;
    {
        voxcal::TapeScope no_tape(nullptr);
        y0 = op(x0);
    }
    Tensor r = offset_pattern(rng, y0.shape());
    Tensor target = ops::sub(y0, r);
    return [op, target](const Tensor& x) { return ops::mse_loss(op(x), target); };
}

struct Check {
    std::string name;
    // returns (f, x0)
    std::function<std::pair<voxcal::TensorFn, Tensor>(Rng&)> make;
};

inline std::vector<Check> primitive_checks() {
    std::vector<Check> checks;
    auto add = [&](std::string name,
                   std::function<std::pair<voxcal::TensorFn, Tensor>(Rng&)> make) {
        checks.push_back(Check{std::move(name), std::move(make)});
    };

    add("add.lhs", [](Rng& rng) {
        Tensor other = random_signed(rng, {2, 3}, 0.3, 1.5);
        Tensor x0 = random_signed(rng, {2, 3}, 0.3, 1.5);
        auto op = [other](const Tensor& x) { return ops::add(x, other); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("add.broadcast_bias", [](Rng& rng) {
        Tensor big = random_signed(rng, {2, 3, 2, 2}, 0.3, 1.5);
        Tensor x0 = random_signed(rng, {3, 1, 1}, 0.3, 1.5);
        auto op = [big](const Tensor& b) { return ops::add(big, b); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("sub.rhs", [](Rng& rng) {
        Tensor other = random_signed(rng, {2, 3}, 0.3, 1.5);
        Tensor x0 = random_signed(rng, {2, 3}, 0.3, 1.5);
        auto op = [other](const Tensor& x) { return ops::sub(other, x); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("mul.lhs", [](Rng& rng) {
        Tensor other = random_signed(rng, {2, 3}, 0.4, 1.5);
        Tensor x0 = random_signed(rng, {2, 3}, 0.4, 1.5);
        auto op = [other](const Tensor& x) { return ops::mul(x, other); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("mul.broadcast_scale", [](Rng& rng) {
        Tensor big = random_tensor(rng, {2, 2, 3}, 0.3, 1.2);
        Tensor x0 = random_tensor(rng, {2, 1, 1}, 0.4, 1.2);
        auto op = [big](const Tensor& s) { return ops::mul(big, s); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("matmul.lhs", [](Rng& rng) {
        Tensor b = random_tensor(rng, {4, 2}, 0.2, 1.0);
        Tensor x0 = random_signed(rng, {3, 4}, 0.3, 1.2);
        auto op = [b](const Tensor& a) { return ops::matmul(a, b); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("matmul.rhs", [](Rng& rng) {
        Tensor a = random_tensor(rng, {3, 4}, 0.2, 1.0);
        Tensor x0 = random_signed(rng, {4, 2}, 0.3, 1.2);
        auto op = [a](const Tensor& b) { return ops::matmul(a, b); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("reshape", [](Rng& rng) {
        Tensor x0 = random_signed(rng, {2, 6}, 0.3, 1.2);
        auto op = [](const Tensor& x) { return ops::reshape(x, Shape{3, 4}); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("concat", [](Rng& rng) {
        Tensor other = random_signed(rng, {2, 2}, 0.3, 1.2);
        Tensor x0 = random_signed(rng, {2, 3}, 0.3, 1.2);
        auto op = [other](const Tensor& x) { return ops::concat({x, other}, 1); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("slice", [](Rng& rng) {
        Tensor x0 = random_signed(rng, {3, 5}, 0.3, 1.2);
        auto op = [](const Tensor& x) { return ops::slice(x, 1, 1, 3); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("relu", [](Rng& rng) {
        Tensor x0 = random_signed(rng, {3, 4}, 0.05, 2.0); // away from the kink
        auto op = [](const Tensor& x) { return ops::relu(x); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("leaky_relu", [](Rng& rng) {
        Tensor x0 = random_signed(rng, {3, 4}, 0.05, 2.0);
        auto op = [](const Tensor& x) { return ops::leaky_relu(x, 0.2f); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("sigmoid", [](Rng& rng) {
        Tensor x0 = random_signed(rng, {3, 4}, 0.0, 2.5);
        auto op = [](const Tensor& x) { return ops::sigmoid(x); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("tanh", [](Rng& rng) {
        Tensor x0 = random_signed(rng, {3, 4}, 0.0, 1.5);
        auto op = [](const Tensor& x) { return ops::tanh(x); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("softplus", [](Rng& rng) {
        Tensor x0 = random_signed(rng, {3, 4}, 0.0, 2.5);
        auto op = [](const Tensor& x) { return ops::softplus(x); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("softmax", [](Rng& rng) {
        Tensor x0 = random_signed(rng, {2, 3}, 0.0, 0.8);
        auto op = [](const Tensor& x) { return ops::softmax(x, 1); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("sum", [](Rng& rng) {
        Tensor x0 = random_signed(rng, {3, 4}, 0.1, 1.0);
        return std::make_pair(voxcal::TensorFn([](const Tensor& x) { return ops::sum(x); }), x0);
    });
    add("mean", [](Rng& rng) {
        Tensor x0 = random_signed(rng, {2, 4}, 0.1, 1.0);
        return std::make_pair(voxcal::TensorFn([](const Tensor& x) { return ops::mean(x); }), x0);
    });
    add("conv2d.input", [](Rng& rng) {
        Tensor w = random_tensor(rng, {2, 2, 3, 3}, 0.2, 0.8);
        Tensor x0 = random_signed(rng, {1, 2, 4, 4}, 0.2, 1.0);
        auto op = [w](const Tensor& x) { return ops::conv2d(x, w, 1, 1); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("conv2d.weight", [](Rng& rng) {
        Tensor x = random_tensor(rng, {1, 2, 4, 4}, 0.2, 1.0);
        Tensor x0 = random_tensor(rng, {2, 2, 3, 3}, 0.2, 0.8);
        auto op = [x](const Tensor& w) { return ops::conv2d(x, w, 1, 1); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("conv2d.strided", [](Rng& rng) {
        Tensor w = random_tensor(rng, {2, 1, 4, 4}, 0.2, 0.8);
        Tensor x0 = random_signed(rng, {1, 1, 6, 6}, 0.2, 1.0);
        auto op = [w](const Tensor& x) { return ops::conv2d(x, w, 2, 1); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("conv3d.input", [](Rng& rng) {
        Tensor w = random_tensor(rng, {2, 1, 3, 3, 3}, 0.2, 0.7);
        Tensor x0 = random_signed(rng, {1, 1, 3, 3, 3}, 0.2, 1.0);
        auto op = [w](const Tensor& x) { return ops::conv3d(x, w, 1, 1); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("conv3d.weight", [](Rng& rng) {
        Tensor x = random_tensor(rng, {1, 1, 4, 4, 4}, 0.2, 1.0);
        Tensor x0 = random_tensor(rng, {1, 1, 3, 3, 3}, 0.2, 0.7);
        auto op = [x](const Tensor& w) { return ops::conv3d(x, w, 2, 1); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("conv_transpose3d.input", [](Rng& rng) {
        Tensor w = random_tensor(rng, {2, 1, 4, 4, 4}, 0.1, 0.5);
        Tensor x0 = random_signed(rng, {1, 2, 2, 2, 2}, 0.2, 1.0);
        auto op = [w](const Tensor& x) { return ops::conv_transpose3d(x, w, 2, 1); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("conv_transpose3d.weight", [](Rng& rng) {
        Tensor x = random_tensor(rng, {1, 1, 2, 2, 2}, 0.2, 1.0);
        Tensor x0 = random_tensor(rng, {1, 1, 4, 4, 4}, 0.1, 0.5);
        auto op = [x](const Tensor& w) { return ops::conv_transpose3d(x, w, 2, 1); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("instance_norm.input", [](Rng& rng) {
        Tensor gamma = random_tensor(rng, {2}, 0.6, 1.4);
        Tensor beta = random_signed(rng, {2}, 0.1, 0.5);
        Tensor x0 = random_signed(rng, {1, 2, 2, 4}, 0.3, 1.5);
        auto op = [gamma, beta](const Tensor& x) { return ops::instance_norm(x, gamma, beta); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("instance_norm.gamma", [](Rng& rng) {
        Tensor x = random_signed(rng, {1, 2, 2, 4}, 0.3, 1.5);
        Tensor beta = random_signed(rng, {2}, 0.1, 0.5);
        Tensor x0 = random_tensor(rng, {2}, 0.6, 1.4);
        auto op = [x, beta](const Tensor& g) { return ops::instance_norm(x, g, beta); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("instance_norm.beta", [](Rng& rng) {
        Tensor x = random_signed(rng, {1, 2, 2, 4}, 0.3, 1.5);
        Tensor gamma = random_tensor(rng, {2}, 0.6, 1.4);
        Tensor x0 = random_signed(rng, {2}, 0.1, 0.5);
        auto op = [x, gamma](const Tensor& b) { return ops::instance_norm(x, gamma, b); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("dropout", [](Rng& rng) {
        const uint64_t mask_seed = rng.next_u64();
        Tensor x0 = random_signed(rng, {3, 4}, 0.3, 1.2);
        auto op = [mask_seed](const Tensor& x) { return ops::dropout(x, 0.3f, mask_seed); };
        return std::make_pair(mse_probe(op, x0, rng), x0);
    });
    add("l1_loss.pred", [](Rng& rng) {
        Tensor target = random_signed(rng, {4}, 0.2, 1.0);
        // keep |pred - target| >= 0.2 so the probe never crosses the kink
        std::vector<float> d(4);
        for (int i = 0; i < 4; ++i) {
            const double off = rng.uniform(0.2, 1.0);
            d[size_t(i)] = target.at(i) + float(rng.bernoulli(0.5) ? off : -off);
        }
        Tensor x0(Shape{4}, d);
        auto f = voxcal::TensorFn(
            [target](const Tensor& p) { return ops::l1_loss(p, target); });
        return std::make_pair(f, x0);
    });
    add("mse_loss.pred", [](Rng& rng) {
        Tensor target = random_signed(rng, {4}, 0.2, 1.0);
        Tensor x0 = random_signed(rng, {4}, 0.2, 1.0);
        auto f = voxcal::TensorFn(
            [target](const Tensor& p) { return ops::mse_loss(p, target); });
        return std::make_pair(f, x0);
    });
    add("bce_with_logits.logits", [](Rng& rng) {
        std::vector<float> t(2);
        for (auto& v : t) v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
        Tensor target(Shape{2}, t);
        Tensor x0 = random_signed(rng, {2}, 0.3, 1.2);
        auto f = voxcal::TensorFn(
            [target](const Tensor& l) { return ops::bce_with_logits(l, target); });
        return std::make_pair(f, x0);
    });
    add("cross_entropy.logits", [](Rng& rng) {
        const std::vector<int64_t> labels{int64_t(rng.below(3))};
        Tensor x0 = random_signed(rng, {1, 3}, 0.0, 0.4);
        auto f = voxcal::TensorFn(
            [labels](const Tensor& l) { return ops::cross_entropy(l, labels); });
        return std::make_pair(f, x0);
    });

    return checks;
}

} // namespace detail

/// Runs every primitive check `trials` times (>= 10 for the contract) and
/// returns the per-primitive max relative error.
inline std::vector<Result> run_primitive_suite(uint64_t seed, int trials) {
    std::vector<Result> results;
    Rng rng(seed);
    for (const auto& check : detail::primitive_checks()) {
        Result res;
        res.name = check.name;
        res.trials = trials;
        for (int t = 0; t < trials; ++t) {
            Rng trial_rng = rng.derive(uint64_t(std::hash<std::string>{}(check.name)) + uint64_t(t));
            auto [f, x0] = check.make(trial_rng);
            res.max_err = std::max(res.max_err, voxcal::grad_check(f, x0, 1e-3f));
        }
        results.push_back(std::move(res));
    }
    return results;
}

} // namespace gradsuite
