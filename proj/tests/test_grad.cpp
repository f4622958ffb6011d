#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "grad_suite.hpp"
#include "voxcal/grad_check.hpp"
#include "voxcal/nn.hpp"

using namespace voxcal;

TEST_CASE("grad_check: sum is exactly linear") {
    Rng rng(1);
    Tensor x = gradsuite::detail::random_signed(rng, {3, 3}, 0.1, 1.0);
    const float err = grad_check([](const Tensor& t) { return ops::sum(t); }, x, 1e-3f);
    CHECK(err <= 1e-6f);
}

TEST_CASE("grad_check: mean(sigmoid(conv2d(x,k))) on a random 1x2x8x8 input") {
    Rng rng(2);
    Tensor k = gradsuite::detail::random_tensor(rng, {2, 2, 3, 3}, 0.2, 0.8);
    Tensor x = gradsuite::detail::random_signed(rng, {1, 2, 8, 8}, 0.1, 1.0);
    const float err = grad_check(
        [k](const Tensor& t) { return ops::mean(ops::sigmoid(ops::conv2d(t, k, 1, 1))); }, x, 1e-3f);
    CHECK(err <= 1e-3f);
}

TEST_CASE("grad_check rejects bad eps and non-scalar f") {
    Tensor x(Shape{2}, std::vector<float>{1, 2});
    CHECK_THROWS_AS(grad_check([](const Tensor& t) { return ops::sum(t); }, x, 0.0f),
                    InvalidArgument);
    CHECK_THROWS_AS(grad_check([](const Tensor& t) { return ops::mul(t, t); }, x, 1e-3f),
                    InvalidArgument);
}

TEST_CASE("grad_check rejects non-deterministic functions") {
    Tensor x(Shape{8}, std::vector<float>(8, 1.0f));
    uint64_t counter = 0;
    auto f = [&counter](const Tensor& t) {
        return ops::mean(ops::dropout(t, 0.5f, counter++)); // fresh mask every call
    };
    CHECK_THROWS_AS(grad_check(f, x, 1e-3f), InvalidArgument);
}

TEST_CASE("every primitive passes grad_check at 1e-3 on 10 random small inputs") {
    const auto results = gradsuite::run_primitive_suite(20260810, 10);
    REQUIRE(!results.empty());
    for (const auto& r : results) {
        INFO(r.name << " max_err=" << r.max_err);
        CHECK(r.max_err <= 1e-3f);
    }
}

TEST_CASE("composed check: linear head + softplus + l1 (regression-style loss)") {
    Rng rng(7);
    nn::Linear head = nn::Linear::make(rng, 6, 1, nn::Init::Xavier);
    Tensor target(Shape{2, 1}, std::vector<float>{0.8f, 1.4f});
    Tensor feat = gradsuite::detail::random_signed(rng, {2, 6}, 0.2, 1.0);

    auto f = [&](const Tensor& w) {
        Tensor out = ops::softplus(ops::add(ops::matmul(feat, w), head.b));
        return ops::l1_loss(out, target);
    };
    const float err = grad_check(f, head.w, 1e-3f);
    CHECK(err <= 1e-3f);
}
