#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "voxcal/optim.hpp"
#include "voxcal/ops.hpp"

using namespace voxcal;

TEST_CASE("adam: zero gradients leave parameters unchanged, moments decay") {
    std::vector<Tensor> params{Tensor::param(Shape{3}, std::vector<float>{1, -2, 3})};
    Adam opt(AdamConfig{}, params);
    const std::vector<std::vector<float>> zero{{0, 0, 0}};
    for (int i = 0; i < 5; ++i) opt.step(params, zero);
    CHECK(params[0].at(0) == 1.0f);
    CHECK(params[0].at(1) == -2.0f);
    CHECK(params[0].at(2) == 3.0f);
    CHECK(opt.step_count() == 5);
}

TEST_CASE("adam: first bias-corrected step is about lr for unit gradient") {
    std::vector<Tensor> params{Tensor::param(Shape{1}, std::vector<float>{0.0f})};
    Adam opt(AdamConfig{0.1f, 0.9f, 0.999f, 1e-8f}, params);
    opt.step(params, {{1.0f}});
    CHECK(params[0].at(0) == doctest::Approx(-0.1).epsilon(1e-4));
}

TEST_CASE("adam: identical parameters with identical gradients track each other") {
    std::vector<Tensor> params{Tensor::param(Shape{1}, std::vector<float>{0.7f}),
                               Tensor::param(Shape{1}, std::vector<float>{0.7f})};
    Adam opt(AdamConfig{}, params);
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const float g = float(rng.uniform(-1, 1));
        opt.step(params, {{g}, {g}});
        REQUIRE(std::memcmp(params[0].data().data(), params[1].data().data(), sizeof(float)) == 0);
    }
}

TEST_CASE("adam: missing gradient entry is rejected") {
    std::vector<Tensor> params{Tensor::param(Shape{2}, std::vector<float>{1, 2})};
    Adam opt(AdamConfig{}, params);

    Tape tape;
    TapeScope scope(tape);
    Tensor unrelated = Tensor::param(Shape{1}, std::vector<float>{1.0f});
    Tensor loss = ops::sum(unrelated);
    GradMap grads = tape.backward(loss);
    CHECK_THROWS_AS(opt.step(params, grads), InvalidArgument);
}

TEST_CASE("adam: gradient map from a backward pass drives descent") {
    Tensor w = Tensor::param(Shape{1}, std::vector<float>{2.0f});
    std::vector<Tensor> params{w};
    Adam opt(AdamConfig{0.05f, 0.9f, 0.999f, 1e-8f}, params);
    for (int i = 0; i < 400; ++i) {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = ops::mse_loss(w, Tensor::scalar(-1.0f)); // minimum at w = -1
        GradMap grads = tape.backward(loss);
        opt.step(params, grads);
    }
    CHECK(w.at(0) == doctest::Approx(-1.0).epsilon(0.02));
}
