#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "voxcal/ops.hpp"
#include "voxcal/tensor.hpp"

using namespace voxcal;

TEST_CASE("tensor shape and data invariants") {
    Tensor t(Shape{2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.shape() == Shape{2, 3});
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), InvalidArgument);
    CHECK_THROWS_AS(Tensor(Shape{0, 2}), InvalidArgument);
    CHECK_THROWS_AS(t.item(), InvalidArgument);
    CHECK(Tensor::scalar(3.5f).item() == 3.5f);
}

TEST_CASE("copies share the payload, clones do not") {
    Tensor a(Shape{3}, std::vector<float>{1, 2, 3});
    Tensor b = a;
    b.mutable_data()[0] = 9.0f;
    CHECK(a.at(0) == 9.0f);
    Tensor c = a.clone();
    c.mutable_data()[0] = 5.0f;
    CHECK(a.at(0) == 9.0f);
}

TEST_CASE("backward: loss = sum(x) gives all-ones gradient") {
    Tensor x = Tensor::param(Shape{2, 3}, std::vector<float>{1, -2, 3, 4, 0, -6});
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = ops::sum(x);
    GradMap grads = tape.backward(loss);
    const auto& g = grads.at(x);
    REQUIRE(g.size() == 6);
    for (float v : g) CHECK(v == 1.0f);
}

TEST_CASE("backward: loss = mean(x^2) for x=[1,2,3] gives [2/3, 4/3, 2]") {
    Tensor x = Tensor::param(Shape{3}, std::vector<float>{1, 2, 3});
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = ops::mean(ops::mul(x, x));
    GradMap grads = tape.backward(loss);
    const auto& g = grads.at(x);
    CHECK(g[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
    CHECK(g[1] == doctest::Approx(4.0 / 3.0).epsilon(1e-6));
    CHECK(g[2] == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("backward: bce_with_logits at the symmetric point has zero gradient") {
    Tensor logit = Tensor::param(Shape{1}, std::vector<float>{0.0f});
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = ops::bce_with_logits(logit, Tensor::scalar(0.5f));
    GradMap grads = tape.backward(loss);
    CHECK(grads.at(logit)[0] == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("backward rejects non-scalar losses") {
    Tensor x = Tensor::param(Shape{2}, std::vector<float>{1, 2});
    Tape tape;
    TapeScope scope(tape);
    Tensor y = ops::mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), InvalidArgument);
}

TEST_CASE("gradients of non-ancestors are absent") {
    Tensor x = Tensor::param(Shape{2}, std::vector<float>{1, 2});
    Tensor unused = Tensor::param(Shape{2}, std::vector<float>{3, 4});
    Tape tape;
    TapeScope scope(tape);
    Tensor dead_end = ops::relu(unused); // on the tape but not feeding the loss
    (void)dead_end;
    Tensor loss = ops::sum(x);
    GradMap grads = tape.backward(loss);
    CHECK(grads.find(x) != nullptr);
    CHECK(grads.find(unused) == nullptr);
    CHECK(grads.get_or_zero(unused) == std::vector<float>{0.0f, 0.0f});
}

TEST_CASE("tape survives backward and is reusable until cleared") {
    Tensor x = Tensor::param(Shape{3}, std::vector<float>{1, 2, 3});
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = ops::mean(ops::mul(x, x));
    const size_t records = tape.num_records();
    GradMap g1 = tape.backward(loss);
    GradMap g2 = tape.backward(loss);
    CHECK(tape.num_records() == records);
    CHECK(g1.at(x) == g2.at(x));

    tape.clear();
    CHECK(tape.num_records() == 0);
    CHECK_THROWS_AS(tape.backward(loss), InvalidArgument); // stale node ids
}

TEST_CASE("gradient shape matches data shape for every tracked tensor") {
    Tensor x = Tensor::param(Shape{2, 4}, std::vector<float>(8, 0.5f));
    Tensor w = Tensor::param(Shape{4, 3}, std::vector<float>(12, 0.25f));
    Tape tape;
    TapeScope scope(tape);
    Tensor y = ops::matmul(x, w);
    Tensor loss = ops::sum(y);
    GradMap grads = tape.backward(loss);
    CHECK(grads.at(x).size() == 8);
    CHECK(grads.at(w).size() == 12);
    CHECK(grads.at(y).size() == 6);
}

TEST_CASE("broadcast gradients reduce back to the input shape") {
    Tensor x = Tensor::param(Shape{2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
    Tensor bias = Tensor::param(Shape{3}, std::vector<float>{1, 1, 1});
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = ops::sum(ops::add(x, bias));
    GradMap grads = tape.backward(loss);
    CHECK(grads.at(bias).size() == 3);
    for (float v : grads.at(bias)) CHECK(v == 2.0f); // summed over the broadcast axis
}

TEST_CASE("no active tape means pure evaluation") {
    Tensor x = Tensor::param(Shape{2}, std::vector<float>{1, 2});
    Tensor y = ops::mul(x, x);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("using one tensor twice accumulates both contributions") {
    Tensor x = Tensor::param(Shape{1}, std::vector<float>{3.0f});
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = ops::sum(ops::mul(x, x)); // d/dx x^2 = 2x
    GradMap grads = tape.backward(loss);
    CHECK(grads.at(x)[0] == doctest::Approx(6.0f));
}
