#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "voxcal/ops.hpp"
#include "voxcal/rng.hpp"

using namespace voxcal;

namespace {

// independent direct-sum convolution used as the oracle for conv2d
std::vector<double> conv2d_oracle(const std::vector<float>& x, int64_t h, int64_t w,
                                  const std::vector<float>& k, int64_t kh, int64_t kw,
                                  int64_t stride, int64_t pad) {
    const int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const int64_t wo = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> out(size_t(ho * wo), 0.0);
    for (int64_t oy = 0; oy < ho; ++oy) {
        for (int64_t ox = 0; ox < wo; ++ox) {
            double acc = 0.0;
            for (int64_t ky = 0; ky < kh; ++ky) {
                for (int64_t kx = 0; kx < kw; ++kx) {
                    const int64_t iy = oy * stride - pad + ky;
                    const int64_t ix = ox * stride - pad + kx;
                    if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                    acc += double(x[size_t(iy * w + ix)]) * double(k[size_t(ky * kw + kx)]);
                }
            }
            out[size_t(oy * wo + ox)] = acc;
        }
    }
    return out;
}

} // namespace

TEST_CASE("matmul: identity leaves any 3x3 matrix unchanged") {
    Rng rng(7);
    std::vector<float> a(9);
    for (auto& v : a) v = float(rng.uniform(-2, 2));
    Tensor eye(Shape{3, 3}, std::vector<float>{1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor m(Shape{3, 3}, a);
    Tensor out = ops::matmul(eye, m);
    for (int i = 0; i < 9; ++i) CHECK(out.at(i) == a[size_t(i)]);
}

TEST_CASE("conv2d: all-ones 4x4 input, 3x3 ones kernel, stride 1 pad 1") {
    Tensor x(Shape{1, 1, 4, 4}, std::vector<float>(16, 1.0f));
    Tensor k(Shape{1, 1, 3, 3}, std::vector<float>(9, 1.0f));
    Tensor y = ops::conv2d(x, k, 1, 1);
    REQUIRE(y.shape() == Shape{1, 1, 4, 4});
    // corners see a 2x2 neighborhood, the interior the full 3x3
    CHECK(y.at(0) == 4.0f);
    CHECK(y.at(3) == 4.0f);
    CHECK(y.at(12) == 4.0f);
    CHECK(y.at(15) == 4.0f);
    CHECK(y.at(5) == 9.0f);
    CHECK(y.at(6) == 9.0f);
}

TEST_CASE("conv2d matches the direct-sum oracle on random inputs") {
    Rng rng(11);
    for (int trial = 0; trial < 8; ++trial) {
        const int64_t h = 5 + int64_t(rng.below(4));
        const int64_t w = 5 + int64_t(rng.below(4));
        const int64_t k = 2 + int64_t(rng.below(3));
        const int64_t stride = 1 + int64_t(rng.below(2));
        const int64_t pad = int64_t(rng.below(2));
        if (h + 2 * pad < k || w + 2 * pad < k) continue;

        std::vector<float> xd(size_t(h * w)), kd(size_t(k * k));
        for (auto& v : xd) v = float(rng.uniform(-1, 1));
        for (auto& v : kd) v = float(rng.uniform(-1, 1));

        Tensor y = ops::conv2d(Tensor(Shape{1, 1, h, w}, xd), Tensor(Shape{1, 1, k, k}, kd),
                               stride, pad);
        const auto expect = conv2d_oracle(xd, h, w, kd, k, k, stride, pad);
        REQUIRE(y.numel() == int64_t(expect.size()));
        for (int64_t i = 0; i < y.numel(); ++i) {
            CHECK(y.at(i) == doctest::Approx(expect[size_t(i)]).epsilon(1e-5));
        }
    }
}

TEST_CASE("conv_transpose3d inverts stride-2 downsampling shapes") {
    Tensor x(Shape{1, 2, 3, 3, 3}, std::vector<float>(54, 0.5f));
    Tensor w(Shape{2, 4, 4, 4, 4}, std::vector<float>(512, 0.01f));
    Tensor y = ops::conv_transpose3d(x, w, 2, 1);
    CHECK(y.shape() == Shape{1, 4, 6, 6, 6});
}

TEST_CASE("conv_transpose3d single-input scatter matches the kernel") {
    // one input voxel scatters a copy of the kernel into the output
    Tensor x(Shape{1, 1, 1, 1, 1}, std::vector<float>{2.0f});
    std::vector<float> kd(27);
    for (size_t i = 0; i < kd.size(); ++i) kd[i] = float(i);
    Tensor w(Shape{1, 1, 3, 3, 3}, kd);
    Tensor y = ops::conv_transpose3d(x, w, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 3, 3, 3});
    for (int64_t i = 0; i < 27; ++i) CHECK(y.at(i) == doctest::Approx(2.0f * float(i)));
}

TEST_CASE("softmax: symmetric input gives uniform distribution") {
    Tensor x(Shape{3}, std::vector<float>{0, 0, 0});
    Tensor y = ops::softmax(x, 0);
    for (int i = 0; i < 3; ++i) CHECK(y.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(3);
    std::vector<float> d(40);
    for (auto& v : d) v = float(rng.uniform(-5, 5));
    Tensor y = ops::softmax(Tensor(Shape{8, 5}, d), 1);
    for (int64_t r = 0; r < 8; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < 5; ++c) s += y.at(r * 5 + c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("sigmoid and softplus ranges") {
    Rng rng(5);
    std::vector<float> d(64);
    for (auto& v : d) v = float(rng.uniform(-30, 30));
    Tensor x(Shape{64}, d);
    Tensor s = ops::sigmoid(x);
    Tensor p = ops::softplus(x);
    for (int64_t i = 0; i < 64; ++i) {
        CHECK(s.at(i) > 0.0f);
        CHECK(s.at(i) < 1.0f);
        CHECK(p.at(i) > 0.0f);
    }
}

TEST_CASE("broadcasting add: [N,C,H,W] + [C,1,1]") {
    Tensor x(Shape{2, 3, 2, 2}, std::vector<float>(24, 1.0f));
    Tensor b(Shape{3, 1, 1}, std::vector<float>{10, 20, 30});
    Tensor y = ops::add(x, b);
    CHECK(y.shape() == Shape{2, 3, 2, 2});
    CHECK(y.at(0) == 11.0f);
    CHECK(y.at(4) == 21.0f);
    CHECK(y.at(8) == 31.0f);
    CHECK(y.at(12) == 11.0f); // second batch entry
}

TEST_CASE("incompatible shapes are rejected with both shapes named") {
    Tensor a(Shape{2, 3});
    Tensor b(Shape{2, 4});
    try {
        ops::add(a, b);
        FAIL("expected InvalidArgument");
    } catch (const InvalidArgument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2, 3]") != std::string::npos);
        CHECK(msg.find("[2, 4]") != std::string::npos);
    }
    CHECK_THROWS_AS(ops::matmul(a, a), InvalidArgument);
    CHECK_THROWS_AS(ops::conv2d(Tensor(Shape{1, 2, 4, 4}), Tensor(Shape{1, 3, 3, 3}), 1, 1),
                    InvalidArgument);
}

TEST_CASE("concat and slice round-trip") {
    Tensor a(Shape{2, 2}, std::vector<float>{1, 2, 3, 4});
    Tensor b(Shape{2, 3}, std::vector<float>{5, 6, 7, 8, 9, 10});
    Tensor c = ops::concat({a, b}, 1);
    REQUIRE(c.shape() == Shape{2, 5});
    CHECK(c.at(2) == 5.0f);
    CHECK(c.at(7) == 8.0f);
    Tensor back = ops::slice(c, 1, 0, 2);
    for (int64_t i = 0; i < 4; ++i) CHECK(back.at(i) == a.at(i));
    CHECK_THROWS_AS(ops::slice(c, 1, 4, 3), InvalidArgument);
    CHECK_THROWS_AS(ops::concat({a, Tensor(Shape{3, 2})}, 1), InvalidArgument);
}

TEST_CASE("reshape is a bitwise bijection") {
    Rng rng(17);
    std::vector<float> d(24);
    for (auto& v : d) v = float(rng.uniform(-1, 1));
    Tensor x(Shape{2, 3, 4}, d);
    Tensor y = ops::reshape(ops::reshape(x, Shape{6, 4}), Shape{2, 3, 4});
    CHECK(std::memcmp(x.data().data(), y.data().data(), sizeof(float) * 24) == 0);
    CHECK_THROWS_AS(ops::reshape(x, Shape{5, 5}), InvalidArgument);
}

TEST_CASE("dropout: deterministic mask, zero rate is identity") {
    Rng rng(23);
    std::vector<float> d(256);
    for (auto& v : d) v = float(rng.uniform(-1, 1));
    Tensor x(Shape{256}, d);
    Tensor a = ops::dropout(x, 0.4f, 99);
    Tensor b = ops::dropout(x, 0.4f, 99);
    CHECK(std::memcmp(a.data().data(), b.data().data(), 256 * sizeof(float)) == 0);
    Tensor c = ops::dropout(x, 0.4f, 100);
    CHECK(std::memcmp(a.data().data(), c.data().data(), 256 * sizeof(float)) != 0);
    Tensor id = ops::dropout(x, 0.0f, 5);
    for (int64_t i = 0; i < 256; ++i) CHECK(id.at(i) == x.at(i));
    CHECK_THROWS_AS(ops::dropout(x, 1.0f, 0), InvalidArgument);
}

TEST_CASE("instance_norm normalizes each (n,c) group") {
    Rng rng(31);
    std::vector<float> d(2 * 3 * 16);
    for (auto& v : d) v = float(rng.uniform(-4, 4));
    Tensor x(Shape{2, 3, 4, 4}, d);
    Tensor y = ops::instance_norm(x, Tensor::ones(Shape{3}), Tensor::zeros(Shape{3}));
    for (int64_t g = 0; g < 6; ++g) {
        double mean = 0.0, var = 0.0;
        for (int64_t i = 0; i < 16; ++i) mean += y.at(g * 16 + i);
        mean /= 16.0;
        for (int64_t i = 0; i < 16; ++i) {
            const double c = y.at(g * 16 + i) - mean;
            var += c * c;
        }
        var /= 16.0;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-5));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
    CHECK_THROWS_AS(ops::instance_norm(x, Tensor::ones(Shape{2}), Tensor::zeros(Shape{3})),
                    InvalidArgument);
}

TEST_CASE("cross_entropy validates labels") {
    Tensor logits(Shape{2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(ops::cross_entropy(logits, {0, 3}), InvalidArgument);
    CHECK_THROWS_AS(ops::cross_entropy(logits, {0}), InvalidArgument);
    Tensor loss = ops::cross_entropy(logits, {2, 2});
    CHECK(loss.item() > 0.0f);
}

TEST_CASE("apply_primitive dispatches and rejects unknown ids") {
    Tensor a(Shape{2}, std::vector<float>{1, 2});
    Tensor b(Shape{2}, std::vector<float>{3, 4});
    Tensor y = ops::apply_primitive("add", {a, b});
    CHECK(y.at(0) == 4.0f);
    CHECK(y.at(1) == 6.0f);

    ops::Attrs attrs;
    attrs.set("alpha", 0.1);
    Tensor l = ops::apply_primitive("leaky_relu", {Tensor(Shape{1}, std::vector<float>{-2.0f})}, attrs);
    CHECK(l.at(0) == doctest::Approx(-0.2f));

    CHECK_THROWS_AS(ops::apply_primitive("fused_blur", {a}), InvalidArgument);
    CHECK_THROWS_AS(ops::apply_primitive("add", {a}), InvalidArgument);
    CHECK_THROWS_AS(ops::apply_primitive("leaky_relu", {a}), InvalidArgument); // alpha missing
}

TEST_CASE("losses reject shape mismatches") {
    Tensor a(Shape{2, 2});
    Tensor b(Shape{4});
    CHECK_THROWS_AS(ops::l1_loss(a, b), InvalidArgument);
    CHECK_THROWS_AS(ops::mse_loss(a, b), InvalidArgument);
    CHECK_THROWS_AS(ops::bce_with_logits(a, b), InvalidArgument);
}
