#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "voxcal/depth.hpp"
#include "voxcal/rng.hpp"

using namespace voxcal;

namespace {

RawDepthMap make_map(int w, int h, uint16_t fill, float near = 400.0f, float far = 600.0f) {
    return RawDepthMap{w, h, std::vector<uint16_t>(size_t(w) * size_t(h), fill), near, far};
}

// independent reference implementation of the Jacobi mean-fill
RawDepthMap inpaint_oracle(const RawDepthMap& raw, int max_iters) {
    RawDepthMap cur = raw;
    for (int it = 0; it < max_iters; ++it) {
        RawDepthMap next = cur;
        bool any_missing = false;
        for (int y = 0; y < raw.height; ++y) {
            for (int x = 0; x < raw.width; ++x) {
                const size_t i = size_t(y) * size_t(raw.width) + size_t(x);
                if (cur.values[i] != 0) continue;
                any_missing = true;
                double sum = 0;
                int cnt = 0;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (!dx && !dy) continue;
                        const int nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= raw.width || ny >= raw.height) continue;
                        const uint16_t v = cur.values[size_t(ny) * size_t(raw.width) + size_t(nx)];
                        if (v) {
                            sum += v;
                            ++cnt;
                        }
                    }
                }
                if (cnt) next.values[i] = uint16_t(std::lround(sum / cnt));
            }
        }
        cur = std::move(next);
        if (!any_missing) break;
    }
    return cur;
}

} // namespace

TEST_CASE("inpaint: hole-free input comes back identical") {
    RawDepthMap m = make_map(6, 6, 1234);
    RawDepthMap out = inpaint_dilate(m, 10);
    CHECK(out.values == m.values);
}

TEST_CASE("inpaint: one hole surrounded by constant 500 fills with 500") {
    RawDepthMap m = make_map(3, 3, 500);
    m.values[4] = 0;
    RawDepthMap out = inpaint_dilate(m, 5);
    CHECK(out.values[4] == 500);
    for (size_t i = 0; i < 9; ++i) {
        if (i != 4) CHECK(out.values[i] == 500);
    }
}

TEST_CASE("inpaint: random holes on a smooth gradient stay within the original range") {
    const int w = 24, h = 24;
    RawDepthMap m = make_map(w, h, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            m.values[size_t(y * w + x)] = uint16_t(2000 + 60 * x + 25 * y);
        }
    }
    uint16_t lo = *std::min_element(m.values.begin(), m.values.end());
    uint16_t hi = *std::max_element(m.values.begin(), m.values.end());

    Rng rng(77);
    RawDepthMap holed = m;
    for (auto& v : holed.values) {
        if (rng.uniform() < 0.10) v = 0;
    }

    RawDepthMap filled = inpaint_dilate(holed, w + h);
    CHECK(filled.missing_count() == 0);
    for (size_t i = 0; i < filled.values.size(); ++i) {
        if (holed.values[i] != 0) {
            CHECK(filled.values[i] == holed.values[i]); // originals untouched
        } else {
            CHECK(filled.values[i] >= lo);
            CHECK(filled.values[i] <= hi);
        }
    }

    // exact agreement with the independent oracle
    RawDepthMap expect = inpaint_oracle(holed, w + h);
    CHECK(filled.values == expect.values);
}

TEST_CASE("inpaint error paths") {
    RawDepthMap all_missing = make_map(4, 4, 0);
    CHECK_THROWS_AS(inpaint_dilate(all_missing, 10), InvalidArgument);

    // a wide gap cannot close in one iteration
    RawDepthMap wide = make_map(16, 1, 0);
    wide.values[0] = 100;
    try {
        inpaint_dilate(wide, 2);
        FAIL("expected failure with remaining-hole count");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("13") != std::string::npos); // 15 holes, 2 filled
    }
}

TEST_CASE("apply_mask: all-ones mask keeps everything valid") {
    RawDepthMap m = make_map(4, 4, 900);
    SegMask mask{4, 4, std::vector<uint8_t>(16, 1)};
    MaskedDepth out = apply_mask(m, mask);
    CHECK(out.depth.values == m.values);
    CHECK(out.mask.popcount() == 16);
}

TEST_CASE("apply_mask: valid count equals mask popcount") {
    RawDepthMap m = make_map(4, 4, 700);
    SegMask mask{4, 4, std::vector<uint8_t>(16, 0)};
    for (int i = 0; i < 8; ++i) mask.values[size_t(i)] = 1;
    MaskedDepth masked = apply_mask(m, mask);
    NormalizedDepthMap norm = normalize(masked.depth, masked.mask);
    CHECK(norm.valid_count() == 8);
}

TEST_CASE("apply_mask error paths") {
    RawDepthMap m = make_map(4, 4, 700);
    SegMask wrong{3, 4, std::vector<uint8_t>(12, 1)};
    CHECK_THROWS_AS(apply_mask(m, wrong), InvalidArgument);
    SegMask empty{4, 4, std::vector<uint8_t>(16, 0)};
    CHECK_THROWS_AS(apply_mask(m, empty), InvalidArgument);
}

TEST_CASE("normalize: near maps to 0, far to 1, midpoint to 0.5 within a quantum") {
    RawDepthMap m = make_map(3, 1, 0, 400.0f, 600.0f);
    m.values[0] = RawDepthMap::encode_fraction(0.0); // physical = near
    m.values[1] = RawDepthMap::encode_fraction(1.0); // physical = far
    m.values[2] = RawDepthMap::encode_fraction(0.5);
    SegMask mask{3, 1, {1, 1, 1}};
    NormalizedDepthMap norm = normalize(m, mask);
    CHECK(norm.values[0] == doctest::Approx(0.0));
    CHECK(norm.values[1] == doctest::Approx(1.0));
    CHECK(norm.values[2] == doctest::Approx(0.5).epsilon(1.0 / 65535.0));
}

TEST_CASE("normalize rejects near >= far and missing samples under the mask") {
    RawDepthMap m = make_map(2, 1, 100, 500.0f, 500.0f);
    SegMask mask{2, 1, {1, 1}};
    CHECK_THROWS_AS(normalize(m, mask), InvalidArgument);

    RawDepthMap holes = make_map(2, 1, 0, 400.0f, 600.0f);
    holes.values[0] = 50;
    CHECK_THROWS_AS(normalize(holes, mask), InvalidArgument);
}

TEST_CASE("normalize / denormalize round-trips within one u16 quantum") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const float v = float(rng.uniform(0.0, 1.0));
        const uint16_t q = denormalize_value(v);
        const float back = float(RawDepthMap::decode_fraction(q));
        CHECK(std::abs(back - v) <= 1.0f / 65534.0f);
    }
}

TEST_CASE("depth and mask pgm round-trips") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "voxcal_depth_test";
    fs::create_directories(dir);

    Rng rng(5);
    RawDepthMap m = make_map(7, 5, 0, 420.0f, 580.0f);
    for (auto& v : m.values) v = uint16_t(rng.below(65536));
    save_depth_pgm((dir / "d.pgm").string(), m);
    RawDepthMap back = load_depth_pgm((dir / "d.pgm").string(), 420.0f, 580.0f);
    CHECK(back.values == m.values);
    CHECK(back.width == 7);

    SegMask mask{7, 5, std::vector<uint8_t>(35, 0)};
    for (size_t i = 0; i < 35; i += 3) mask.values[i] = 1;
    save_mask_pgm((dir / "m.pgm").string(), mask);
    SegMask mback = load_mask_pgm((dir / "m.pgm").string());
    CHECK(mback.values == mask.values);
}

TEST_CASE("normalized depth persists with sidecar and valid flags") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "voxcal_depth_test";
    fs::create_directories(dir);

    NormalizedDepthMap d;
    d.width = 3;
    d.height = 2;
    d.near = 400.0f;
    d.far = 600.0f;
    d.values = {0.1f, 0.5f, 0.9f, 0.0f, 0.0f, 1.0f};
    d.valid = {1, 1, 1, 0, 0, 1};
    save_normalized((dir / "norm").string(), d);
    NormalizedDepthMap back = load_normalized((dir / "norm").string());
    CHECK(back.width == 3);
    CHECK(back.near == 400.0f);
    CHECK(back.valid == d.valid);
    for (size_t i = 0; i < 6; ++i) {
        if (d.valid[i]) CHECK(back.values[i] == d.values[i]);
    }
}
