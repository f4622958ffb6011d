#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "voxcal/rng.hpp"
#include "voxcal/voxel.hpp"

using namespace voxcal;

namespace {

NormalizedDepthMap random_dbar(Rng& rng, int w, int h, double invalid_rate = 0.2) {
    NormalizedDepthMap d;
    d.width = w;
    d.height = h;
    d.near = 0.0f;
    d.far = 1.0f;
    d.values.resize(size_t(w) * size_t(h));
    d.valid.resize(size_t(w) * size_t(h));
    for (size_t i = 0; i < d.values.size(); ++i) {
        d.valid[i] = rng.uniform() >= invalid_rate ? 1 : 0;
        d.values[i] = d.valid[i] ? float(rng.uniform(0.0, 1.0)) : 0.0f;
    }
    return d;
}

// literal triple-loop evaluation of the occupancy rule
VoxelGrid voxel_oracle(const NormalizedDepthMap& dbar, int64_t z_res) {
    VoxelGrid g(z_res, dbar.height, dbar.width);
    for (int64_t z = 0; z < z_res; ++z) {
        for (int64_t y = 0; y < dbar.height; ++y) {
            for (int64_t x = 0; x < dbar.width; ++x) {
                const size_t i = size_t(y) * size_t(dbar.width) + size_t(x);
                if (!dbar.valid[i]) continue;
                const int64_t surface = std::lround(double(dbar.values[i]) * double(z_res - 1));
                g.set(z, y, x, z >= surface);
            }
        }
    }
    return g;
}

NormalizedDepthMap const_dbar(int w, int h, float value) {
    NormalizedDepthMap d;
    d.width = w;
    d.height = h;
    d.values.assign(size_t(w) * size_t(h), value);
    d.valid.assign(size_t(w) * size_t(h), 1);
    return d;
}

} // namespace

TEST_CASE("depth_to_voxel: surface at the near plane fills the whole grid") {
    VoxelGrid g = depth_to_voxel(const_dbar(4, 4, 0.0f), 4);
    CHECK(g.occupied_count() == 64);
}

TEST_CASE("depth_to_voxel: surface at the far plane occupies only the last slice") {
    VoxelGrid g = depth_to_voxel(const_dbar(4, 4, 1.0f), 4);
    CHECK(g.occupied_count() == 16);
    for (int64_t y = 0; y < 4; ++y) {
        for (int64_t x = 0; x < 4; ++x) CHECK(g.at(3, y, x));
    }
}

TEST_CASE("depth_to_voxel matches the triple-loop oracle cell for cell") {
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        NormalizedDepthMap d = random_dbar(rng, 16, 16);
        VoxelGrid got = depth_to_voxel(d, 16);
        VoxelGrid expect = voxel_oracle(d, 16);
        REQUIRE(got.occ == expect.occ);
    }
}

TEST_CASE("depth_to_voxel: invalid pixels give all-free columns") {
    NormalizedDepthMap d = const_dbar(2, 1, 0.0f);
    d.valid[1] = 0;
    VoxelGrid g = depth_to_voxel(d, 8);
    for (int64_t z = 0; z < 8; ++z) {
        CHECK(g.at(z, 0, 0));
        CHECK_FALSE(g.at(z, 0, 1));
    }
}

TEST_CASE("depth_to_voxel rejects z_res < 2") {
    CHECK_THROWS_AS(depth_to_voxel(const_dbar(2, 2, 0.5f), 1), InvalidArgument);
}

TEST_CASE("column-suffix structure holds for every depth-derived grid") {
    Rng rng(321);
    for (int trial = 0; trial < 20; ++trial) {
        NormalizedDepthMap d = random_dbar(rng, 9, 7);
        VoxelGrid g = depth_to_voxel(d, 12);
        for (int64_t y = 0; y < g.ydim; ++y) {
            for (int64_t x = 0; x < g.xdim; ++x) {
                bool seen = false;
                for (int64_t z = 0; z < g.zdim; ++z) {
                    const bool occ = g.at(z, y, x);
                    if (seen) CHECK(occ); // once occupied, occupied to the far plane
                    seen = seen || occ;
                }
            }
        }
    }
}

TEST_CASE("monotonicity: deeper surfaces never increase the volume") {
    Rng rng(55);
    NormalizedDepthMap a = random_dbar(rng, 12, 12, 0.0);
    NormalizedDepthMap b = a;
    for (auto& v : b.values) v = std::min(1.0f, v + 0.25f); // deeper everywhere
    CHECK(volume(depth_to_voxel(b, 16)) <= volume(depth_to_voxel(a, 16)));
}

TEST_CASE("volume: trivial counts and cell_volume scaling") {
    VoxelGrid empty(4, 4, 4);
    CHECK(volume(empty) == 0.0f);

    VoxelGrid full(3, 4, 5, 1.0f);
    for (auto& v : full.occ) v = 1;
    CHECK(volume(full) == 60.0f);

    full.cell_volume = 2.5f;
    CHECK(volume(full) == 150.0f);
}

TEST_CASE("voxel_iou: identity, disjoint, subset, and empty-vs-empty") {
    VoxelGrid a(2, 4, 5), b(2, 4, 5);
    CHECK(voxel_iou(a, b) == 1.0f); // both empty

    for (int i = 0; i < 10; ++i) a.occ[size_t(i)] = 1;
    CHECK(voxel_iou(a, a) == 1.0f);

    for (int i = 10; i < 20; ++i) b.occ[size_t(i)] = 1;
    CHECK(voxel_iou(a, b) == 0.0f);

    VoxelGrid super(2, 4, 5);
    for (int i = 0; i < 40; ++i) super.occ[size_t(i)] = 1;
    CHECK(voxel_iou(a, super) == doctest::Approx(0.25f));

    VoxelGrid other(3, 4, 5);
    CHECK_THROWS_AS(voxel_iou(a, other), InvalidArgument);
}

TEST_CASE("binarize: thresholds with ties occupied and validates inputs") {
    Tensor probs(Shape{1, 2, 2}, std::vector<float>{0.0f, 0.5f, 0.49999f, 1.0f});
    VoxelGrid g = binarize(probs, 0.5f);
    CHECK_FALSE(g.at(0, 0, 0));
    CHECK(g.at(0, 0, 1)); // exactly tau -> occupied
    CHECK_FALSE(g.at(0, 1, 0));
    CHECK(g.at(0, 1, 1));

    Tensor all_ones(Shape{2, 2, 2}, std::vector<float>(8, 1.0f));
    CHECK(binarize(all_ones, 0.5f).occupied_count() == 8);
    Tensor low(Shape{2, 2, 2}, std::vector<float>(8, 0.2f));
    CHECK(binarize(low, 0.5f).occupied_count() == 0);

    Tensor bad(Shape{1, 1, 1}, std::vector<float>{1.5f});
    CHECK_THROWS_AS(binarize(bad, 0.5f), InvalidArgument);
    CHECK_THROWS_AS(binarize(low, 0.0f), InvalidArgument);
    CHECK_THROWS_AS(binarize(Tensor(Shape{2, 2}), 0.5f), InvalidArgument);
}

TEST_CASE("vox.bin round-trip preserves occupancy, dims and cell volume") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "voxcal_voxel_test";
    fs::create_directories(dir);

    Rng rng(9);
    VoxelGrid g(5, 6, 7, 1.75f);
    for (auto& v : g.occ) v = rng.bernoulli(0.3) ? 1 : 0;
    const std::string path = (dir / "grid.vox.bin").string();
    save_voxel(path, g);
    VoxelGrid back = load_voxel(path);
    CHECK(back.same_dims(g));
    CHECK(back.cell_volume == g.cell_volume);
    CHECK(back.occ == g.occ);
}

TEST_CASE("voxel_to_tensor mirrors occupancy as 0/1 floats") {
    VoxelGrid g(2, 1, 2);
    g.set(0, 0, 1, true);
    g.set(1, 0, 0, true);
    Tensor t = voxel_to_tensor(g);
    CHECK(t.shape() == Shape{2, 1, 2});
    CHECK(t.at(0) == 0.0f);
    CHECK(t.at(1) == 1.0f);
    CHECK(t.at(2) == 1.0f);
    CHECK(t.at(3) == 0.0f);
}
