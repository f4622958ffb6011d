#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "voxcal/checkpoint.hpp"
#include "voxcal/rng.hpp"

using namespace voxcal;
namespace fs = std::filesystem;

namespace {
const fs::path tmp_root = fs::temp_directory_path() / "voxcal_ckpt_test";
}

TEST_CASE("checkpoint round-trip is bit-exact, including odd float values") {
    fs::create_directories(tmp_root);
    Rng rng(1);
    std::vector<float> a(257);
    for (auto& v : a) v = float(rng.normal() * 1e3);
    a[0] = 0.0f;
    a[1] = -0.0f;
    a[2] = std::bit_cast<float>(uint32_t(0x7fc00001)); // quiet NaN payload
    a[3] = std::numeric_limits<float>::infinity();
    a[4] = std::numeric_limits<float>::denorm_min();

    std::vector<float> b(16);
    for (auto& v : b) v = float(rng.uniform(-1, 1));

    const std::string path = (tmp_root / "roundtrip.ckpt").string();
    save_checkpoint(path, {{"alpha", Tensor(Shape{257}, a)}, {"beta.w", Tensor(Shape{4, 4}, b)}});

    auto loaded = load_checkpoint(path);
    REQUIRE(loaded.size() == 2);
    REQUIRE(loaded.count("alpha") == 1);
    REQUIRE(loaded.count("beta.w") == 1);
    CHECK(loaded.at("alpha").shape() == Shape{257});
    CHECK(loaded.at("beta.w").shape() == Shape{4, 4});
    CHECK(std::memcmp(loaded.at("alpha").data().data(), a.data(), a.size() * 4) == 0);
    CHECK(std::memcmp(loaded.at("beta.w").data().data(), b.data(), b.size() * 4) == 0);
}

TEST_CASE("checkpoint files start with the magic and reject foreign files") {
    fs::create_directories(tmp_root);
    const std::string path = (tmp_root / "magic.ckpt").string();
    save_checkpoint(path, {{"x", Tensor::scalar(1.0f)}});

    std::ifstream is(path, std::ios::binary);
    char magic[8];
    is.read(magic, 8);
    CHECK(std::memcmp(magic, "VOXCAL01", 8) == 0);

    const std::string bad = (tmp_root / "bad.ckpt").string();
    std::ofstream os(bad, std::ios::binary);
    os << "definitely not a checkpoint";
    os.close();
    CHECK_THROWS_AS(load_checkpoint(bad), IoError);
}

TEST_CASE("save twice produces identical bytes") {
    fs::create_directories(tmp_root);
    Rng rng(9);
    std::vector<float> d(64);
    for (auto& v : d) v = float(rng.uniform(-2, 2));
    const std::string p1 = (tmp_root / "a.ckpt").string();
    const std::string p2 = (tmp_root / "b.ckpt").string();
    save_checkpoint(p1, {{"t", Tensor(Shape{8, 8}, d)}});
    save_checkpoint(p2, {{"t", Tensor(Shape{8, 8}, d)}});

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
}

TEST_CASE("missing checkpoint raises MissingArtifact with the path") {
    const std::string path = (tmp_root / "nope" / "missing.ckpt").string();
    try {
        load_checkpoint_required(path);
        FAIL("expected MissingArtifact");
    } catch (const MissingArtifact& e) {
        CHECK(std::string(e.what()).find(path) != std::string::npos);
    }
}
