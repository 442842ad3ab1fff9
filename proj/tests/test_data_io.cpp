#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "tagat/data_io.hpp"
#include "tagat/error.hpp"

using namespace tagat;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir() {
    auto p = fs::temp_directory_path() / "tagat_data_io_test";
    fs::create_directories(p);
    return p;
}

Plane gradient_plane(int h, int w) {
    Plane p(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) p.at(y, x) = (y * w + x) % 256 / 255.0;
    return p;
}

} // namespace

TEST_CASE("load_pair: gray + color inputs and chroma retention") {
    auto dir = tmpdir();
    Plane gray = gradient_plane(64, 80);
    save_png_gray(gray, (dir / "g.png").string());

    // color image with non-trivial chroma
    Plane lum = gradient_plane(64, 80);
    std::array<Plane, 2> chroma{Plane(64, 80, 0.6), Plane(64, 80, 0.4)};
    save_png_color(lum, chroma, (dir / "c.png").string());

    RegisteredPair pair = load_pair((dir / "g.png").string(), (dir / "c.png").string());
    CHECK(pair.image1.h == 64);
    CHECK(pair.image1.w == 80);
    CHECK_FALSE(pair.chroma1.has_value());
    CHECK(pair.chroma2.has_value());
    for (double v : pair.image1.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // 8-bit gray round trip is exact up to quantization
    for (int i = 0; i < 64 * 80; ++i)
        CHECK(pair.image1.v[i] == doctest::Approx(std::round(gray.v[i] * 255) / 255.0));
}

TEST_CASE("load_pair: identical file twice gives identical images") {
    auto dir = tmpdir();
    save_png_gray(gradient_plane(32, 40), (dir / "same.png").string());
    RegisteredPair pair = load_pair((dir / "same.png").string(), (dir / "same.png").string());
    CHECK(pair.image1.v == pair.image2.v);
}

TEST_CASE("load_pair: 16-bit input normalized by 65535, not the per-image max") {
    auto dir = tmpdir();
    cv::Mat m16(10, 12, CV_16U);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 12; ++x) m16.at<uint16_t>(y, x) = static_cast<uint16_t>(y * 700 + x);
    REQUIRE(cv::imwrite((dir / "a16.png").string(), m16));
    RegisteredPair pair = load_pair((dir / "a16.png").string(), (dir / "a16.png").string());
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 12; ++x)
            CHECK(pair.image1.at(y, x) == doctest::Approx((y * 700 + x) / 65535.0).epsilon(1e-12));

    cv::Mat t16(10, 12, CV_16U, cv::Scalar(30000));
    REQUIRE(cv::imwrite((dir / "a16.tiff").string(), t16));
    RegisteredPair tiff = load_pair((dir / "a16.tiff").string(), (dir / "a16.tiff").string());
    CHECK(tiff.image1.at(0, 0) == doctest::Approx(30000.0 / 65535.0));
}

TEST_CASE("load_pair: dimension mismatch is a registration error") {
    auto dir = tmpdir();
    save_png_gray(gradient_plane(64, 80), (dir / "a.png").string());
    save_png_gray(gradient_plane(64, 96), (dir / "b.png").string());
    CHECK_THROWS_AS(load_pair((dir / "a.png").string(), (dir / "b.png").string()),
                    RegistrationError);
}

TEST_CASE("load_pair: undecodable file raises a format error") {
    auto dir = tmpdir();
    {
        std::ofstream out(dir / "junk.png");
        out << "this is not an image";
    }
    save_png_gray(gradient_plane(8, 8), (dir / "ok.png").string());
    CHECK_THROWS_AS(load_pair((dir / "junk.png").string(), (dir / "ok.png").string()),
                    FormatError);
    CHECK_THROWS_AS(load_pair((dir / "missing.png").string(), (dir / "ok.png").string()),
                    FormatError);
}

TEST_CASE("augment: identity spec is bitwise identity") {
    SyntheticSceneSpec spec;
    spec.seed = 7;
    RegisteredPair pair = generate_synthetic_pair(spec);
    RegisteredPair out = augment(pair, AugmentationSpec(false, 0.0, 0, 0));
    CHECK(out.image1.v == pair.image1.v);
    CHECK(out.image2.v == pair.image2.v);
    CHECK(out.mask1->v == pair.mask1->v);
}

TEST_CASE("augment: horizontal flip applied twice recovers the original") {
    SyntheticSceneSpec spec;
    spec.seed = 8;
    RegisteredPair pair = generate_synthetic_pair(spec);
    AugmentationSpec flip(true, 0.0, 0, 0);
    RegisteredPair twice = augment(augment(pair, flip), flip);
    CHECK(twice.image1.v == pair.image1.v);
    CHECK(twice.mask2->v == pair.mask2->v);
}

TEST_CASE("augment: rotation fixed point at the center pixel") {
    RegisteredPair pair;
    pair.id = "center";
    pair.image1 = Plane(65, 81, 0.0);
    pair.image1.at(32, 40) = 1.0; // exact center of odd dims
    pair.image2 = pair.image1;
    RegisteredPair out = augment(pair, AugmentationSpec(false, 8.0, 0, 0));
    CHECK(out.image1.at(32, 40) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.image1.h == 65);
    CHECK(out.image1.w == 81);
}

TEST_CASE("augment: shared transform moves both masks identically") {
    SyntheticSceneSpec spec;
    spec.seed = 9;
    RegisteredPair pair = generate_synthetic_pair(spec);
    RegisteredPair out = augment(pair, AugmentationSpec(true, 5.0, 4, -3));
    CHECK(out.mask1->v == out.mask2->v);
    for (double v : out.mask1->v) CHECK((v == 0.0 || v == 1.0));
    for (double v : out.image1.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("augment: spec ranges enforced at construction") {
    CHECK_THROWS_AS(AugmentationSpec(false, 9.0, 0, 0), ConfigError);
    CHECK_THROWS_AS(AugmentationSpec(false, 0.0, 21, 0), ConfigError);
    CHECK_THROWS_AS(AugmentationSpec(false, 0.0, 0, -21), ConfigError);
    CHECK_NOTHROW(AugmentationSpec(true, -8.0, 20, -20));
    // sampled specs stay in range
    for (uint64_t s = 0; s < 20; ++s) CHECK_NOTHROW(AugmentationSpec::random(s));
}

TEST_CASE("synthetic: deterministic per seed, shared topology") {
    SyntheticSceneSpec spec;
    spec.seed = 42;
    RegisteredPair a = generate_synthetic_pair(spec);
    RegisteredPair b = generate_synthetic_pair(spec);
    CHECK(a.image1.v == b.image1.v);
    CHECK(a.image2.v == b.image2.v);
    CHECK(a.mask1->v == b.mask1->v);
    CHECK(a.mask1->v == a.mask2->v); // same tree for both modalities
    spec.seed = 43;
    RegisteredPair c = generate_synthetic_pair(spec);
    CHECK(a.image1.v != c.image1.v);
}

TEST_CASE("synthetic: invalid spec rejected") {
    SyntheticSceneSpec spec;
    spec.vessel_tree_depth = 0;
    CHECK_THROWS_AS(generate_synthetic_pair(spec), ConfigError);
}

TEST_CASE("resize_pair: identity, constants and the paper target size") {
    SyntheticSceneSpec spec;
    spec.seed = 5;
    RegisteredPair pair = generate_synthetic_pair(spec);

    RegisteredPair same = resize_pair(pair, pair.image1.h, pair.image1.w);
    CHECK(same.image1.v == pair.image1.v);

    RegisteredPair flat;
    flat.image1 = Plane(20, 30, 0.37);
    flat.image2 = Plane(20, 30, 0.37);
    RegisteredPair bigger = resize_pair(flat, 41, 63);
    for (double v : bigger.image1.v) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));

    RegisteredPair paper = resize_pair(pair, 288, 360);
    CHECK(paper.image1.h == 288);
    CHECK(paper.image1.w == 360);
    CHECK(paper.mask1->h == 288);
    for (double v : paper.mask1->v) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("manifest round trip") {
    auto dir = tmpdir();
    std::vector<ManifestEntry> entries{{"p0", "a.png", "b.png", "ma.png", ""},
                                       {"p1", "c.png", "d.png", "", ""}};
    write_manifest((dir / "m.jsonl").string(), entries);
    auto back = read_manifest((dir / "m.jsonl").string());
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "p0");
    CHECK(back[0].mask1 == "ma.png");
    CHECK(back[1].mask1.empty());
    CHECK_THROWS_AS(read_manifest((dir / "nope.jsonl").string()), FormatError);
}
