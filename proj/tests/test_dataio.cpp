#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "ssldg/dataio.hpp"

using namespace ssldg;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("ssldg_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

double histogram_l1(const Image& a, const Image& b, int bins = 32) {
    std::vector<double> ha(static_cast<std::size_t>(bins), 0.0), hb = ha;
    for (double v : a.pix) ha[std::min<std::size_t>(bins - 1, static_cast<std::size_t>(v * bins))] += 1.0;
    for (double v : b.pix) hb[std::min<std::size_t>(bins - 1, static_cast<std::size_t>(v * bins))] += 1.0;
    double d = 0.0;
    for (int i = 0; i < bins; ++i) d += std::fabs(ha[static_cast<std::size_t>(i)] - hb[static_cast<std::size_t>(i)]);
    return d / static_cast<double>(a.size());
}
}  // namespace

TEST_CASE("phantoms are seed-deterministic with valid labels") {
    PhantomConfig cfg;
    auto [img1, mask1] = gen_phantom(cfg, 5, 42);
    auto [img2, mask2] = gen_phantom(cfg, 5, 42);
    REQUIRE(img1.pix == img2.pix);
    REQUIRE(mask1.lab == mask2.lab);
    auto [img3, mask3] = gen_phantom(cfg, 6, 42);
    REQUIRE(img1.pix != img3.pix);

    for (int v : mask1.lab) {
        REQUIRE(v >= 0);
        REQUIRE(v < cfg.classes);
    }
    for (double v : img1.pix) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
    // each foreground class actually appears somewhere over a few samples
    std::set<int> seen;
    for (std::uint64_t id = 0; id < 8; ++id) {
        auto [im, mk] = gen_phantom(cfg, id, 42);
        for (int v : mk.lab) seen.insert(v);
    }
    REQUIRE(seen == std::set<int>{0, 1, 2, 3});
}

TEST_CASE("domains share masks but shift intensity distributions") {
    PhantomConfig a, b;
    a.domain = 'A';
    b.domain = 'B';
    int shifted = 0;
    for (std::uint64_t id = 0; id < 100; ++id) {
        auto [ia, ma] = gen_phantom(a, id, 7);
        auto [ib, mb] = gen_phantom(b, id, 7);
        REQUIRE(ma.lab == mb.lab);
        if (histogram_l1(ia, ib) > 0.1) ++shifted;
    }
    REQUIRE(shifted == 100);
}

TEST_CASE("dice score endpoints and counting oracle") {
    Mask truth(10, 10, 0);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) truth.at(y, x) = x < 5 ? 1 : 0;
    REQUIRE(dice_score(truth, truth, 1) == 1.0);

    Mask disjoint(10, 10, 0);
    for (int y = 0; y < 10; ++y)
        for (int x = 5; x < 10; ++x) disjoint.at(y, x) = 1;
    REQUIRE(dice_score(disjoint, truth, 1) == 0.0);

    // half coverage: truth has 100 pixels of class 1, prediction 50 of them
    Mask big_truth(20, 10, 0);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) big_truth.at(y, x) = 1;
    Mask half(20, 10, 0);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 10; ++x) half.at(y, x) = 1;
    REQUIRE(dice_score(half, big_truth, 1) == Catch::Approx(2.0 * 50 / 150).margin(1e-12));

    REQUIRE(dice_score(truth, truth, 7) == 1.0);  // empty vs empty

    Rng rng(51);
    Mask ra(8, 8, 0), rb(8, 8, 0);
    for (int& v : ra.lab) v = rng.below(3);
    for (int& v : rb.lab) v = rng.below(3);
    for (int c = 0; c < 3; ++c)
        REQUIRE(dice_score(ra, rb, c) == Catch::Approx(oracle::dice_count(ra, rb, c)).margin(1e-12));
}

TEST_CASE("pgm round trips") {
    const auto dir = temp_dir("pgm");
    Rng rng(52);
    Image img(9, 7);
    for (double& v : img.pix) v = rng.uniform();
    write_pgm((dir / "img.pgm").string(), img);
    const Image back = read_pgm_image((dir / "img.pgm").string());
    REQUIRE(back.h == img.h);
    REQUIRE(back.w == img.w);
    for (std::size_t i = 0; i < img.size(); ++i)
        REQUIRE(back.pix[i] == Catch::Approx(img.pix[i]).margin(1.0 / 65535.0));

    Mask mask(5, 6, 0);
    for (int& v : mask.lab) v = rng.below(4);
    write_pgm((dir / "mask.pgm").string(), mask, 4);
    auto [mback, classes] = read_pgm_mask((dir / "mask.pgm").string());
    REQUIRE(classes == 4);
    REQUIRE(mback.lab == mask.lab);
}

TEST_CASE("malformed pgm files raise parse errors with positions") {
    const auto dir = temp_dir("pgm_bad");
    {
        std::ofstream os(dir / "trunc.pgm", std::ios::binary);
        os << "P5\n6 6\n255\n";
        os.write("abc", 3);  // raster cut short
    }
    REQUIRE_THROWS_AS(read_pgm_image((dir / "trunc.pgm").string()), ParseError);
    try {
        read_pgm_image((dir / "trunc.pgm").string());
    } catch (const ParseError& e) {
        REQUIRE(std::string(e.what()).find("byte") != std::string::npos);
    }
    {
        std::ofstream os(dir / "magic.pgm", std::ios::binary);
        os << "P6\n2 2\n255\n....";
    }
    REQUIRE_THROWS_AS(read_pgm_image((dir / "magic.pgm").string()), ParseError);
    {
        std::ofstream os(dir / "dims.pgm", std::ios::binary);
        os << "P5\n0 4\n255\n";
    }
    REQUIRE_THROWS_AS(read_pgm_image((dir / "dims.pgm").string()), ParseError);
}

TEST_CASE("labeled split is disjoint, exhaustive and seed-deterministic") {
    PhantomConfig cfg;
    cfg.size = 16;
    const Dataset a = synth_dataset(cfg, {'A'}, {20}, 0.2, 3);
    const Dataset b = synth_dataset(cfg, {'A'}, {20}, 0.2, 3);
    int labeled = 0;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        REQUIRE(a.samples[i].labeled == b.samples[i].labeled);
        labeled += a.samples[i].labeled;
    }
    REQUIRE(labeled == 4);

    Dataset c = a;
    apply_labeled_split(c, 'A', 0.5, 3);
    int relabeled = 0;
    for (const Sample& s : c.samples) relabeled += s.labeled;
    REQUIRE(relabeled == 10);
    REQUIRE_THROWS_AS(apply_labeled_split(c, 'A', 1.5, 3), ContractError);
}

TEST_CASE("dataset directory layout round-trips") {
    PhantomConfig cfg;
    cfg.size = 16;
    const Dataset ds = synth_dataset(cfg, {'A', 'B'}, {6, 3}, 0.5, 9);
    const auto dir = temp_dir("dataset");
    save_dataset(dir.string(), ds);
    REQUIRE(fs::exists(dir / "split.txt"));
    REQUIRE(fs::exists(dir / "images" / "A" / "0.pgm"));
    REQUIRE(fs::exists(dir / "masks" / "B" / "2.pgm"));

    const Dataset back = load_dataset(dir.string());
    REQUIRE(back.classes == ds.classes);
    REQUIRE(back.samples.size() == ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        REQUIRE(back.samples[i].id == ds.samples[i].id);
        REQUIRE(back.samples[i].domain == ds.samples[i].domain);
        REQUIRE(back.samples[i].labeled == ds.samples[i].labeled);
        REQUIRE(back.samples[i].mask.lab == ds.samples[i].mask.lab);
        for (std::size_t px = 0; px < ds.samples[i].img.size(); ++px)
            REQUIRE(back.samples[i].img.pix[px] ==
                    Catch::Approx(ds.samples[i].img.pix[px]).margin(1.0 / 65535.0));
    }

    REQUIRE_THROWS_AS(load_dataset((dir / "nowhere").string()), LoadError);
}
