#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sketchgen/corpus.hpp"
#include "sketchgen/pgm.hpp"
#include "sketchgen/ssim.hpp"

using namespace sketchgen;

namespace {
std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("graymap write quantizes round-half-up") {
    const std::string path = temp_path("sg_const.pgm");
    Tensor img = make_image(8, 8, 0.5);
    write_image(path, img);
    std::ifstream f(path, std::ios::binary);
    std::string header;
    std::getline(f, header);
    REQUIRE(header == "P5");
    int w, h, maxval;
    f >> w >> h >> maxval;
    REQUIRE(w == 8);
    REQUIRE(h == 8);
    REQUIRE(maxval == 255);
    f.get();
    for (int i = 0; i < 64; ++i) REQUIRE(f.get() == 128);
}

TEST_CASE("graymap round-trips within one quantization step") {
    Rng rng(12);
    Tensor img = make_image(16, 16);
    for (double& v : img.data()) v = rng.uniform();
    const std::string path = temp_path("sg_rt.pgm");
    write_image(path, img);
    const Tensor back = read_image(path);
    REQUIRE(back.shape() == img.shape());
    for (size_t i = 0; i < img.data().size(); ++i)
        REQUIRE(std::fabs(back.data()[i] - img.data()[i]) <= 1.0 / 255.0);
}

TEST_CASE("graymap reader rejects junk") {
    const std::string path = temp_path("sg_bad.pgm");
    {
        std::ofstream f(path, std::ios::binary);
        f << "P6\n2 2\n255\n....";
    }
    REQUIRE_THROWS_AS(read_image(path), io_error);

    {
        std::ofstream f(path, std::ios::binary);
        f << "P5\n4 4\n255\nxx";  // payload too short
    }
    try {
        read_image(path);
        FAIL("expected io_error");
    } catch (const io_error& e) {
        REQUIRE(e.byte_offset >= 0);
    }
}

TEST_CASE("generator is deterministic and style changes only the strokes") {
    CorpusConfig cfg;
    cfg.validate();
    const std::uint64_t seed = 777;
    const PhotoSketchPair a = generate_pair(seed, 0, Domain::pretrain, cfg);
    const PhotoSketchPair b = generate_pair(seed, 0, Domain::pretrain, cfg);
    REQUIRE(a.photo.data() == b.photo.data());
    REQUIRE(a.sketch.data() == b.sketch.data());

    const PhotoSketchPair c = generate_pair(seed, 1, Domain::pretrain, cfg);
    REQUIRE(a.photo.data() == c.photo.data());  // geometry identical
    REQUIRE(a.sketch.data() != c.sketch.data());
    // thicker style covers more ink
    REQUIRE(ink_coverage(c.sketch) > 1.3 * ink_coverage(a.sketch));
}

TEST_CASE("sketch histogram is bimodal with mostly paper white") {
    CorpusConfig cfg;
    for (int i = 0; i < 12; ++i) {
        for (int style = 0; style < 3; ++style) {
            const PhotoSketchPair p =
                generate_pair(1000 + i, style, i % 2 ? Domain::finetune : Domain::pretrain, cfg);
            long long white = 0;
            for (double v : p.sketch.data()) white += v == 1.0 ? 1 : 0;
            REQUIRE(static_cast<double>(white) / p.sketch.numel() >= 0.6);
        }
    }
}

TEST_CASE("finetune-domain strokes wobble more than pretrain-domain ones") {
    CorpusConfig cfg;
    double pre = 0.0, fin = 0.0;
    const int trials = 24;
    for (int i = 0; i < trials; ++i) {
        const std::uint64_t seed = 5000 + i;
        const SceneGeometry g = sample_geometry(seed);
        pre += stroke_jitter_estimate(generate_pair(seed, 0, Domain::pretrain, cfg).sketch, g);
        fin += stroke_jitter_estimate(generate_pair(seed, 0, Domain::finetune, cfg).sketch, g);
    }
    REQUIRE(fin / trials > pre / trials + 0.1);
}

TEST_CASE("corpus writes and reads back identically") {
    CorpusConfig cfg;
    cfg.pretrain_pairs = 4;
    cfg.finetune_pairs = 3;
    cfg.heldout_pairs = 2;
    cfg.seed = 42;
    const Corpus corpus = build_corpus(cfg);
    REQUIRE(corpus.pretrain.size() == 4);
    REQUIRE(corpus.finetune.size() == 3);
    REQUIRE(corpus.heldout.size() == 2);

    const std::string dir = temp_path("sg_corpus");
    std::filesystem::remove_all(dir);
    write_corpus(dir, corpus);
    const Corpus back = read_corpus(dir);
    REQUIRE(back.pretrain.size() == corpus.pretrain.size());
    REQUIRE(back.heldout[0].style == corpus.heldout[0].style);
    REQUIRE(back.heldout[0].domain == Domain::finetune);
    // images only pass through 8-bit quantization
    for (size_t i = 0; i < corpus.pretrain.size(); ++i)
        for (size_t j = 0; j < corpus.pretrain[i].photo.data().size(); ++j)
            REQUIRE(std::fabs(back.pretrain[i].photo.data()[j] -
                              corpus.pretrain[i].photo.data()[j]) <= 1.0 / 255.0);
}

TEST_CASE("ssim basics") {
    Rng rng(8);
    Tensor a = make_image(16, 16);
    for (double& v : a.data()) v = rng.uniform();
    REQUIRE(ssim(a, a) == 1.0);

    Tensor zeros = make_image(16, 16, 0.0);
    Tensor ones = make_image(16, 16, 1.0);
    const double c1 = 1e-4;
    REQUIRE(ssim(zeros, ones) == Catch::Approx(c1 / (1.0 + c1)).margin(1e-12));

    Tensor b = make_image(16, 16);
    for (double& v : b.data()) v = rng.uniform();
    REQUIRE(ssim(a, b) == ssim(b, a));
    REQUIRE(ssim(a, b) >= -1.0);
    REQUIRE(ssim(a, b) <= 1.0);
    REQUIRE_THROWS_AS(ssim(a, make_image(8, 8)), contract_error);
}
