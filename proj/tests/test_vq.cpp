#include <catch2/catch_amalgamated.hpp>

#include "sketchgen/vq.hpp"

using namespace sketchgen;

namespace {

VqConfig small_cfg() {
    VqConfig cfg;
    cfg.resolution = 16;
    cfg.grid_h = cfg.grid_w = 4;
    cfg.codebook_size = 16;
    cfg.code_dim = 8;
    cfg.enc_channels = {12, 16};
    cfg.dec_channels = {16, 12, 6};
    return cfg;
}

std::vector<PhotoSketchPair> small_pairs(int count) {
    CorpusConfig cc;
    cc.resolution = 16;
    std::vector<PhotoSketchPair> out;
    for (int i = 0; i < count; ++i)
        out.push_back(generate_pair(9000 + i, i % 3, Domain::pretrain, cc));
    return out;
}

// Independent exhaustive scan used as the quantizer oracle.
int brute_force_nearest(const double* v, const Tensor& codebook, int d) {
    int best = -1;
    double best_dist = 0.0;
    for (int k = 0; k < codebook.dim(0); ++k) {
        double dist = 0.0;
        for (int j = 0; j < d; ++j) {
            const double diff = v[j] - codebook.data()[static_cast<size_t>(k) * d + j];
            dist += diff * diff;
        }
        if (best < 0 || dist < best_dist) {
            best_dist = dist;
            best = k;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("quantize_nearest picks the closest entry with low-index ties") {
    Tensor codebook = Tensor::from_data({2, 2}, {0.0, 0.0, 1.0, 1.0});
    Tensor q1 = Tensor::from_data({1, 2}, {0.9, 0.8});
    REQUIRE(quantize_nearest(q1, codebook) == std::vector<int>{1});
    Tensor q2 = Tensor::from_data({1, 2}, {0.0, 0.0});
    REQUIRE(quantize_nearest(q2, codebook) == std::vector<int>{0});
    Tensor q3 = Tensor::from_data({1, 2}, {0.5, 0.5});  // equidistant
    REQUIRE(quantize_nearest(q3, codebook) == std::vector<int>{0});
    REQUIRE_THROWS_AS(quantize_nearest(Tensor::zeros({1, 3}), codebook), contract_error);
}

TEST_CASE("quantize_nearest agrees exactly with the brute-force oracle") {
    Rng rng(2718);
    const int c = 64, d = 16, n = 1000;
    Tensor codebook = Tensor::randn({c, d}, rng);
    Tensor latents = Tensor::randn({n, d}, rng);
    const std::vector<int> got = quantize_nearest(latents, codebook);
    for (int i = 0; i < n; ++i)
        REQUIRE(got[static_cast<size_t>(i)] ==
                brute_force_nearest(latents.data().data() + static_cast<size_t>(i) * d, codebook,
                                    d));
}

TEST_CASE("quantize_nearest is idempotent on codebook entries") {
    Rng rng(33);
    Tensor codebook = Tensor::randn({16, 8}, rng);
    const std::vector<int> got = quantize_nearest(codebook, codebook);
    for (int i = 0; i < 16; ++i) REQUIRE(got[static_cast<size_t>(i)] == i);
}

TEST_CASE("tokenize honors its contracts") {
    VqCodec codec(small_cfg(), 5);
    const auto pairs = small_pairs(2);
    const TokenGrid a = codec.tokenize(pairs[0].sketch);
    const TokenGrid b = codec.tokenize(pairs[0].sketch);
    REQUIRE(a.indices == b.indices);
    REQUIRE(a.num_tokens() == 16);
    for (int idx : a.indices) {
        REQUIRE(idx >= 0);
        REQUIRE(idx != kMaskSentinel);
        REQUIRE(idx < 16);
    }
    REQUIRE_THROWS_AS(codec.tokenize(make_image(8, 8)), contract_error);
    Tensor bad = make_image(16, 16, 2.0);
    REQUIRE_THROWS_AS(codec.tokenize(bad), contract_error);
}

TEST_CASE("decode is total on valid grids and rejects sentinels") {
    VqCodec codec(small_cfg(), 5);
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        TokenGrid grid(4, 4);
        for (int& v : grid.indices) v = rng.uniform_int(0, 15);
        const Tensor img = codec.decode(grid);
        REQUIRE(img.shape() == Shape{1, 16, 16});
        for (double v : img.data()) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
        REQUIRE(codec.decode(grid).data() == img.data());  // deterministic
    }
    TokenGrid bad(4, 4);
    bad.indices[3] = kMaskSentinel;
    REQUIRE_THROWS_AS(codec.decode(bad), contract_error);
}

TEST_CASE("stage-0 training reduces reconstruction loss and is seed-stable") {
    const auto pairs = small_pairs(12);
    const VqConfig cfg = small_cfg();
    std::vector<double> recon;
    VqCodec codec = train_vq_stage0(pairs, cfg, 120, 4, 3e-3, 99,
                                    [&](const VqStepStats& s) { recon.push_back(s.recon_l1); });
    REQUIRE(recon.back() < recon.front());
    REQUIRE(all_finite(codec.codebook()));

    SECTION("same seed reproduces the codebook bit for bit") {
        VqCodec codec2 = train_vq_stage0(pairs, cfg, 120, 4, 3e-3, 99);
        REQUIRE(codec2.codebook().data() == codec.codebook().data());
    }
    SECTION("empty corpus is a configuration error") {
        REQUIRE_THROWS_AS(train_vq_stage0({}, cfg, 10, 2, 1e-3, 1), config_error);
    }
}
