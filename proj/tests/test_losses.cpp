#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sketchgen/losses.hpp"
#include "sketchgen/pgm.hpp"

using namespace sketchgen;

namespace {

// Independent cross-entropy oracle over masked positions, long-form math.
double mim_oracle(const Tensor& logits, const TokenGrid& z,
                  const std::vector<std::uint8_t>& mask, bool literal) {
    const int n = logits.dim(0), c = logits.dim(1);
    double total = 0.0;
    int m = 0;
    for (int i = 0; i < n; ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        ++m;
        const double* row = logits.data().data() + static_cast<size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
        const double logp = row[z.indices[static_cast<size_t>(i)]] - mx - std::log(denom);
        total -= logp;
    }
    return total / (literal ? (n - m) : m);
}

}  // namespace

TEST_CASE("mim_loss equals ln 2 on a uniform two-way row") {
    Tensor logits = Tensor::from_data({2, 2}, {3.0, -1.0, 0.0, 0.0});
    TokenGrid z(1, 2);
    z.indices = {0, 1};
    const std::vector<std::uint8_t> mask = {0, 1};
    REQUIRE(mim_loss(logits, z, mask).value() ==
            Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("mim_loss matches the independent oracle on random cases") {
    Rng rng(404);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = rng.uniform_int(2, 8);
        const int c = rng.uniform_int(2, 6);
        Tensor logits = Tensor::randn({n, c}, rng, 2.0);
        TokenGrid z(1, n);
        for (int& v : z.indices) v = rng.uniform_int(0, c - 1);
        std::vector<std::uint8_t> mask(static_cast<size_t>(n), 0);
        int m = 0;
        while (m == 0) {
            for (auto& b : mask) b = rng.uniform() < 0.5 ? 1 : 0;
            m = 0;
            for (auto b : mask) m += b;
        }
        REQUIRE(mim_loss(logits, z, mask).value() ==
                Catch::Approx(mim_oracle(logits, z, mask, false)).margin(1e-9));
        if (m < n)
            REQUIRE(mim_loss(logits, z, mask, MimNorm::literal).value() ==
                    Catch::Approx(mim_oracle(logits, z, mask, true)).margin(1e-9));
    }
}

TEST_CASE("perfect prediction drives mim_loss to zero") {
    TokenGrid z(1, 3);
    z.indices = {2, 0, 1};
    Tensor logits = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i)
        logits.data()[static_cast<size_t>(i) * 3 + z.indices[static_cast<size_t>(i)]] = 60.0;
    REQUIRE(mim_loss(logits, z, {1, 1, 1}).value() < 1e-12);
}

TEST_CASE("mim_loss ignores unmasked rows in value and gradient") {
    Rng rng(9);
    Tensor logits = Tensor::randn({4, 5}, rng, 1.0, true);
    TokenGrid z(2, 2);
    z.indices = {4, 1, 0, 2};
    const std::vector<std::uint8_t> mask = {0, 1, 1, 0};
    const double base = mim_loss(logits, z, mask).value();

    Tensor perturbed = logits.detached();
    for (int j = 0; j < 5; ++j) {
        perturbed.data()[j] += 10.0;            // row 0: unmasked
        perturbed.data()[15 + j] -= 3.0;        // row 3: unmasked
    }
    REQUIRE(mim_loss(perturbed, z, mask).value() == Catch::Approx(base).margin(1e-12));

    backward(mim_loss(logits, z, mask));
    for (int j = 0; j < 5; ++j) {
        REQUIRE(logits.grad()[static_cast<size_t>(j)] == 0.0);
        REQUIRE(logits.grad()[15 + static_cast<size_t>(j)] == 0.0);
    }
    // masked rows do receive gradient
    double row1 = 0.0;
    for (int j = 0; j < 5; ++j) row1 += std::fabs(logits.grad()[5 + static_cast<size_t>(j)]);
    REQUIRE(row1 >  0.0);
}

TEST_CASE("mim_loss gradient passes finite differences") {
    Rng rng(10);
    Tensor logits = Tensor::randn({4, 6}, rng);
    TokenGrid z(2, 2);
    z.indices = {5, 1, 0, 3};
    const std::vector<std::uint8_t> mask = {1, 0, 1, 1};
    const double err =
        finite_diff_check([&] { return mim_loss(logits, z, mask); }, logits, 1e-5);
    REQUIRE(err <= 1e-4);
}

TEST_CASE("mim_loss contract violations") {
    Tensor logits = Tensor::zeros({2, 3});
    TokenGrid z(1, 2);
    z.indices = {0, 1};
    REQUIRE_THROWS_AS(mim_loss(logits, z, {0, 0}), contract_error);          // M = 0
    REQUIRE_THROWS_AS(mim_loss(logits, z, {1, 1}, MimNorm::literal), contract_error);
    TokenGrid bad(1, 2);
    bad.indices = {0, 7};
    REQUIRE_THROWS_AS(mim_loss(logits, bad, {1, 1}), contract_error);
}

TEST_CASE("pixel_loss basics") {
    Tensor a = Tensor::filled({1, 4, 4}, 0.5);
    Tensor b = Tensor::filled({1, 4, 4}, 0.25);
    REQUIRE(pixel_loss(a, a).value() == 0.0);
    REQUIRE(pixel_loss(a, b).value() == Catch::Approx(0.25).margin(1e-15));

    Tensor c = a.detached();
    c.data()[5] += 0.8;  // single differing pixel
    REQUIRE(pixel_loss(a, c).value() == Catch::Approx(0.8 / 16.0).margin(1e-15));
    REQUIRE(pixel_loss(a, c, PixelNorm::sum).value() == Catch::Approx(0.8).margin(1e-12));
    REQUIRE_THROWS_AS(pixel_loss(a, Tensor::zeros({1, 2, 2})), contract_error);
}

TEST_CASE("perceptual_loss basics") {
    EncoderConfig ec;
    ec.resolution = 16;
    ec.d_e = 8;
    ec.channels = {6, 8};
    ec.seed = 3;
    FeatureEncoder enc(ec);
    PerceptualConfig pc;
    pc.layers = {0, 1};
    pc.weights = {0.5, 0.5};

    Rng rng(4);
    Tensor a = make_image(16, 16);
    for (double& v : a.data()) v = rng.uniform();
    Tensor b = make_image(16, 16);
    for (double& v : b.data()) v = rng.uniform();

    REQUIRE(perceptual_loss(a, a, enc, pc).value() == 0.0);
    REQUIRE(perceptual_loss(a, b, enc, pc).value() ==
            Catch::Approx(perceptual_loss(b, a, enc, pc).value()).margin(1e-12));
    REQUIRE(perceptual_loss(a, b, enc, pc).value() > 0.0);

    PerceptualConfig zero = pc;
    zero.weights = {0.0, 0.0};
    REQUIRE(perceptual_loss(a, b, enc, zero).value() == 0.0);

    PerceptualConfig bad = pc;
    bad.layers = {0, 5};
    REQUIRE_THROWS_AS(perceptual_loss(a, b, enc, bad), config_error);
}

TEST_CASE("total objective weighting") {
    const LossWeights w{4.0, 10.0};
    Tensor mim = Tensor::scalar(0.5);
    Tensor pix = Tensor::scalar(0.1);
    Tensor pcpt = Tensor::scalar(0.02);
    const Objective obj = total_objective(mim, pix, pcpt, w);
    REQUIRE(obj.d1.value() == 0.5);
    REQUIRE(obj.d2.value() == Catch::Approx(0.6).margin(1e-15));
    REQUIRE(obj.total.value() == Catch::Approx(1.1).margin(1e-15));

    SECTION("all-zero losses give zero total") {
        const Objective z = total_objective(Tensor::scalar(0.0), Tensor::scalar(0.0),
                                            Tensor::scalar(0.0), w);
        REQUIRE(z.total.value() == 0.0);
    }
    SECTION("zero weights reduce the objective to the masked-token term") {
        const Objective z = total_objective(mim, pix, pcpt, LossWeights{0.0, 0.0});
        REQUIRE(z.total.value() == mim.value());
        REQUIRE(z.d2.value() == 0.0);
    }
    SECTION("scaling both weights scales D2 exactly") {
        const Objective base = total_objective(mim, pix, pcpt, LossWeights{4.0, 10.0});
        const Objective scaled = total_objective(mim, pix, pcpt, LossWeights{12.0, 30.0});
        REQUIRE(scaled.d2.value() == Catch::Approx(3.0 * base.d2.value()).margin(1e-12));
    }
    SECTION("negative weights are rejected") {
        REQUIRE_THROWS_AS(total_objective(mim, pix, pcpt, LossWeights{-1.0, 0.0}), config_error);
    }
}
