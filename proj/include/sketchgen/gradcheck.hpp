#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "conditioning.hpp"
#include "losses.hpp"
#include "masking.hpp"
#include "tensor.hpp"
#include "transformer.hpp"

namespace sketchgen {

struct GradCheckResult {
    std::string name;
    double error = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

namespace detail {

// Random values bounded away from zero, for kinked activations.
inline Tensor randn_away_from_zero(Shape shape, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) {
        const double mag = 0.25 + 0.75 * rng.uniform();
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

// Scalarizes an op output with fixed random weights so every element's
// gradient is exercised.
inline Tensor weighted_sum(const Tensor& out, const Tensor& weights) {
    return sum_all(mul(out, weights));
}

}  // namespace detail

// Finite-difference verification of every differentiable primitive plus the
// composed masked-token loss through the full transformer. Primitive budget
// is 1e-4 relative error; the end-to-end check gets 1e-3.
inline std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed = 20240817) {
    std::vector<GradCheckResult> results;
    Rng rng(seed);
    const double h = 1e-5;
    constexpr double kPrimTol = 1e-4;
    constexpr double kEndTol = 1e-3;

    auto check = [&](const std::string& name, double tol, Tensor& x,
                     const std::function<Tensor()>& f) {
        GradCheckResult r;
        r.name = name;
        r.tolerance = tol;
        r.error = finite_diff_check(f, x, h);
        r.pass = r.error <= tol;
        results.push_back(r);
    };

    {
        Tensor a = Tensor::randn({4, 8}, rng);
        Tensor b = Tensor::randn({4, 8}, rng);
        Tensor w = Tensor::randn({4, 8}, rng);
        check("add", kPrimTol, a, [&] { return detail::weighted_sum(add(a, b), w); });
        check("sub", kPrimTol, b, [&] { return detail::weighted_sum(sub(a, b), w); });
        check("mul", kPrimTol, a, [&] { return detail::weighted_sum(mul(a, b), w); });
        check("add_scalar", kPrimTol, a,
              [&] { return detail::weighted_sum(add_scalar(a, 0.7), w); });
        check("mul_scalar", kPrimTol, a,
              [&] { return detail::weighted_sum(mul_scalar(a, -1.3), w); });
    }
    {
        Tensor a = Tensor::randn({4, 6}, rng);
        Tensor b = Tensor::randn({6, 5}, rng);
        Tensor w = Tensor::randn({4, 5}, rng);
        check("matmul_lhs", kPrimTol, a, [&] { return detail::weighted_sum(matmul(a, b), w); });
        check("matmul_rhs", kPrimTol, b, [&] { return detail::weighted_sum(matmul(a, b), w); });
    }
    {
        Tensor a = Tensor::randn({6, 8}, rng);
        Tensor w = Tensor::randn({6, 8}, rng);
        check("softmax_rows", kPrimTol, a,
              [&] { return detail::weighted_sum(softmax_rows(a), w); });
        check("log_softmax_rows", kPrimTol, a,
              [&] { return detail::weighted_sum(log_softmax_rows(a), w); });
        check("layer_norm_rows", kPrimTol, a,
              [&] { return detail::weighted_sum(layer_norm_rows(a), w); });
    }
    {
        Tensor x = detail::randn_away_from_zero({3, 4}, rng);
        Tensor w = Tensor::randn({3, 4}, rng);
        check("relu", kPrimTol, x, [&] { return detail::weighted_sum(relu(x), w); });
        check("abs", kPrimTol, x, [&] { return detail::weighted_sum(abs_t(x), w); });
        Tensor y = Tensor::randn({3, 4}, rng);
        check("tanh", kPrimTol, y, [&] { return detail::weighted_sum(tanh_t(y), w); });
        check("sigmoid", kPrimTol, y, [&] { return detail::weighted_sum(sigmoid(y), w); });
        check("gelu", kPrimTol, y, [&] { return detail::weighted_sum(gelu(y), w); });
    }
    {
        Tensor x = Tensor::randn({2, 4, 4}, rng);
        Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.5);
        Tensor b = Tensor::randn({3}, rng, 0.2);
        Tensor ws = Tensor::randn({3, 4, 4}, rng);
        check("conv2d_input", kPrimTol, x,
              [&] { return detail::weighted_sum(conv2d(x, w, b, 1, 1), ws); });
        check("conv2d_weight", kPrimTol, w,
              [&] { return detail::weighted_sum(conv2d(x, w, b, 1, 1), ws); });
        check("conv2d_bias", kPrimTol, b,
              [&] { return detail::weighted_sum(conv2d(x, w, b, 1, 1), ws); });
        Tensor ws2 = Tensor::randn({3, 2, 2}, rng);
        check("conv2d_stride2", kPrimTol, x,
              [&] { return detail::weighted_sum(conv2d(x, w, b, 2, 1), ws2); });
    }
    {
        Tensor x = Tensor::randn({2, 4, 4}, rng);
        Tensor wp = Tensor::randn({2, 2, 2}, rng);
        check("avg_pool2d", kPrimTol, x,
              [&] { return detail::weighted_sum(avg_pool2d(x, 2), wp); });
        Tensor wu = Tensor::randn({2, 8, 8}, rng);
        check("upsample_nearest2x", kPrimTol, x,
              [&] { return detail::weighted_sum(upsample_nearest2x(x), wu); });
        Tensor wm = Tensor::randn({2}, rng);
        check("mean_hw", kPrimTol, x,
              [&] { return detail::weighted_sum(mean_hw(x), wm); });
        Tensor wr = Tensor::randn({16, 2}, rng);
        check("chw_to_rows", kPrimTol, x,
              [&] { return detail::weighted_sum(chw_to_rows(x), wr); });
    }
    {
        Tensor table = Tensor::randn({5, 4}, rng);
        const std::vector<int> idx = {0, 3, 3, 1, 4};
        Tensor w = Tensor::randn({5, 4}, rng);
        check("embedding_rows", kPrimTol, table,
              [&] { return detail::weighted_sum(embedding_rows(table, idx), w); });
        Tensor a = Tensor::randn({4, 4}, rng);
        const std::vector<int> rr = {0, 1, 3}, cc = {2, 0, 3};
        Tensor wg = Tensor::randn({3}, rng);
        check("gather_rc", kPrimTol, a,
              [&] { return detail::weighted_sum(gather_rc(a, rr, cc), wg); });
    }
    {
        Tensor a = Tensor::randn({3, 4}, rng);
        Tensor v = Tensor::randn({4}, rng);
        Tensor w = Tensor::randn({3, 4}, rng);
        check("add_row_broadcast", kPrimTol, v,
              [&] { return detail::weighted_sum(add_row_broadcast(a, v), w); });
        check("mul_row_broadcast_vec", kPrimTol, v,
              [&] { return detail::weighted_sum(mul_row_broadcast(a, v), w); });
        check("mul_row_broadcast_mat", kPrimTol, a,
              [&] { return detail::weighted_sum(mul_row_broadcast(a, v), w); });
        Tensor w2 = Tensor::randn({3, 2}, rng);
        check("slice_cols", kPrimTol, a,
              [&] { return detail::weighted_sum(slice_cols(a, 1, 2), w2); });
        Tensor b = Tensor::randn({3, 3}, rng);
        Tensor w3 = Tensor::randn({3, 7}, rng);
        check("concat_cols", kPrimTol, a,
              [&] { return detail::weighted_sum(concat_cols({a, b}), w3); });
        Tensor w4 = Tensor::randn({4, 3}, rng);
        check("transpose2d", kPrimTol, a,
              [&] { return detail::weighted_sum(transpose2d(a), w4); });
        check("mean_all", kPrimTol, a, [&] { return mean_all(a); });
        check("sum_all", kPrimTol, a, [&] { return mul_scalar(sum_all(a), 0.25); });
    }
    {
        Tensor q = Tensor::randn({4, 8}, rng, 0.7);
        Tensor k = Tensor::randn({6, 8}, rng, 0.7);
        Tensor v = Tensor::randn({6, 8}, rng, 0.7);
        Tensor w = Tensor::randn({4, 8}, rng);
        const double scale = 0.5;
        check("attention_heads_q", kPrimTol, q,
              [&] { return detail::weighted_sum(attention_heads(q, k, v, 2, scale), w); });
        check("attention_heads_k", kPrimTol, k,
              [&] { return detail::weighted_sum(attention_heads(q, k, v, 2, scale), w); });
        check("attention_heads_v", kPrimTol, v,
              [&] { return detail::weighted_sum(attention_heads(q, k, v, 2, scale), w); });
    }
    {
        // composed softmax cross entropy on random logits
        Tensor logits = Tensor::randn({4, 8}, rng);
        const std::vector<int> rows = {0, 1, 2, 3};
        const std::vector<int> cols = {3, 0, 7, 2};
        check("softmax_cross_entropy", kPrimTol, logits, [&] {
            return mul_scalar(sum_all(gather_rc(log_softmax_rows(logits), rows, cols)), -0.25);
        });
    }

    // End-to-end: masked-token loss through a small transformer on a 2x2 grid,
    // checked against every trainable parameter.
    {
        TransformerConfig tc;
        tc.depth = 2;
        tc.width = 8;
        tc.heads = 2;
        tc.num_tokens = 4;
        tc.vocab = 4;
        tc.d_cond = 8;
        tc.d_style = 8;
        tc.mlp_ratio = 2;
        MaskedTokenTransformer t(tc, 99);
        t.set_trainable(true);
        // zero-initialized tensors get a nudge so their gradients are non-trivial
        Rng jitter(derive_seed(seed, "gradcheck-jitter"));
        t.visit_params("t", [&](const std::string&, Tensor& p) {
            for (double& v : p.data()) v += 0.05 * jitter.normal();
            p.round_to_f32();
        });
        EncoderFeatures feats;
        feats.intermediates.push_back(Tensor::randn({6, 8}, rng, 0.5));
        feats.intermediates.push_back(Tensor::randn({3, 8}, rng, 0.5));
        feats.final_pooled = Tensor::randn({8}, rng, 0.5);
        Tensor anchors = init_randn({2, 8}, rng, 0.5);
        TokenGrid z(2, 2);
        z.indices = {1, 3, 0, 2};
        const std::vector<std::uint8_t> mask = {1, 0, 1, 1};
        const StyleCondition cond = style_from_scalar(0.3, 0, 1, 2);
        auto loss_fn = [&] {
            const MaskedTokens masked = apply_mask(z, mask);
            return mim_loss(t.predict_logits(feats, embed_style(cond, anchors), masked), z, mask);
        };
        double worst = 0.0;
        t.visit_params("t", [&](const std::string&, Tensor& p) {
            worst = std::max(worst, finite_diff_check(loss_fn, p, h));
        });
        anchors.set_requires_grad(true);
        worst = std::max(worst, finite_diff_check(loss_fn, anchors, h));
        GradCheckResult r;
        r.name = "transformer_mim_end_to_end";
        r.tolerance = kEndTol;
        r.error = worst;
        r.pass = worst <= kEndTol;
        results.push_back(r);
    }

    return results;
}

}  // namespace sketchgen
