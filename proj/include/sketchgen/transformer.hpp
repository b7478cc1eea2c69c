#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "conditioning.hpp"
#include "masking.hpp"
#include "nn.hpp"
#include "tensor.hpp"
#include "tokens.hpp"

namespace sketchgen {

struct TransformerConfig {
    int depth = 4;
    int width = 64;
    int heads = 4;
    int num_tokens = 16;  // N, matches the codec grid
    int vocab = 64;       // C, matches the codebook
    int d_cond = 64;      // dimension of encoder hidden states (cross-attention source)
    int d_style = 64;     // style embedding dimension
    int mlp_ratio = 4;
    // When false both photo paths (cross-attention and the pooled part of the
    // adaptive-norm condition) are severed; output depends on tokens + style only.
    bool condition_on_photo = true;

    void validate() const {
        if (depth < 1) throw config_error("transformer: depth must be >= 1");
        if (width < 1 || heads < 1 || width % heads != 0)
            throw config_error("transformer: width must be divisible by heads");
        if (num_tokens < 1 || vocab < 2)
            throw config_error("transformer: bad token/vocabulary size");
    }
};

// Token transformer in the U-ViT style: constant token count (no down/up
// sampling), long skip connections between mirrored blocks, per-position
// logits over the codebook. Photo features enter through cross-attention
// (intermediate hidden states) and adaptive normalization (pooled state and
// style embedding); the masked sentinel maps to a learned mask-token row.
class MaskedTokenTransformer {
public:
    MaskedTokenTransformer() = default;

    MaskedTokenTransformer(TransformerConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(init_seed, "transformer-init"));
        const int w = cfg_.width;
        tok_emb_ = init_randn({cfg_.vocab + 1, w}, rng, 0.02);  // row `vocab` = mask token
        pos_emb_ = init_randn({cfg_.num_tokens, w}, rng, 0.02);
        const int d_cond_total = cfg_.d_cond + cfg_.d_style;
        for (int i = 0; i < cfg_.depth; ++i) {
            Block b;
            b.adaln = Linear::zero_init(d_cond_total, 6 * w);
            b.wq = Linear(w, w, rng);
            b.wk = Linear(w, w, rng);
            b.wv = Linear(w, w, rng);
            b.wo = Linear(w, w, rng);
            b.cq = Linear(w, w, rng);
            b.ck = Linear(cfg_.d_cond, w, rng);
            b.cv = Linear(cfg_.d_cond, w, rng);
            b.co = Linear(w, w, rng);
            b.mlp1 = Linear(w, cfg_.mlp_ratio * w, rng);
            b.mlp2 = Linear(cfg_.mlp_ratio * w, w, rng);
            b.has_fuse = i >= (cfg_.depth + 1) / 2;
            if (b.has_fuse) b.fuse = Linear(2 * w, w, rng);
            blocks_.push_back(std::move(b));
        }
        head_ = Linear::zero_init(w, cfg_.vocab);  // uniform prediction at start
    }

    const TransformerConfig& config() const { return cfg_; }

    Tensor predict_logits(const EncoderFeatures& features, const Tensor& style_embedding,
                          const MaskedTokens& masked) const {
        if (masked.size() != cfg_.num_tokens)
            throw contract_error("predict_logits: " + std::to_string(masked.size()) +
                                 " tokens, configured for " + std::to_string(cfg_.num_tokens));
        if (style_embedding.numel() != cfg_.d_style)
            throw contract_error("predict_logits: style embedding length " +
                                 std::to_string(style_embedding.numel()) + " != " +
                                 std::to_string(cfg_.d_style));
        std::vector<int> ids(masked.values.size());
        for (size_t i = 0; i < masked.values.size(); ++i) {
            const int v = masked.values[i];
            if (v == kMaskSentinel) {
                ids[i] = cfg_.vocab;
            } else if (v >= 0 && v < cfg_.vocab) {
                ids[i] = v;
            } else {
                throw contract_error("predict_logits: token value " + std::to_string(v) +
                                     " outside [0, C) and not the mask sentinel");
            }
        }

        Tensor x = add(embedding_rows(tok_emb_, ids), pos_emb_);

        Tensor pooled;
        Tensor memory;
        if (cfg_.condition_on_photo) {
            if (features.final_pooled.numel() != cfg_.d_cond)
                throw contract_error("predict_logits: pooled feature length mismatch");
            if (features.intermediates.empty())
                throw contract_error("predict_logits: no intermediate hidden states");
            for (const Tensor& m : features.intermediates)
                if (m.rank() != 2 || m.dim(1) != cfg_.d_cond)
                    throw contract_error("predict_logits: hidden state width != d_cond");
            pooled = features.final_pooled;
            memory = concat_rows(features.intermediates);
        } else {
            pooled = Tensor::zeros({cfg_.d_cond});
        }
        Tensor cond = reshape(concat_flat({pooled, style_embedding}),
                              {1, cfg_.d_cond + cfg_.d_style});

        std::vector<Tensor> skips;
        for (size_t i = 0; i < blocks_.size(); ++i) {
            const Block& b = blocks_[i];
            if (b.has_fuse && !skips.empty()) {
                Tensor skip = skips.back();
                skips.pop_back();
                x = b.fuse(concat_cols({x, skip}));
            }
            Tensor mods = b.adaln(cond);  // [1 x 6w]
            const int w = cfg_.width;
            Tensor h = modulate(x, slice_cols(mods, 0, w), slice_cols(mods, w, w));
            x = add(x, attend(h, h, b.wq, b.wk, b.wv, b.wo));
            if (cfg_.condition_on_photo) {
                h = modulate(x, slice_cols(mods, 2 * w, w), slice_cols(mods, 3 * w, w));
                x = add(x, attend(h, memory, b.cq, b.ck, b.cv, b.co));
            }
            h = modulate(x, slice_cols(mods, 4 * w, w), slice_cols(mods, 5 * w, w));
            x = add(x, b.mlp2(gelu(b.mlp1(h))));
            if (i < static_cast<size_t>(cfg_.depth / 2)) skips.push_back(x);
        }
        return head_(layer_norm_rows(x));
    }

    void visit_params(const std::string& prefix, const ParamVisitor& f) {
        f(prefix + ".tok_emb", tok_emb_);
        f(prefix + ".pos_emb", pos_emb_);
        for (size_t i = 0; i < blocks_.size(); ++i) {
            const std::string bp = prefix + ".block" + std::to_string(i);
            Block& b = blocks_[i];
            b.adaln.visit_params(bp + ".adaln", f);
            b.wq.visit_params(bp + ".self.q", f);
            b.wk.visit_params(bp + ".self.k", f);
            b.wv.visit_params(bp + ".self.v", f);
            b.wo.visit_params(bp + ".self.o", f);
            b.cq.visit_params(bp + ".cross.q", f);
            b.ck.visit_params(bp + ".cross.k", f);
            b.cv.visit_params(bp + ".cross.v", f);
            b.co.visit_params(bp + ".cross.o", f);
            b.mlp1.visit_params(bp + ".mlp.fc1", f);
            b.mlp2.visit_params(bp + ".mlp.fc2", f);
            if (b.has_fuse) b.fuse.visit_params(bp + ".fuse", f);
        }
        head_.visit_params(prefix + ".head", f);
    }

    void set_trainable(bool t) {
        visit_params("", [t](const std::string&, Tensor& p) { p.set_requires_grad(t); });
    }

private:
    struct Block {
        Linear adaln;
        Linear wq, wk, wv, wo;
        Linear cq, ck, cv, co;
        Linear mlp1, mlp2;
        Linear fuse;
        bool has_fuse = false;
    };

    // Adaptive layer norm: standardize rows, then scale by (1 + s) and shift
    // by t, both predicted from the condition vector. With the adaln map
    // zeroed this reduces to a plain layer norm.
    static Tensor modulate(const Tensor& x, const Tensor& scale, const Tensor& shift) {
        Tensor ln = layer_norm_rows(x);
        return add_row_broadcast(mul_row_broadcast(ln, add_scalar(scale, 1.0)), shift);
    }

    Tensor attend(const Tensor& q_src, const Tensor& kv_src, const Linear& lq, const Linear& lk,
                  const Linear& lv, const Linear& lo) const {
        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.width / cfg_.heads));
        return lo(attention_heads(lq(q_src), lk(kv_src), lv(kv_src), cfg_.heads, scale));
    }

    TransformerConfig cfg_;
    Tensor tok_emb_;
    Tensor pos_emb_;
    std::vector<Block> blocks_;
    Linear head_;
};

// Temperature-0 readout: per position the argmax token (ties to the lowest
// index) and its softmax probability as the confidence.
inline std::pair<std::vector<int>, std::vector<double>> greedy_tokens(const Tensor& logits) {
    check_rank2(logits, "greedy_tokens");
    const int n = logits.dim(0), c = logits.dim(1);
    std::vector<int> tokens(static_cast<size_t>(n));
    std::vector<double> conf(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data().data() + static_cast<size_t>(i) * c;
        int best = 0;
        for (int j = 1; j < c; ++j)
            if (row[j] > row[best]) best = j;
        double denom = 0.0;
        for (int j = 0; j < c; ++j) denom += std::exp(row[j] - row[best]);
        tokens[static_cast<size_t>(i)] = best;
        conf[static_cast<size_t>(i)] = 1.0 / denom;
    }
    return {tokens, conf};
}

// Temperature sampling from the per-position categorical; temperature <= 0
// falls back to the greedy readout.
inline std::pair<std::vector<int>, std::vector<double>> sample_tokens(const Tensor& logits,
                                                                      double temperature,
                                                                      Rng& rng) {
    if (temperature <= 0.0) return greedy_tokens(logits);
    check_rank2(logits, "sample_tokens");
    const int n = logits.dim(0), c = logits.dim(1);
    std::vector<int> tokens(static_cast<size_t>(n));
    std::vector<double> conf(static_cast<size_t>(n));
    std::vector<double> p(static_cast<size_t>(c));
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data().data() + static_cast<size_t>(i) * c;
        double mx = row[0] / temperature;
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j] / temperature);
        double denom = 0.0;
        for (int j = 0; j < c; ++j) {
            p[static_cast<size_t>(j)] = std::exp(row[j] / temperature - mx);
            denom += p[static_cast<size_t>(j)];
        }
        const double u = rng.uniform() * denom;
        double cum = 0.0;
        int chosen = c - 1;
        for (int j = 0; j < c; ++j) {
            cum += p[static_cast<size_t>(j)];
            if (u < cum) {
                chosen = j;
                break;
            }
        }
        tokens[static_cast<size_t>(i)] = chosen;
        conf[static_cast<size_t>(i)] = p[static_cast<size_t>(chosen)] / denom;
    }
    return {tokens, conf};
}

}  // namespace sketchgen
