#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "checkpoint.hpp"
#include "conditioning.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "losses.hpp"
#include "masking.hpp"
#include "optim.hpp"
#include "ssim.hpp"
#include "tensor.hpp"
#include "transformer.hpp"
#include "vq.hpp"

namespace sketchgen {

// Everything one run carries: the codec, the frozen feature encoder (rebuilt
// from its seed), the transformer, and the style anchors, plus the config
// snapshot and the highest completed training stage.
struct Model {
    RunConfig cfg;
    VqCodec codec;
    FeatureEncoder encoder;
    MaskedTokenTransformer transformer;
    StyleAnchors anchors;
    int stage = -1;  // -1 fresh, 0 codec trained, 1 pre-trained, 2 fine-tuned
};

inline Model build_model(const RunConfig& cfg) {
    Model m;
    m.cfg = cfg;
    m.codec = VqCodec(cfg.codec, derive_seed(cfg.seed, "vq"));
    m.encoder = FeatureEncoder(cfg.encoder);
    m.transformer = MaskedTokenTransformer(cfg.transformer, derive_seed(cfg.seed, "transformer"));
    Rng anchor_rng(derive_seed(cfg.seed, "style-anchors"));
    m.anchors = StyleAnchors(cfg.corpus.num_styles, cfg.transformer.width, anchor_rng);
    m.codec.set_trainable(false);
    m.transformer.set_trainable(false);
    m.anchors.set_trainable(false);
    return m;
}

inline void visit_model_params(Model& m, const ParamVisitor& f) {
    m.codec.visit_params("vq", f);
    m.transformer.visit_params("transformer", f);
    m.anchors.visit_params("style", f);
}

struct NamedParams {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;

    void add(const std::string& n, Tensor& t) {
        names.push_back(n);
        tensors.push_back(t);
    }
};

// Stage 1 updates the transformer and the style anchors.
inline NamedParams stage1_params(Model& m) {
    NamedParams p;
    m.transformer.visit_params("transformer",
                               [&](const std::string& n, Tensor& t) { p.add(n, t); });
    m.anchors.visit_params("style", [&](const std::string& n, Tensor& t) { p.add(n, t); });
    return p;
}

// Stage 2 additionally updates the codec decoder. Tokenizer, codebook and the
// feature encoder stay frozen throughout.
inline NamedParams stage2_params(Model& m) {
    NamedParams p = stage1_params(m);
    m.codec.visit_decoder_params("vq", [&](const std::string& n, Tensor& t) { p.add(n, t); });
    return p;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------
inline Checkpoint model_to_checkpoint(Model& m) {
    Checkpoint c;
    config_to_checkpoint(m.cfg, c);
    c.put_scalar("meta.stage", m.stage);
    visit_model_params(m, [&](const std::string& n, Tensor& t) { c.put(n, t.detached()); });
    return c;
}

inline void adam_to_checkpoint(const Adam& adam, const NamedParams& params, Checkpoint& c) {
    c.put_scalar("adam.step_count", static_cast<double>(adam.state().step_count));
    for (size_t i = 0; i < params.names.size(); ++i) {
        const Shape& shape = params.tensors[i].shape();
        c.put("adam.m." + params.names[i],
              Tensor::from_data(shape, std::vector<double>(adam.state().m[i])));
        c.put("adam.v." + params.names[i],
              Tensor::from_data(shape, std::vector<double>(adam.state().v[i])));
    }
}

inline bool adam_from_checkpoint(Adam& adam, const NamedParams& params, const Checkpoint& c) {
    if (!c.has("adam.step_count")) return false;
    adam.state().step_count = static_cast<long long>(c.scalar("adam.step_count"));
    for (size_t i = 0; i < params.names.size(); ++i) {
        const Tensor& m = c.at("adam.m." + params.names[i]);
        const Tensor& v = c.at("adam.v." + params.names[i]);
        if (m.shape() != params.tensors[i].shape() || v.shape() != params.tensors[i].shape())
            throw load_error("checkpoint: optimizer state shape mismatch for " +
                             params.names[i]);
        adam.state().m[i] = m.data();
        adam.state().v[i] = v.data();
    }
    return true;
}

inline void save_model(const std::string& path, Model& m) {
    Checkpoint c = model_to_checkpoint(m);
    save_checkpoint(path, c);
}

inline Model model_from_checkpoint(const Checkpoint& c) {
    RunConfig cfg = config_from_checkpoint(c);
    Model m = build_model(cfg);
    m.stage = static_cast<int>(c.scalar("meta.stage"));
    visit_model_params(m, [&](const std::string& n, Tensor& t) {
        const bool required = n.rfind("vq.", 0) == 0
                                  ? m.stage >= 0
                                  : m.stage >= 1;  // transformer/style only from stage 1 on
        if (!c.has(n)) {
            if (required) throw load_error("checkpoint: missing tensor record '" + n + "'");
            return;
        }
        const Tensor& src = c.at(n);
        if (src.shape() != t.shape())
            throw load_error("checkpoint: shape mismatch for '" + n + "': " +
                             shape_str(src.shape()) + " vs " + shape_str(t.shape()));
        t.data() = src.data();
    });
    return m;
}

inline Model load_model(const std::string& path) {
    return model_from_checkpoint(load_checkpoint(path));
}

// ---------------------------------------------------------------------------
// Cached per-item inputs: tokenizer and feature encoder are frozen during
// transformer training, so their outputs are computed once.
// ---------------------------------------------------------------------------
struct PreparedItem {
    EncoderFeatures features;
    TokenGrid tokens;
    int style = 0;
    Tensor sketch;
    std::vector<Tensor> ref_maps;  // frozen-encoder maps of the target sketch
};

inline std::vector<PreparedItem> prepare_items(const Model& m,
                                               const std::vector<PhotoSketchPair>& pairs,
                                               bool cache_ref_maps) {
    std::vector<PreparedItem> items;
    items.reserve(pairs.size());
    for (const PhotoSketchPair& p : pairs) {
        PreparedItem it;
        it.features = m.encoder.extract(p.photo);
        it.tokens = m.codec.tokenize(p.sketch);
        it.style = p.style;
        it.sketch = p.sketch;
        if (cache_ref_maps) {
            for (Tensor& t : m.encoder.feature_maps(p.sketch.detached()))
                it.ref_maps.push_back(t.detached());
        }
        items.push_back(std::move(it));
    }
    return items;
}

// Per-step loss components as logged to the metrics file.
struct StepLosses {
    double mim = 0.0;
    double pix = 0.0;
    double pcpt = 0.0;
    double total = 0.0;
};

// ---------------------------------------------------------------------------
// Stage 1: masked-token pre-training. Per step: sample a pair, tokenize the
// target (cached), draw a single random mask, substitute the sentinel, and
// minimize the masked cross entropy. Anchors train with the transformer.
// Both training loops derive per-step generators from the run seed, so a run
// resumed from a checkpoint replays the identical stream.
// ---------------------------------------------------------------------------
inline std::vector<StepLosses> pretrain_steps(Model& m, const std::vector<PreparedItem>& items,
                                              Adam& adam, int from_step, int to_step,
                                              MetricsWriter* metrics) {
    if (m.stage < 0) throw config_error("pretrain: codec has not been trained (missing stage 0)");
    if (items.empty()) throw config_error("pretrain: empty item set");
    const int n_tokens = m.cfg.transformer.num_tokens;
    const int batch = m.cfg.pretrain.batch;
    std::vector<StepLosses> history;
    for (int step = from_step; step < to_step; ++step) {
        Rng rng(derive_seed(m.cfg.seed, "train-step", static_cast<std::uint64_t>(step)));
        adam.zero_grads();
        std::vector<Tensor> losses;
        for (int bi = 0; bi < batch; ++bi) {
            const PreparedItem& item =
                items[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(items.size()) - 1))];
            const std::vector<std::uint8_t> mask = sample_training_mask(n_tokens, rng);
            const MaskedTokens masked = apply_mask(item.tokens, mask);
            const Tensor style_emb =
                m.anchors.embed(style_onehot(item.style, m.cfg.corpus.num_styles));
            const Tensor logits = m.transformer.predict_logits(item.features, style_emb, masked);
            losses.push_back(mim_loss(logits, item.tokens, mask, m.cfg.mim_norm));
        }
        Tensor total = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
        total = mul_scalar(total, 1.0 / batch);
        backward(total);
        adam.step();
        StepLosses sl;
        sl.mim = total.value();
        sl.total = sl.mim;
        history.push_back(sl);
        if (metrics) metrics->log(step, "pretrain", sl.mim, 0.0, 0.0, sl.total);
    }
    return history;
}

inline std::vector<StepLosses> pretrain_transformer(Model& m,
                                                    const std::vector<PreparedItem>& items,
                                                    MetricsWriter* metrics = nullptr) {
    m.transformer.set_trainable(true);
    m.anchors.set_trainable(true);
    AdamConfig ac;
    ac.lr = m.cfg.pretrain.lr;
    Adam adam(ac);
    NamedParams params = stage1_params(m);
    adam.register_params(params.tensors);
    auto history = pretrain_steps(m, items, adam, 0, m.cfg.pretrain.steps, metrics);
    m.transformer.set_trainable(false);
    m.anchors.set_trainable(false);
    m.stage = std::max(m.stage, 1);
    return history;
}

// ---------------------------------------------------------------------------
// Stage 2: fine-tuning on the scarce domain. The predicted tokens are snapped
// to codebook vectors with a straight-through surrogate (softmax-weighted
// codebook mix carries the gradient), decoded, and scored with the combined
// objective. Updates flow to the transformer, anchors and decoder.
// ---------------------------------------------------------------------------
inline std::vector<StepLosses> finetune_steps(Model& m, const std::vector<PreparedItem>& items,
                                              Adam& adam, int from_step, int to_step,
                                              MetricsWriter* metrics) {
    if (m.stage < 1) throw config_error("finetune: no pre-trained transformer (missing stage 1)");
    if (items.empty()) throw config_error("finetune: empty item set");
    const int n_tokens = m.cfg.transformer.num_tokens;
    const int batch = m.cfg.finetune.batch;
    const LossWeights& w = m.cfg.loss_weights;
    const bool image_losses = w.lambda_pix > 0.0 || w.lambda_pcpt > 0.0;
    std::vector<StepLosses> history;
    for (int step = from_step; step < to_step; ++step) {
        Rng rng(derive_seed(m.cfg.seed, "train-step", static_cast<std::uint64_t>(step)));
        adam.zero_grads();
        std::vector<Tensor> losses;
        StepLosses sl;
        for (int bi = 0; bi < batch; ++bi) {
            const PreparedItem& item =
                items[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(items.size()) - 1))];
            const std::vector<std::uint8_t> mask = sample_training_mask(n_tokens, rng);
            const MaskedTokens masked = apply_mask(item.tokens, mask);
            const Tensor style_emb =
                m.anchors.embed(style_onehot(item.style, m.cfg.corpus.num_styles));
            const Tensor logits = m.transformer.predict_logits(item.features, style_emb, masked);
            const Tensor l_mim = mim_loss(logits, item.tokens, mask, m.cfg.mim_norm);
            sl.mim += l_mim.value();
            if (!image_losses) {
                losses.push_back(l_mim);
                continue;
            }
            const auto picked = greedy_tokens(logits);
            const Tensor soft = softmax_rows(logits);
            const Tensor v_soft = matmul(soft, m.codec.codebook());
            const Tensor e_hard = embedding_rows(m.codec.codebook(), picked.first);
            const Tensor st = add(v_soft, detach(sub(e_hard, v_soft)));
            const Tensor y_hat = m.codec.decode_rows(st);
            const Tensor l_pix = pixel_loss(y_hat, item.sketch, m.cfg.pixel_norm);
            const Tensor l_pcpt =
                perceptual_loss_from_maps(y_hat, item.ref_maps, m.encoder, m.cfg.perceptual);
            const Objective obj = total_objective(l_mim, l_pix, l_pcpt, w);
            sl.pix += l_pix.value();
            sl.pcpt += l_pcpt.value();
            losses.push_back(obj.total);
        }
        Tensor total = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
        total = mul_scalar(total, 1.0 / batch);
        backward(total);
        adam.step();
        sl.mim /= batch;
        sl.pix /= batch;
        sl.pcpt /= batch;
        sl.total = total.value();
        history.push_back(sl);
        if (metrics) metrics->log(step, "finetune", sl.mim, sl.pix, sl.pcpt, sl.total);
    }
    return history;
}

inline std::vector<StepLosses> finetune(Model& m, const std::vector<PreparedItem>& items,
                                        MetricsWriter* metrics = nullptr) {
    m.transformer.set_trainable(true);
    m.anchors.set_trainable(true);
    m.codec.set_decoder_trainable(true);
    AdamConfig ac;
    ac.lr = m.cfg.finetune.lr;
    Adam adam(ac);
    NamedParams params = stage2_params(m);
    adam.register_params(params.tensors);
    auto history = finetune_steps(m, items, adam, 0, m.cfg.finetune.steps, metrics);
    m.transformer.set_trainable(false);
    m.anchors.set_trainable(false);
    m.codec.set_decoder_trainable(false);
    m.stage = std::max(m.stage, 2);
    return history;
}

// ---------------------------------------------------------------------------
// Iterative masked decoding: start fully masked; each step predicts all
// positions, keeps what was already revealed, and reveals the most confident
// new tokens until the masked count matches the schedule for the next step.
// ---------------------------------------------------------------------------
using DecodeObserver = std::function<void(int t_completed, const MaskedTokens& state)>;

inline TokenGrid iterative_decode(const EncoderFeatures& features, const Tensor& style_embedding,
                                  const MaskedTokenTransformer& transformer, int grid_h,
                                  int grid_w, const InferenceConfig& cfg,
                                  const DecodeObserver& observer = nullptr) {
    cfg.validate();
    const int n = transformer.config().num_tokens;
    if (grid_h * grid_w != n)
        throw contract_error("iterative_decode: grid " + std::to_string(grid_h) + "x" +
                             std::to_string(grid_w) + " != transformer token count " +
                             std::to_string(n));
    MaskedTokens cur = fully_masked(grid_h, grid_w);
    Rng rng(derive_seed(cfg.seed, "decode"));
    for (int t = cfg.steps; t >= 1; --t) {
        const Tensor logits =
            transformer.predict_logits(features, style_embedding, cur).detached();
        const auto picked = cfg.temperature > 0.0 ? sample_tokens(logits, cfg.temperature, rng)
                                                  : greedy_tokens(logits);
        const int target_masked = inference_masked_count(t - 1, cfg.steps, n);
        int reveal = cur.masked_count() - target_masked;
        std::vector<std::pair<double, int>> order;
        for (int i = 0; i < n; ++i)
            if (cur.mask[static_cast<size_t>(i)])
                order.emplace_back(picked.second[static_cast<size_t>(i)], i);
        std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (int k = 0; k < reveal && k < static_cast<int>(order.size()); ++k) {
            const int pos = order[static_cast<size_t>(k)].second;
            cur.values[static_cast<size_t>(pos)] = picked.first[static_cast<size_t>(pos)];
            cur.mask[static_cast<size_t>(pos)] = 0;
        }
        if (observer) observer(t, cur);
    }
    TokenGrid out(grid_h, grid_w);
    for (int i = 0; i < n; ++i) {
        if (cur.values[static_cast<size_t>(i)] == kMaskSentinel)
            throw contract_error("iterative_decode: sentinel left after the final step");
        out.indices[static_cast<size_t>(i)] = cur.values[static_cast<size_t>(i)];
    }
    return out;
}

// Full photo -> sketch path with a style condition.
inline Tensor synthesize_with_condition(const Model& m, const Tensor& photo,
                                        const StyleCondition& cond, const InferenceConfig& cfg) {
    const EncoderFeatures features = m.encoder.extract(photo);
    const Tensor style_emb = m.anchors.embed(cond).detached();
    const TokenGrid grid = iterative_decode(features, style_emb, m.transformer,
                                            m.cfg.codec.grid_h, m.cfg.codec.grid_w, cfg);
    return m.codec.decode(grid);
}

// Continuous-style entry point: s in [0, 1] interpolates the anchor pair.
inline Tensor synthesize(const Model& m, const Tensor& photo, double s,
                         const InferenceConfig& cfg) {
    const StyleCondition cond =
        style_from_scalar(s, cfg.anchor_a, cfg.anchor_b, m.cfg.corpus.num_styles);
    return synthesize_with_condition(m, photo, cond, cfg);
}

// ---------------------------------------------------------------------------
// Evaluation: mean SSIM and pixel L1 of synthesized sketches against targets,
// plus the random-token decoding baseline on the same targets.
// ---------------------------------------------------------------------------
struct EvalReport {
    double mean_ssim = 0.0;
    double mean_pixel_l1 = 0.0;
    double baseline_ssim = 0.0;
    int count = 0;
};

inline EvalReport evaluate(const Model& m, const std::vector<PhotoSketchPair>& pairs,
                           const InferenceConfig& cfg) {
    if (pairs.empty()) throw contract_error("evaluate: empty pair set");
    EvalReport r;
    for (size_t i = 0; i < pairs.size(); ++i) {
        const PhotoSketchPair& p = pairs[i];
        const Tensor synth = synthesize_with_condition(
            m, p.photo, style_onehot(p.style, m.cfg.corpus.num_styles), cfg);
        r.mean_ssim += ssim(synth, p.sketch);
        double l1 = 0.0;
        for (size_t j = 0; j < synth.data().size(); ++j)
            l1 += std::fabs(synth.data()[j] - p.sketch.data()[j]);
        r.mean_pixel_l1 += l1 / static_cast<double>(synth.numel());

        Rng rng(derive_seed(m.cfg.seed, "baseline-tokens", static_cast<std::uint64_t>(i)));
        TokenGrid random_grid(m.cfg.codec.grid_h, m.cfg.codec.grid_w);
        for (int& idx : random_grid.indices)
            idx = rng.uniform_int(0, m.cfg.codec.codebook_size - 1);
        r.baseline_ssim += ssim(m.codec.decode(random_grid), p.sketch);
    }
    const double n = static_cast<double>(pairs.size());
    r.mean_ssim /= n;
    r.mean_pixel_l1 /= n;
    r.baseline_ssim /= n;
    r.count = static_cast<int>(pairs.size());
    return r;
}

// ---------------------------------------------------------------------------
// Stage 0 wrapper: trains the codec on all training sketches (both domains)
// and installs it in the model.
// ---------------------------------------------------------------------------
inline void run_stage0(Model& m, const Corpus& corpus, MetricsWriter* metrics = nullptr) {
    std::vector<PhotoSketchPair> train_pairs = corpus.pretrain;
    train_pairs.insert(train_pairs.end(), corpus.finetune.begin(), corpus.finetune.end());
    VqStepHook hook = nullptr;
    if (metrics)
        hook = [metrics](const VqStepStats& s) {
            metrics->log(s.step, "vq", 0.0, s.recon_l1, 0.0, s.total);
        };
    m.codec = train_vq_stage0(train_pairs, m.cfg.codec, m.cfg.train_vq.steps,
                              m.cfg.train_vq.batch, m.cfg.train_vq.lr,
                              derive_seed(m.cfg.seed, "vq"), hook);
    m.stage = std::max(m.stage, 0);
}

}  // namespace sketchgen
