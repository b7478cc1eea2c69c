#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "nn.hpp"
#include "optim.hpp"
#include "tensor.hpp"
#include "tokens.hpp"

namespace sketchgen {

struct VqConfig {
    int resolution = 32;
    int grid_h = 4;
    int grid_w = 4;
    int codebook_size = 64;  // C
    int code_dim = 16;       // d_code
    double beta = 0.25;      // commitment weight
    std::vector<int> enc_channels = {32, 64, 64};
    // dec_channels[0] is the width at the token grid; each further entry is
    // the width after one 2x upsample, ending at full resolution.
    std::vector<int> dec_channels = {64, 48, 24, 8};
    int dead_entry_patience = 500;

    int num_tokens() const { return grid_h * grid_w; }

    void validate() const {
        if (codebook_size < 2) throw config_error("vq: codebook_size must be >= 2");
        if (code_dim < 1) throw config_error("vq: code_dim must be >= 1");
        if (beta <= 0.0) throw config_error("vq: beta must be > 0");
        if (grid_h != grid_w) throw config_error("vq: token grid must be square");
        if (grid_h < 1 || resolution % grid_h != 0)
            throw config_error("vq: resolution must be divisible by the token grid");
        int factor = resolution / grid_h;
        int levels = 0;
        while (factor > 1) {
            if (factor % 2 != 0)
                throw config_error("vq: resolution/grid must be a power of two");
            factor /= 2;
            ++levels;
        }
        if (static_cast<int>(enc_channels.size()) != levels)
            throw config_error("vq: need exactly " + std::to_string(levels) +
                               " encoder channel widths");
        if (static_cast<int>(dec_channels.size()) != levels + 1)
            throw config_error("vq: need exactly " + std::to_string(levels + 1) +
                               " decoder channel widths");
    }
};

// Nearest codebook entry per row by squared Euclidean distance; ties go to the
// lowest index. Plain exhaustive scan, double accumulation.
inline std::vector<int> quantize_nearest(const Tensor& latents, const Tensor& codebook) {
    check_rank2(latents, "quantize_nearest");
    check_rank2(codebook, "quantize_nearest");
    const int n = latents.dim(0), d = latents.dim(1);
    const int c = codebook.dim(0);
    if (codebook.dim(1) != d)
        throw contract_error("quantize_nearest: latent dim " + std::to_string(d) +
                             " != code dim " + std::to_string(codebook.dim(1)));
    std::vector<int> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* row = latents.data().data() + static_cast<size_t>(i) * d;
        double best = 0.0;
        int best_idx = -1;
        for (int k = 0; k < c; ++k) {
            const double* e = codebook.data().data() + static_cast<size_t>(k) * d;
            double dist = 0.0;
            for (int j = 0; j < d; ++j) {
                const double diff = row[j] - e[j];
                dist += diff * diff;
            }
            if (best_idx < 0 || dist < best) {
                best = dist;
                best_idx = k;
            }
        }
        out[static_cast<size_t>(i)] = best_idx;
    }
    return out;
}

// Vector-quantized autoencoder: strided-conv tokenizer Q, codebook, and an
// upsampling decoder D. No self-attention anywhere in the codec.
class VqCodec {
public:
    VqCodec() = default;

    VqCodec(VqConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(init_seed, "vq-init"));
        int in_ch = 1;
        for (int ch : cfg_.enc_channels) {
            enc_.emplace_back(in_ch, ch, 3, 2, 1, rng);
            in_ch = ch;
        }
        enc_proj_ = Conv2d(in_ch, cfg_.code_dim, 1, 1, 0, rng);
        dec_proj_ = Conv2d(cfg_.code_dim, cfg_.dec_channels[0], 1, 1, 0, rng);
        dec_mid_ = Conv2d(cfg_.dec_channels[0], cfg_.dec_channels[0], 3, 1, 1, rng);
        for (size_t i = 1; i < cfg_.dec_channels.size(); ++i)
            dec_.emplace_back(cfg_.dec_channels[i - 1], cfg_.dec_channels[i], 3, 1, 1, rng);
        dec_head_ = Conv2d(cfg_.dec_channels.back(), 1, 3, 1, 1, rng);
        codebook_ = init_randn({cfg_.codebook_size, cfg_.code_dim}, rng, 0.1);
    }

    const VqConfig& config() const { return cfg_; }
    Tensor& codebook() { return codebook_; }
    const Tensor& codebook() const { return codebook_; }

    // Encoder latents as one row per grid cell, [N x code_dim]. Builds a graph
    // only while encoder weights are trainable.
    Tensor encode_rows(const Tensor& image) const {
        check_input_image(image, "encode_rows");
        Tensor x = image;
        for (const Conv2d& c : enc_) x = relu(c(x));
        x = enc_proj_(x);
        return chw_to_rows(x);
    }

    // Differentiable decode from [N x code_dim] rows to a {1, R, R} image in
    // (0, 1) via a sigmoid head.
    Tensor decode_rows(const Tensor& rows) const {
        Tensor x = rows_to_chw(rows, cfg_.grid_h, cfg_.grid_w);
        x = relu(dec_proj_(x));
        x = relu(dec_mid_(x));
        for (const Conv2d& c : dec_) x = relu(c(upsample_nearest2x(x)));
        return sigmoid(dec_head_(x));
    }

    TokenGrid tokenize(const Tensor& sketch) const {
        check_input_image(sketch, "tokenize");
        for (double v : sketch.data())
            if (!(v >= 0.0 && v <= 1.0))
                throw contract_error("tokenize: pixel values must lie in [0, 1]");
        const Tensor rows = encode_rows(sketch).detached();
        TokenGrid grid(cfg_.grid_h, cfg_.grid_w);
        grid.indices = quantize_nearest(rows, codebook_);
        return grid;
    }

    Tensor decode(const TokenGrid& tokens) const {
        if (tokens.h != cfg_.grid_h || tokens.w != cfg_.grid_w)
            throw contract_error("decode: token grid " + std::to_string(tokens.h) + "x" +
                                 std::to_string(tokens.w) + " != configured " +
                                 std::to_string(cfg_.grid_h) + "x" + std::to_string(cfg_.grid_w));
        for (int idx : tokens.indices)
            if (idx < 0 || idx >= cfg_.codebook_size)
                throw contract_error("decode: token value " + std::to_string(idx) +
                                     " is not a valid codebook index (masked sentinel?)");
        const Tensor rows = embedding_rows(codebook_, tokens.indices).detached();
        Tensor img = decode_rows(rows).detached();
        for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);
        return img;
    }

    void visit_encoder_params(const std::string& prefix, const ParamVisitor& f) {
        for (size_t i = 0; i < enc_.size(); ++i)
            enc_[i].visit_params(prefix + ".enc.conv" + std::to_string(i), f);
        enc_proj_.visit_params(prefix + ".enc.proj", f);
    }

    void visit_decoder_params(const std::string& prefix, const ParamVisitor& f) {
        dec_proj_.visit_params(prefix + ".dec.proj", f);
        dec_mid_.visit_params(prefix + ".dec.mid", f);
        for (size_t i = 0; i < dec_.size(); ++i)
            dec_[i].visit_params(prefix + ".dec.conv" + std::to_string(i), f);
        dec_head_.visit_params(prefix + ".dec.head", f);
    }

    void visit_params(const std::string& prefix, const ParamVisitor& f) {
        visit_encoder_params(prefix, f);
        visit_decoder_params(prefix, f);
        f(prefix + ".codebook", codebook_);
    }

    void set_encoder_trainable(bool t) {
        for (Conv2d& c : enc_) c.set_trainable(t);
        enc_proj_.set_trainable(t);
    }

    void set_decoder_trainable(bool t) {
        dec_proj_.set_trainable(t);
        dec_mid_.set_trainable(t);
        for (Conv2d& c : dec_) c.set_trainable(t);
        dec_head_.set_trainable(t);
    }

    void set_codebook_trainable(bool t) { codebook_.set_requires_grad(t); }

    void set_trainable(bool t) {
        set_encoder_trainable(t);
        set_decoder_trainable(t);
        set_codebook_trainable(t);
    }

private:
    void check_input_image(const Tensor& image, const char* op) const {
        if (image.rank() != 3 || image.dim(0) != 1 || image.dim(1) != cfg_.resolution ||
            image.dim(2) != cfg_.resolution)
            throw contract_error(std::string(op) + ": expected {1, " +
                                 std::to_string(cfg_.resolution) + ", " +
                                 std::to_string(cfg_.resolution) + "} image, got " +
                                 shape_str(image.shape()));
    }

    VqConfig cfg_;
    std::vector<Conv2d> enc_;
    Conv2d enc_proj_;
    Conv2d dec_proj_;
    Conv2d dec_mid_;
    std::vector<Conv2d> dec_;
    Conv2d dec_head_;
    Tensor codebook_;
};

// Per-step scalars reported by stage-0 training.
struct VqStepStats {
    int step;
    double recon_l1;
    double total;
};

using VqStepHook = std::function<void(const VqStepStats&)>;

// Stage-0 training: straight-through estimator, codebook + commitment terms,
// L1 reconstruction. Entries unused for `dead_entry_patience` steps are
// re-seeded from a live encoder output.
inline VqCodec train_vq_stage0(const std::vector<PhotoSketchPair>& pairs, const VqConfig& cfg,
                               int steps, int batch, double lr, std::uint64_t seed,
                               const VqStepHook& hook = nullptr) {
    if (pairs.empty()) throw config_error("train_vq_stage0: empty corpus");
    if (steps < 1 || batch < 1) throw config_error("train_vq_stage0: steps and batch must be >= 1");
    VqCodec codec(cfg, seed);
    codec.set_trainable(true);

    AdamConfig ac;
    ac.lr = lr;
    Adam adam(ac);
    std::vector<Tensor> params;
    codec.visit_params("vq", [&](const std::string&, Tensor& t) { params.push_back(t); });
    adam.register_params(params);
    const size_t codebook_slot = params.size() - 1;  // codebook registered last

    const int d = cfg.code_dim;
    std::vector<long long> last_used(static_cast<size_t>(cfg.codebook_size), 0);

    for (int step = 0; step < steps; ++step) {
        Rng rng(derive_seed(seed, "vq-step", static_cast<std::uint64_t>(step)));
        adam.zero_grads();

        std::vector<Tensor> losses;
        double recon_sum = 0.0;
        std::vector<double> latent_pool;  // candidate rows for dead-entry reseed
        for (int bi = 0; bi < batch; ++bi) {
            const PhotoSketchPair& item =
                pairs[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pairs.size()) - 1))];
            Tensor rows = codec.encode_rows(item.sketch);
            const std::vector<int> idx = quantize_nearest(rows.detached(), codec.codebook());
            for (int k : idx) last_used[static_cast<size_t>(k)] = step + 1;
            latent_pool.insert(latent_pool.end(), rows.data().begin(), rows.data().end());

            Tensor quantized = embedding_rows(codec.codebook(), idx);
            // decoder sees the quantized vectors; gradients skip the snap
            Tensor st = add(rows, detach(sub(quantized, rows)));
            Tensor recon = codec.decode_rows(st);
            Tensor l1 = mean_all(abs_t(sub(recon, item.sketch)));
            Tensor codebook_pull = mean_all(mul(sub(quantized, detach(rows)),
                                                sub(quantized, detach(rows))));
            Tensor commit = mean_all(mul(sub(rows, detach(quantized)),
                                         sub(rows, detach(quantized))));
            recon_sum += l1.value();
            losses.push_back(add(l1, add(codebook_pull, mul_scalar(commit, cfg.beta))));
        }
        Tensor total = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
        total = mul_scalar(total, 1.0 / batch);
        backward(total);
        adam.step();

        // revive entries that have gone unused for too long
        for (int k = 0; k < cfg.codebook_size; ++k) {
            if (step + 1 - last_used[static_cast<size_t>(k)] < cfg.dead_entry_patience) continue;
            const int row = rng.uniform_int(0, static_cast<int>(latent_pool.size()) / d - 1);
            for (int j = 0; j < d; ++j)
                codec.codebook().data()[static_cast<size_t>(k) * d + j] =
                    static_cast<double>(static_cast<float>(
                        latent_pool[static_cast<size_t>(row) * d + j]));
            auto& m = adam.state().m[codebook_slot];
            auto& v = adam.state().v[codebook_slot];
            for (int j = 0; j < d; ++j) {
                m[static_cast<size_t>(k) * d + j] = 0.0;
                v[static_cast<size_t>(k) * d + j] = 0.0;
            }
            last_used[static_cast<size_t>(k)] = step + 1;
        }

        if (hook) hook({step, recon_sum / batch, total.value()});
    }

    codec.set_trainable(false);
    return codec;
}

// Mean reconstruction L1 of tokenize -> decode over a set of pairs.
inline double vq_reconstruction_l1(const VqCodec& codec, const std::vector<PhotoSketchPair>& pairs) {
    if (pairs.empty()) throw contract_error("vq_reconstruction_l1: empty pair set");
    double total = 0.0;
    for (const PhotoSketchPair& p : pairs) {
        const Tensor recon = codec.decode(codec.tokenize(p.sketch));
        double l1 = 0.0;
        for (size_t i = 0; i < recon.data().size(); ++i)
            l1 += std::fabs(recon.data()[i] - p.sketch.data()[i]);
        total += l1 / static_cast<double>(recon.numel());
    }
    return total / static_cast<double>(pairs.size());
}

}  // namespace sketchgen
