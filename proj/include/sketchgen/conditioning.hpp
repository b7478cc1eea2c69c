#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nn.hpp"
#include "tensor.hpp"

namespace sketchgen {

struct EncoderConfig {
    int resolution = 32;
    int d_e = 64;  // dimension of every exposed hidden state and the pooled vector
    std::vector<int> channels = {24, 48, 64};
    std::uint64_t seed = 7;

    void validate() const {
        if (d_e < 1) throw config_error("encoder: d_e must be >= 1");
        if (channels.size() < 2) throw config_error("encoder: need at least two blocks");
        int r = resolution;
        for (size_t i = 0; i < channels.size(); ++i) {
            if (r % 2 != 0) throw config_error("encoder: resolution not divisible by strides");
            r /= 2;
        }
    }
};

// Hidden states exposed for conditioning: one (cells x d_e) matrix per block
// plus the pooled summary vector.
struct EncoderFeatures {
    std::vector<Tensor> intermediates;
    Tensor final_pooled;  // rank-1 [d_e]
};

// Frozen convolutional feature extractor. All weights come from the seeded
// initializer and are never updated by any training stage; the seed is enough
// to reconstruct it anywhere.
class FeatureEncoder {
public:
    FeatureEncoder() = default;

    explicit FeatureEncoder(EncoderConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(cfg_.seed, "feature-encoder"));
        int in_ch = 1;
        int res = cfg_.resolution;
        for (int ch : cfg_.channels) {
            blocks_.emplace_back(in_ch, ch, 3, 2, 1, rng);
            in_ch = ch;
            res /= 2;
            // project each block's map to d_e channels for the attention memory
            proj_.emplace_back(ch, cfg_.d_e, 1, 1, 0, rng);
            block_res_.push_back(res);
        }
        pool_proj_ = Linear(in_ch, cfg_.d_e, rng);
        for (Conv2d& c : blocks_) c.set_trainable(false);
        for (Conv2d& c : proj_) c.set_trainable(false);
        pool_proj_.set_trainable(false);
        // memory rows are capped at target_cells per block to bound attention cost
        const int target_cells = (cfg_.resolution / 4) * (cfg_.resolution / 4);
        for (int r : block_res_) {
            int pool = 1;
            while ((r / pool) * (r / pool) > target_cells) pool *= 2;
            mem_pool_.push_back(pool);
        }
    }

    const EncoderConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return cfg_.seed; }
    int num_blocks() const { return static_cast<int>(blocks_.size()); }

    // Raw block activations (differentiable w.r.t. the input image); the f_l
    // of the perceptual distance.
    std::vector<Tensor> feature_maps(const Tensor& image) const {
        check_input(image, "feature_maps");
        std::vector<Tensor> maps;
        Tensor x = image;
        for (const Conv2d& c : blocks_) {
            x = tanh_t(c(x));
            maps.push_back(x);
        }
        return maps;
    }

    EncoderFeatures extract(const Tensor& photo) const {
        check_input(photo, "extract");
        for (double v : photo.data())
            if (!(v >= 0.0 && v <= 1.0))
                throw contract_error("extract: photo values must lie in [0, 1]");
        EncoderFeatures out;
        Tensor x = photo.detached();
        for (size_t i = 0; i < blocks_.size(); ++i) {
            x = tanh_t(blocks_[i](x));
            Tensor m = x;
            if (mem_pool_[i] > 1) m = avg_pool2d(m, mem_pool_[i]);
            out.intermediates.push_back(chw_to_rows(proj_[i](m)));
        }
        Tensor pooled = mean_hw(x);  // rank-1 [channels.back()]
        out.final_pooled = tanh_t(pool_proj_(reshape(pooled, {1, pooled.dim(0)})));
        out.final_pooled = reshape(out.final_pooled, {cfg_.d_e});
        return out;
    }

    void visit_params(const std::string& prefix, const ParamVisitor& f) {
        for (size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].visit_params(prefix + ".block" + std::to_string(i), f);
        for (size_t i = 0; i < proj_.size(); ++i)
            proj_[i].visit_params(prefix + ".proj" + std::to_string(i), f);
        pool_proj_.visit_params(prefix + ".pool", f);
    }

private:
    void check_input(const Tensor& image, const char* op) const {
        if (image.rank() != 3 || image.dim(0) != 1 || image.dim(1) != cfg_.resolution ||
            image.dim(2) != cfg_.resolution)
            throw contract_error(std::string(op) + ": expected {1, " +
                                 std::to_string(cfg_.resolution) + ", " +
                                 std::to_string(cfg_.resolution) + "} image, got " +
                                 shape_str(image.shape()));
    }

    EncoderConfig cfg_;
    std::vector<Conv2d> blocks_;
    std::vector<Conv2d> proj_;
    std::vector<int> block_res_;
    std::vector<int> mem_pool_;
    Linear pool_proj_;
};

// Nonnegative weights over the K style anchors, summing to one.
struct StyleCondition {
    std::vector<double> weights;
    double source_scalar = -1.0;  // the s it was built from, when applicable

    int num_anchors() const { return static_cast<int>(weights.size()); }

    void check_valid() const {
        if (weights.empty()) throw contract_error("StyleCondition: no anchors");
        double sum = 0.0;
        for (double w : weights) {
            if (w < 0.0) throw contract_error("StyleCondition: negative weight");
            sum += w;
        }
        if (std::fabs(sum - 1.0) > 1e-6)
            throw contract_error("StyleCondition: weights sum to " + std::to_string(sum));
    }
};

// Continuous style from a scalar: weight 1-s on anchor a, s on anchor b.
inline StyleCondition style_from_scalar(double s, int anchor_a, int anchor_b, int num_anchors) {
    if (!(s >= 0.0 && s <= 1.0))
        throw contract_error("style_from_scalar: s = " + std::to_string(s) + " outside [0, 1]");
    if (anchor_a == anchor_b) throw contract_error("style_from_scalar: anchors must differ");
    if (anchor_a < 0 || anchor_b < 0 || anchor_a >= num_anchors || anchor_b >= num_anchors)
        throw contract_error("style_from_scalar: anchor index outside [0, K)");
    StyleCondition cond;
    cond.weights.assign(static_cast<size_t>(num_anchors), 0.0);
    cond.weights[static_cast<size_t>(anchor_a)] = 1.0 - s;
    cond.weights[static_cast<size_t>(anchor_b)] = s;
    cond.source_scalar = s;
    return cond;
}

inline StyleCondition style_onehot(int k, int num_anchors) {
    if (k < 0 || k >= num_anchors)
        throw contract_error("style_onehot: index outside [0, K)");
    StyleCondition cond;
    cond.weights.assign(static_cast<size_t>(num_anchors), 0.0);
    cond.weights[static_cast<size_t>(k)] = 1.0;
    return cond;
}

// Exact linear combination of anchor rows: sum_k w_k * anchors[k].
// Differentiable w.r.t. the anchors, so they train with the transformer.
inline Tensor embed_style(const StyleCondition& cond, const Tensor& anchors) {
    cond.check_valid();
    check_rank2(anchors, "embed_style");
    if (anchors.dim(0) != cond.num_anchors())
        throw contract_error("embed_style: " + std::to_string(cond.num_anchors()) +
                             " weights vs " + std::to_string(anchors.dim(0)) + " anchors");
    Tensor w = Tensor::from_data({1, cond.num_anchors()}, cond.weights);
    return reshape(matmul(w, anchors), {anchors.dim(1)});
}

// The K learned style anchors; d_style matches the transformer width so the
// embedding feeds adaptive normalization without projection.
struct StyleAnchors {
    Tensor anchors;  // [K x d_style]

    StyleAnchors() = default;

    StyleAnchors(int num_styles, int d_style, Rng& rng) {
        anchors = init_randn({num_styles, d_style}, rng, 0.02);
    }

    Tensor embed(const StyleCondition& cond) const { return embed_style(cond, anchors); }

    void visit_params(const std::string& prefix, const ParamVisitor& f) {
        f(prefix + ".anchors", anchors);
    }

    void set_trainable(bool t) { anchors.set_requires_grad(t); }
};

}  // namespace sketchgen
