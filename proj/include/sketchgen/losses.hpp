#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "conditioning.hpp"
#include "masking.hpp"
#include "tensor.hpp"
#include "tokens.hpp"

namespace sketchgen {

struct LossWeights {
    double lambda_pix = 4.0;
    double lambda_pcpt = 10.0;

    void validate() const {
        if (lambda_pix < 0.0 || lambda_pcpt < 0.0)
            throw config_error("loss weights must be nonnegative");
    }
};

// Masked-token cross entropy normalization. `standard` divides by the masked
// count M; `literal` divides by N - M (undefined when everything is masked,
// which is exactly the inference start state, hence not the default).
enum class MimNorm { standard, literal };

// Cross entropy over masked positions only. Unmasked rows contribute exactly
// nothing, in value and in gradient.
inline Tensor mim_loss(const Tensor& logits, const TokenGrid& z,
                       const std::vector<std::uint8_t>& mask, MimNorm norm = MimNorm::standard) {
    check_rank2(logits, "mim_loss");
    const int n = logits.dim(0), c = logits.dim(1);
    if (static_cast<int>(z.indices.size()) != n || static_cast<int>(mask.size()) != n)
        throw contract_error("mim_loss: token/mask length != logits rows");
    std::vector<int> rows, cols;
    for (int i = 0; i < n; ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        const int target = z.indices[static_cast<size_t>(i)];
        if (target < 0 || target >= c)
            throw contract_error("mim_loss: target " + std::to_string(target) +
                                 " outside [0, C)");
        rows.push_back(i);
        cols.push_back(target);
    }
    const int m = static_cast<int>(rows.size());
    if (m == 0) throw contract_error("mim_loss: no masked positions (M = 0)");
    double inv;
    if (norm == MimNorm::standard) {
        inv = 1.0 / m;
    } else {
        if (m == n) throw contract_error("mim_loss: literal normalization undefined at M = N");
        inv = 1.0 / (n - m);
    }
    const Tensor picked = gather_rc(log_softmax_rows(logits), rows, cols);
    return mul_scalar(sum_all(picked), -inv);
}

enum class PixelNorm { mean, sum };

// L1 distance between images; mean per pixel by default so weights stay
// comparable across resolutions.
inline Tensor pixel_loss(const Tensor& synthesized, const Tensor& target,
                         PixelNorm norm = PixelNorm::mean) {
    if (synthesized.shape() != target.shape())
        throw contract_error("pixel_loss: shape mismatch " + shape_str(synthesized.shape()) +
                             " vs " + shape_str(target.shape()));
    const Tensor diff = abs_t(sub(synthesized, target));
    return norm == PixelNorm::mean ? mean_all(diff) : sum_all(diff);
}

struct PerceptualConfig {
    std::vector<int> layers = {0, 1, 2};
    std::vector<double> weights = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

    void validate(int available_layers) const {
        if (layers.size() != weights.size())
            throw config_error("perceptual: one weight per layer required");
        for (int l : layers)
            if (l < 0 || l >= available_layers)
                throw config_error("perceptual: layer index " + std::to_string(l) +
                                   " outside encoder depth " + std::to_string(available_layers));
        for (double w : weights)
            if (w < 0.0) throw config_error("perceptual: weights must be nonnegative");
    }
};

// Weighted sum over encoder layers of the mean squared feature difference
// against precomputed reference maps (which carry no gradient).
inline Tensor perceptual_loss_from_maps(const Tensor& synthesized,
                                        const std::vector<Tensor>& ref_maps,
                                        const FeatureEncoder& encoder,
                                        const PerceptualConfig& cfg) {
    cfg.validate(encoder.num_blocks());
    if (cfg.layers.empty()) return Tensor::scalar(0.0);
    const std::vector<Tensor> f_hat = encoder.feature_maps(synthesized);
    Tensor total = Tensor::scalar(0.0);
    for (size_t i = 0; i < cfg.layers.size(); ++i) {
        const Tensor& a = f_hat[static_cast<size_t>(cfg.layers[i])];
        const Tensor& b = ref_maps[static_cast<size_t>(cfg.layers[i])];
        const Tensor d = sub(a, detach(b));
        total = add(total, mul_scalar(mean_all(mul(d, d)), cfg.weights[i]));
    }
    return total;
}

inline Tensor perceptual_loss(const Tensor& synthesized, const Tensor& target,
                              const FeatureEncoder& encoder, const PerceptualConfig& cfg) {
    if (synthesized.shape() != target.shape())
        throw contract_error("perceptual_loss: shape mismatch " +
                             shape_str(synthesized.shape()) + " vs " +
                             shape_str(target.shape()));
    return perceptual_loss_from_maps(synthesized, encoder.feature_maps(target.detached()),
                                     encoder, cfg);
}

// The two distances of the combined objective: D1 is the masked-token loss,
// D2 the weighted image-space losses; total = D1 + D2.
struct Objective {
    Tensor d1;
    Tensor d2;
    Tensor total;
};

inline Objective total_objective(const Tensor& mim, const Tensor& pix, const Tensor& pcpt,
                                 const LossWeights& w) {
    w.validate();
    Objective obj;
    obj.d1 = mim;
    obj.d2 = add(mul_scalar(pix, w.lambda_pix), mul_scalar(pcpt, w.lambda_pcpt));
    obj.total = add(obj.d1, obj.d2);
    return obj;
}

// Plain-text metrics log, one step per line, fixed column order:
//   step stage mim pix pcpt total
class MetricsWriter {
public:
    MetricsWriter() = default;

    explicit MetricsWriter(const std::string& path) { open(path); }

    // Truncates: re-running a stage with the same config reproduces the file
    // byte for byte.
    void open(const std::string& path) {
        out_.open(path, std::ios::trunc);
        if (!out_) throw io_error("MetricsWriter: cannot open " + path);
        out_ << "# step stage mim pix pcpt total\n";
    }

    bool is_open() const { return out_.is_open(); }

    void log(int step, const std::string& stage, double mim, double pix, double pcpt,
             double total) {
        if (!out_.is_open()) return;
        char line[256];
        std::snprintf(line, sizeof(line), "%d %s %.9g %.9g %.9g %.9g\n", step, stage.c_str(), mim,
                      pix, pcpt, total);
        out_ << line;
    }

    void flush() {
        if (out_.is_open()) out_.flush();
    }

private:
    std::ofstream out_;
};

}  // namespace sketchgen
