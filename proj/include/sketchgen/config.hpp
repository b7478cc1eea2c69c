#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "checkpoint.hpp"
#include "conditioning.hpp"
#include "corpus.hpp"
#include "errors.hpp"
#include "losses.hpp"
#include "transformer.hpp"
#include "vq.hpp"

namespace sketchgen {

struct StageConfig {
    int steps = 0;
    int batch = 8;
    double lr = 3e-4;

    void validate(const char* name) const {
        if (steps < 1) throw config_error(std::string(name) + ": steps must be >= 1");
        if (batch < 1) throw config_error(std::string(name) + ": batch must be >= 1");
        if (lr <= 0.0) throw config_error(std::string(name) + ": lr must be > 0");
    }
};

struct InferenceConfig {
    int steps = 8;             // decode iterations
    double temperature = 0.0;  // 0 = deterministic argmax
    double style_s = 0.5;
    int anchor_a = 0;
    int anchor_b = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (steps < 1) throw config_error("inference: steps must be >= 1");
    }
};

// Full run configuration: one section per module. Defaults are the desk-scale
// benchmark settings; a JSON file and command-line flags override them
// (flag > file > default).
struct RunConfig {
    std::string out_dir;  // empty = $SKETCHGEN_OUT or ./runs
    std::uint64_t seed = 1234;
    CorpusConfig corpus;
    VqConfig codec;
    EncoderConfig encoder;
    TransformerConfig transformer;
    LossWeights loss_weights;
    MimNorm mim_norm = MimNorm::standard;
    PixelNorm pixel_norm = PixelNorm::mean;
    PerceptualConfig perceptual;
    StageConfig train_vq{2000, 8, 3e-4};
    StageConfig pretrain{2000, 8, 3e-4};
    StageConfig finetune{800, 8, 3e-4};
    InferenceConfig inference;
    bool encoder_seed_set = false;  // true when the JSON pinned it explicitly

    // Propagates shared dimensions/seeds across sections, then validates.
    void finalize() {
        corpus.seed = derive_seed(seed, "corpus");
        if (!encoder_seed_set) encoder.seed = derive_seed(seed, "encoder");
        codec.resolution = corpus.resolution;
        encoder.resolution = corpus.resolution;
        transformer.num_tokens = codec.num_tokens();
        transformer.vocab = codec.codebook_size;
        transformer.d_cond = encoder.d_e;
        transformer.d_style = transformer.width;
        corpus.validate();
        codec.validate();
        encoder.validate();
        transformer.validate();
        loss_weights.validate();
        perceptual.validate(static_cast<int>(encoder.channels.size()));
        train_vq.validate("train_vq");
        pretrain.validate("pretrain");
        finetune.validate("finetune");
        inference.validate();
        if (inference.anchor_a == inference.anchor_b ||
            inference.anchor_a < 0 || inference.anchor_b < 0 ||
            inference.anchor_a >= corpus.num_styles || inference.anchor_b >= corpus.num_styles)
            throw config_error("inference: anchor pair must be two distinct styles");
    }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& obj, const std::string& path,
                       const std::vector<std::string>& allowed) {
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const std::string& a : allowed)
            if (key == a) {
                ok = true;
                break;
            }
        if (!ok) throw config_key_error(path.empty() ? key : path + "." + key);
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_run_config_json(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::read_field;
    RunConfig cfg;
    check_keys(j, "",
               {"out_dir", "seed", "corpus", "codec", "encoder", "transformer", "losses",
                "train_vq", "pretrain", "finetune", "inference"});
    read_field(j, "out_dir", cfg.out_dir);
    read_field(j, "seed", cfg.seed);
    if (j.contains("corpus")) {
        const auto& s = j.at("corpus");
        check_keys(s, "corpus",
                   {"resolution", "pretrain_pairs", "finetune_pairs", "heldout_pairs",
                    "num_styles", "stroke_widths", "jitter_pretrain", "jitter_finetune"});
        read_field(s, "resolution", cfg.corpus.resolution);
        read_field(s, "pretrain_pairs", cfg.corpus.pretrain_pairs);
        read_field(s, "finetune_pairs", cfg.corpus.finetune_pairs);
        read_field(s, "heldout_pairs", cfg.corpus.heldout_pairs);
        read_field(s, "num_styles", cfg.corpus.num_styles);
        read_field(s, "stroke_widths", cfg.corpus.stroke_widths);
        read_field(s, "jitter_pretrain", cfg.corpus.jitter_pretrain);
        read_field(s, "jitter_finetune", cfg.corpus.jitter_finetune);
    }
    if (j.contains("codec")) {
        const auto& s = j.at("codec");
        check_keys(s, "codec",
                   {"grid_h", "grid_w", "codebook_size", "code_dim", "beta", "enc_channels",
                    "dec_channels", "dead_entry_patience"});
        read_field(s, "grid_h", cfg.codec.grid_h);
        read_field(s, "grid_w", cfg.codec.grid_w);
        read_field(s, "codebook_size", cfg.codec.codebook_size);
        read_field(s, "code_dim", cfg.codec.code_dim);
        read_field(s, "beta", cfg.codec.beta);
        read_field(s, "enc_channels", cfg.codec.enc_channels);
        read_field(s, "dec_channels", cfg.codec.dec_channels);
        read_field(s, "dead_entry_patience", cfg.codec.dead_entry_patience);
    }
    if (j.contains("encoder")) {
        const auto& s = j.at("encoder");
        check_keys(s, "encoder", {"d_e", "channels", "seed"});
        read_field(s, "d_e", cfg.encoder.d_e);
        read_field(s, "channels", cfg.encoder.channels);
        if (s.contains("seed")) {
            cfg.encoder.seed = s.at("seed").get<std::uint64_t>();
            cfg.encoder_seed_set = true;
        }
    }
    if (j.contains("transformer")) {
        const auto& s = j.at("transformer");
        check_keys(s, "transformer", {"depth", "width", "heads", "mlp_ratio"});
        read_field(s, "depth", cfg.transformer.depth);
        read_field(s, "width", cfg.transformer.width);
        read_field(s, "heads", cfg.transformer.heads);
        read_field(s, "mlp_ratio", cfg.transformer.mlp_ratio);
    }
    if (j.contains("losses")) {
        const auto& s = j.at("losses");
        check_keys(s, "losses",
                   {"lambda_pix", "lambda_pcpt", "mim_norm", "pixel_norm", "perceptual_layers",
                    "perceptual_weights"});
        read_field(s, "lambda_pix", cfg.loss_weights.lambda_pix);
        read_field(s, "lambda_pcpt", cfg.loss_weights.lambda_pcpt);
        if (s.contains("mim_norm")) {
            const std::string v = s.at("mim_norm").get<std::string>();
            if (v == "standard")
                cfg.mim_norm = MimNorm::standard;
            else if (v == "literal")
                cfg.mim_norm = MimNorm::literal;
            else
                throw config_error("losses.mim_norm must be 'standard' or 'literal'");
        }
        if (s.contains("pixel_norm")) {
            const std::string v = s.at("pixel_norm").get<std::string>();
            if (v == "mean")
                cfg.pixel_norm = PixelNorm::mean;
            else if (v == "sum")
                cfg.pixel_norm = PixelNorm::sum;
            else
                throw config_error("losses.pixel_norm must be 'mean' or 'sum'");
        }
        read_field(s, "perceptual_layers", cfg.perceptual.layers);
        read_field(s, "perceptual_weights", cfg.perceptual.weights);
    }
    auto read_stage = [&](const char* name, StageConfig& sc) {
        if (!j.contains(name)) return;
        const auto& s = j.at(name);
        check_keys(s, name, {"steps", "batch", "lr"});
        read_field(s, "steps", sc.steps);
        read_field(s, "batch", sc.batch);
        read_field(s, "lr", sc.lr);
    };
    read_stage("train_vq", cfg.train_vq);
    read_stage("pretrain", cfg.pretrain);
    read_stage("finetune", cfg.finetune);
    if (j.contains("inference")) {
        const auto& s = j.at("inference");
        check_keys(s, "inference",
                   {"steps", "temperature", "style_s", "anchor_a", "anchor_b", "seed"});
        read_field(s, "steps", cfg.inference.steps);
        read_field(s, "temperature", cfg.inference.temperature);
        read_field(s, "style_s", cfg.inference.style_s);
        read_field(s, "anchor_a", cfg.inference.anchor_a);
        read_field(s, "anchor_b", cfg.inference.anchor_b);
        read_field(s, "seed", cfg.inference.seed);
    }
    cfg.finalize();
    return cfg;
}

inline RunConfig parse_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open config file " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error("config file " + path + " is not valid JSON: " + e.what());
    }
    try {
        return parse_run_config_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw config_error("config file " + path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Config <-> checkpoint records. Every value becomes a float32 tensor record;
// 64-bit seeds are split into four 16-bit limbs so they survive exactly.
// ---------------------------------------------------------------------------
namespace detail {

inline void put_u64(Checkpoint& c, const std::string& name, std::uint64_t v) {
    std::vector<double> limbs(4);
    for (int i = 0; i < 4; ++i) limbs[static_cast<size_t>(i)] =
        static_cast<double>((v >> (16 * i)) & 0xffffull);
    c.put(name, Tensor::from_data({4}, std::move(limbs)));
}

inline std::uint64_t get_u64(const Checkpoint& c, const std::string& name) {
    const Tensor& t = c.at(name);
    if (t.numel() != 4) throw load_error("checkpoint: record '" + name + "' is not a u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint64_t>(t.data()[static_cast<size_t>(i)]) << (16 * i);
    return v;
}

inline void put_ints(Checkpoint& c, const std::string& name, const std::vector<int>& v) {
    std::vector<double> d(v.begin(), v.end());
    const int n = static_cast<int>(d.size());
    c.put(name, Tensor::from_data({n}, std::move(d)));
}

inline std::vector<int> get_ints(const Checkpoint& c, const std::string& name) {
    const Tensor& t = c.at(name);
    std::vector<int> out;
    for (double v : t.data()) out.push_back(static_cast<int>(v));
    return out;
}

inline void put_doubles(Checkpoint& c, const std::string& name, const std::vector<double>& v) {
    const int n = static_cast<int>(v.size());
    c.put(name, Tensor::from_data({n}, std::vector<double>(v)));
}

inline std::vector<double> get_doubles(const Checkpoint& c, const std::string& name) {
    const Tensor& t = c.at(name);
    std::vector<double> out(t.data());
    return out;
}

}  // namespace detail

inline void config_to_checkpoint(const RunConfig& cfg, Checkpoint& c) {
    using namespace detail;
    put_u64(c, "config.seed", cfg.seed);
    c.put_scalar("config.corpus.resolution", cfg.corpus.resolution);
    c.put_scalar("config.corpus.pretrain_pairs", cfg.corpus.pretrain_pairs);
    c.put_scalar("config.corpus.finetune_pairs", cfg.corpus.finetune_pairs);
    c.put_scalar("config.corpus.heldout_pairs", cfg.corpus.heldout_pairs);
    c.put_scalar("config.corpus.num_styles", cfg.corpus.num_styles);
    put_doubles(c, "config.corpus.stroke_widths", cfg.corpus.stroke_widths);
    c.put_scalar("config.corpus.jitter_pretrain", cfg.corpus.jitter_pretrain);
    c.put_scalar("config.corpus.jitter_finetune", cfg.corpus.jitter_finetune);
    c.put_scalar("config.codec.grid_h", cfg.codec.grid_h);
    c.put_scalar("config.codec.grid_w", cfg.codec.grid_w);
    c.put_scalar("config.codec.codebook_size", cfg.codec.codebook_size);
    c.put_scalar("config.codec.code_dim", cfg.codec.code_dim);
    c.put_scalar("config.codec.beta", cfg.codec.beta);
    put_ints(c, "config.codec.enc_channels", cfg.codec.enc_channels);
    put_ints(c, "config.codec.dec_channels", cfg.codec.dec_channels);
    c.put_scalar("config.codec.dead_entry_patience", cfg.codec.dead_entry_patience);
    c.put_scalar("config.encoder.d_e", cfg.encoder.d_e);
    put_ints(c, "config.encoder.channels", cfg.encoder.channels);
    put_u64(c, "config.encoder.seed", cfg.encoder.seed);
    c.put_scalar("config.transformer.depth", cfg.transformer.depth);
    c.put_scalar("config.transformer.width", cfg.transformer.width);
    c.put_scalar("config.transformer.heads", cfg.transformer.heads);
    c.put_scalar("config.transformer.mlp_ratio", cfg.transformer.mlp_ratio);
    c.put_scalar("config.losses.lambda_pix", cfg.loss_weights.lambda_pix);
    c.put_scalar("config.losses.lambda_pcpt", cfg.loss_weights.lambda_pcpt);
    c.put_scalar("config.losses.mim_norm", cfg.mim_norm == MimNorm::standard ? 0 : 1);
    c.put_scalar("config.losses.pixel_norm", cfg.pixel_norm == PixelNorm::mean ? 0 : 1);
    put_ints(c, "config.losses.perceptual_layers", cfg.perceptual.layers);
    put_doubles(c, "config.losses.perceptual_weights", cfg.perceptual.weights);
    auto put_stage = [&](const char* name, const StageConfig& s) {
        c.put_scalar(std::string("config.") + name + ".steps", s.steps);
        c.put_scalar(std::string("config.") + name + ".batch", s.batch);
        c.put_scalar(std::string("config.") + name + ".lr", s.lr);
    };
    put_stage("train_vq", cfg.train_vq);
    put_stage("pretrain", cfg.pretrain);
    put_stage("finetune", cfg.finetune);
    c.put_scalar("config.inference.steps", cfg.inference.steps);
    c.put_scalar("config.inference.temperature", cfg.inference.temperature);
    c.put_scalar("config.inference.style_s", cfg.inference.style_s);
    c.put_scalar("config.inference.anchor_a", cfg.inference.anchor_a);
    c.put_scalar("config.inference.anchor_b", cfg.inference.anchor_b);
    put_u64(c, "config.inference.seed", cfg.inference.seed);
}

inline RunConfig config_from_checkpoint(const Checkpoint& c) {
    using namespace detail;
    RunConfig cfg;
    cfg.seed = get_u64(c, "config.seed");
    cfg.corpus.resolution = static_cast<int>(c.scalar("config.corpus.resolution"));
    cfg.corpus.pretrain_pairs = static_cast<int>(c.scalar("config.corpus.pretrain_pairs"));
    cfg.corpus.finetune_pairs = static_cast<int>(c.scalar("config.corpus.finetune_pairs"));
    cfg.corpus.heldout_pairs = static_cast<int>(c.scalar("config.corpus.heldout_pairs"));
    cfg.corpus.num_styles = static_cast<int>(c.scalar("config.corpus.num_styles"));
    cfg.corpus.stroke_widths = get_doubles(c, "config.corpus.stroke_widths");
    cfg.corpus.jitter_pretrain = c.scalar("config.corpus.jitter_pretrain");
    cfg.corpus.jitter_finetune = c.scalar("config.corpus.jitter_finetune");
    cfg.codec.grid_h = static_cast<int>(c.scalar("config.codec.grid_h"));
    cfg.codec.grid_w = static_cast<int>(c.scalar("config.codec.grid_w"));
    cfg.codec.codebook_size = static_cast<int>(c.scalar("config.codec.codebook_size"));
    cfg.codec.code_dim = static_cast<int>(c.scalar("config.codec.code_dim"));
    cfg.codec.beta = c.scalar("config.codec.beta");
    cfg.codec.enc_channels = get_ints(c, "config.codec.enc_channels");
    cfg.codec.dec_channels = get_ints(c, "config.codec.dec_channels");
    cfg.codec.dead_entry_patience =
        static_cast<int>(c.scalar("config.codec.dead_entry_patience"));
    cfg.encoder.d_e = static_cast<int>(c.scalar("config.encoder.d_e"));
    cfg.encoder.channels = get_ints(c, "config.encoder.channels");
    cfg.encoder.seed = get_u64(c, "config.encoder.seed");
    cfg.encoder_seed_set = true;
    cfg.transformer.depth = static_cast<int>(c.scalar("config.transformer.depth"));
    cfg.transformer.width = static_cast<int>(c.scalar("config.transformer.width"));
    cfg.transformer.heads = static_cast<int>(c.scalar("config.transformer.heads"));
    cfg.transformer.mlp_ratio = static_cast<int>(c.scalar("config.transformer.mlp_ratio"));
    cfg.loss_weights.lambda_pix = c.scalar("config.losses.lambda_pix");
    cfg.loss_weights.lambda_pcpt = c.scalar("config.losses.lambda_pcpt");
    cfg.mim_norm = c.scalar("config.losses.mim_norm") == 0 ? MimNorm::standard : MimNorm::literal;
    cfg.pixel_norm =
        c.scalar("config.losses.pixel_norm") == 0 ? PixelNorm::mean : PixelNorm::sum;
    cfg.perceptual.layers = get_ints(c, "config.losses.perceptual_layers");
    cfg.perceptual.weights = get_doubles(c, "config.losses.perceptual_weights");
    auto get_stage = [&](const char* name, StageConfig& s) {
        s.steps = static_cast<int>(c.scalar(std::string("config.") + name + ".steps"));
        s.batch = static_cast<int>(c.scalar(std::string("config.") + name + ".batch"));
        s.lr = c.scalar(std::string("config.") + name + ".lr");
    };
    get_stage("train_vq", cfg.train_vq);
    get_stage("pretrain", cfg.pretrain);
    get_stage("finetune", cfg.finetune);
    cfg.inference.steps = static_cast<int>(c.scalar("config.inference.steps"));
    cfg.inference.temperature = c.scalar("config.inference.temperature");
    cfg.inference.style_s = c.scalar("config.inference.style_s");
    cfg.inference.anchor_a = static_cast<int>(c.scalar("config.inference.anchor_a"));
    cfg.inference.anchor_b = static_cast<int>(c.scalar("config.inference.anchor_b"));
    cfg.inference.seed = get_u64(c, "config.inference.seed");
    cfg.finalize();
    return cfg;
}

}  // namespace sketchgen
