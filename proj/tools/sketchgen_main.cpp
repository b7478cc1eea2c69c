// Command-line front end: corpus generation, the three training stages,
// synthesis, style interpolation grids, evaluation, and the gradient checker.
//
// Exit codes: 0 success, 2 configuration problem (unknown key, bad value,
// unresolvable path), 3 missing/unreadable checkpoint, 1 anything else.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "sketchgen/config.hpp"
#include "sketchgen/gradcheck.hpp"
#include "sketchgen/pgm.hpp"
#include "sketchgen/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sketchgen;

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON run configuration file");
    cmd->add_option("--seed", opts.seed, "root seed; overrides the config file");
    cmd->add_option("--out", opts.out_dir, "output directory; overrides the config file");
}

RunConfig load_config(const CommonOpts& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) {
        cfg = parse_run_config(opts.config_path);
    } else {
        cfg.finalize();
    }
    if (opts.seed) {
        cfg.seed = *opts.seed;
        cfg.encoder_seed_set = false;  // re-derive from the new root
        cfg.finalize();
    }
    if (opts.out_dir) cfg.out_dir = *opts.out_dir;
    if (cfg.out_dir.empty()) {
        const char* env = std::getenv("SKETCHGEN_OUT");
        cfg.out_dir = env && *env ? env : "runs";
    }
    return cfg;
}

std::string corpus_dir(const RunConfig& cfg) { return cfg.out_dir + "/corpus"; }

Corpus load_corpus_or_die(const RunConfig& cfg) {
    const std::string dir = corpus_dir(cfg);
    if (!fs::exists(dir + "/manifest.txt"))
        throw config_error("no corpus at " + dir + "; run gen-data first");
    return read_corpus(dir);
}

Model load_model_or_die(const std::string& path) {
    if (!fs::exists(path)) throw load_error("checkpoint not found: " + path);
    return load_model(path);
}

Tensor load_photo(const std::string& path, const RunConfig& cfg) {
    const Tensor img = read_image(path);
    if (img.dim(1) != cfg.corpus.resolution || img.dim(2) != cfg.corpus.resolution)
        throw contract_error("photo " + path + " is " + std::to_string(img.dim(2)) + "x" +
                             std::to_string(img.dim(1)) + ", model expects " +
                             std::to_string(cfg.corpus.resolution) + "x" +
                             std::to_string(cfg.corpus.resolution));
    return img;
}

int cmd_gen_data(const CommonOpts& opts) {
    const RunConfig cfg = load_config(opts);
    const Corpus corpus = build_corpus(cfg.corpus);
    write_corpus(corpus_dir(cfg), corpus);
    std::printf("wrote %zu pretrain + %zu finetune + %zu heldout pairs to %s\n",
                corpus.pretrain.size(), corpus.finetune.size(), corpus.heldout.size(),
                corpus_dir(cfg).c_str());
    return 0;
}

int cmd_train_vq(const CommonOpts& opts) {
    const RunConfig cfg = load_config(opts);
    const Corpus corpus = load_corpus_or_die(cfg);
    Model model = build_model(cfg);
    MetricsWriter metrics(cfg.out_dir + "/metrics_vq.log");
    run_stage0(model, corpus, &metrics);
    const double heldout_l1 = corpus.heldout.empty()
                                  ? vq_reconstruction_l1(model.codec, corpus.finetune)
                                  : vq_reconstruction_l1(model.codec, corpus.heldout);
    const std::string path = cfg.out_dir + "/stage0.ckpt";
    save_model(path, model);
    std::printf("stage 0 done: held-out reconstruction L1 = %.4f, checkpoint %s\n", heldout_l1,
                path.c_str());
    return 0;
}

int cmd_pretrain(const CommonOpts& opts, const std::string& ckpt_flag) {
    const RunConfig flag_cfg = load_config(opts);
    const std::string in_path =
        ckpt_flag.empty() ? flag_cfg.out_dir + "/stage0.ckpt" : ckpt_flag;
    if (opts.seed) throw config_error("pretrain: the seed is fixed by the checkpoint");
    Model model = load_model_or_die(in_path);
    model.cfg.out_dir = flag_cfg.out_dir;
    const Corpus corpus = load_corpus_or_die(model.cfg);
    MetricsWriter metrics(model.cfg.out_dir + "/metrics_pretrain.log");
    const auto items = prepare_items(model, corpus.pretrain, false);
    const auto hist = pretrain_transformer(model, items, &metrics);
    const std::string path = model.cfg.out_dir + "/stage1.ckpt";
    save_model(path, model);
    double head = 0.0, tail = 0.0;
    const size_t k = std::min<size_t>(50, hist.size());
    for (size_t i = 0; i < k; ++i) head += hist[i].mim / k;
    for (size_t i = hist.size() - k; i < hist.size(); ++i) tail += hist[i].mim / k;
    std::printf("stage 1 done: masked loss %.4f -> %.4f over %zu steps, checkpoint %s\n", head,
                tail, hist.size(), path.c_str());
    return 0;
}

int cmd_finetune(const CommonOpts& opts, const std::string& ckpt_flag) {
    const RunConfig flag_cfg = load_config(opts);
    const std::string in_path =
        ckpt_flag.empty() ? flag_cfg.out_dir + "/stage1.ckpt" : ckpt_flag;
    if (opts.seed) throw config_error("finetune: the seed is fixed by the checkpoint");
    Model model = load_model_or_die(in_path);
    model.cfg.out_dir = flag_cfg.out_dir;
    const Corpus corpus = load_corpus_or_die(model.cfg);
    MetricsWriter metrics(model.cfg.out_dir + "/metrics_finetune.log");
    const auto items = prepare_items(model, corpus.finetune, true);
    const auto hist = finetune(model, items, &metrics);
    const std::string path = model.cfg.out_dir + "/stage2.ckpt";
    save_model(path, model);
    std::printf("stage 2 done: total loss %.4f -> %.4f over %zu steps, checkpoint %s\n",
                hist.front().total, hist.back().total, hist.size(), path.c_str());
    return 0;
}

int cmd_synthesize(const std::string& ckpt, const std::string& photo_path, double style_s,
                   const std::string& output, std::optional<int> steps,
                   std::optional<double> temperature) {
    Model model = load_model_or_die(ckpt);
    InferenceConfig icfg = model.cfg.inference;
    icfg.style_s = style_s;
    if (steps) icfg.steps = *steps;
    if (temperature) icfg.temperature = *temperature;
    const Tensor photo = load_photo(photo_path, model.cfg);
    const Tensor sketch = synthesize(model, photo, icfg.style_s, icfg);
    write_image(output, sketch);
    std::printf("wrote %s (s = %.3f)\n", output.c_str(), icfg.style_s);
    return 0;
}

int cmd_interpolate(const std::string& ckpt, const std::string& photo_path,
                    std::vector<double> s_values, const std::string& output,
                    std::optional<int> steps) {
    if (s_values.empty()) throw config_error("interpolate: need at least one style value");
    Model model = load_model_or_die(ckpt);
    InferenceConfig icfg = model.cfg.inference;
    if (steps) icfg.steps = *steps;
    const Tensor photo = load_photo(photo_path, model.cfg);
    const int res = model.cfg.corpus.resolution;
    Tensor grid = make_image(res, res * static_cast<int>(s_values.size()));
    for (size_t k = 0; k < s_values.size(); ++k) {
        const Tensor sketch = synthesize(model, photo, s_values[k], icfg);
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x)
                grid.data()[static_cast<size_t>(y) * grid.dim(2) + k * res + x] =
                    sketch.data()[static_cast<size_t>(y) * res + x];
    }
    write_image(output, grid);
    std::printf("wrote %s: %zu sketches side by side\n", output.c_str(), s_values.size());
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt, const std::string& split) {
    Model model = load_model_or_die(ckpt);
    // model state comes from the checkpoint; only path resolution uses the flags
    CommonOpts path_opts = opts;
    path_opts.seed.reset();
    model.cfg.out_dir = load_config(path_opts).out_dir;
    const Corpus corpus = load_corpus_or_die(model.cfg);
    const std::vector<PhotoSketchPair>* pairs = nullptr;
    if (split == "heldout")
        pairs = &corpus.heldout;
    else if (split == "finetune")
        pairs = &corpus.finetune;
    else if (split == "pretrain")
        pairs = &corpus.pretrain;
    else
        throw config_error("eval: split must be heldout, finetune, or pretrain");
    if (pairs->empty()) throw config_error("eval: split '" + split + "' is empty");
    const EvalReport r = evaluate(model, *pairs, model.cfg.inference);
    std::printf("split=%s pairs=%d\n", split.c_str(), r.count);
    std::printf("mean_ssim=%.6f\n", r.mean_ssim);
    std::printf("mean_pixel_l1=%.6f\n", r.mean_pixel_l1);
    std::printf("baseline_random_ssim=%.6f\n", r.baseline_ssim);
    return 0;
}

int cmd_grad_check() {
    const auto results = run_gradient_suite();
    bool all_pass = true;
    for (const GradCheckResult& r : results) {
        std::printf("%-32s %-4s  error %.3e  (tol %.0e)\n", r.name.c_str(),
                    r.pass ? "ok" : "FAIL", r.error, r.tolerance);
        all_pass = all_pass && r.pass;
    }
    std::printf("%s: %zu checks\n", all_pass ? "all gradients verified" : "FAILURES above",
                results.size());
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-style photo-to-sketch synthesis with a masked generative transformer"};
    app.require_subcommand(1);

    CommonOpts gen_opts, vq_opts, pre_opts, fin_opts, eval_opts;
    std::string pre_ckpt, fin_ckpt;

    CLI::App* gen = app.add_subcommand("gen-data", "generate the procedural photo/sketch corpus");
    add_common(gen, gen_opts);

    CLI::App* vq = app.add_subcommand("train-vq", "stage 0: train the vector-quantized codec");
    add_common(vq, vq_opts);

    CLI::App* pre = app.add_subcommand("pretrain", "stage 1: masked-token pre-training");
    add_common(pre, pre_opts);
    pre->add_option("--checkpoint", pre_ckpt, "stage-0 checkpoint (default <out>/stage0.ckpt)");

    CLI::App* fin = app.add_subcommand("finetune", "stage 2: fine-tune transformer and decoder");
    add_common(fin, fin_opts);
    fin->add_option("--checkpoint", fin_ckpt, "stage-1 checkpoint (default <out>/stage1.ckpt)");

    std::string syn_ckpt, syn_photo, syn_out = "sketch.pgm";
    double syn_s = 0.5;
    std::optional<int> syn_steps;
    std::optional<double> syn_temp;
    CLI::App* syn = app.add_subcommand("synthesize", "render one sketch from a photo");
    syn->add_option("--checkpoint", syn_ckpt, "trained checkpoint")->required();
    syn->add_option("--photo", syn_photo, "input photo (binary graymap)")->required();
    syn->add_option("-s,--style-s", syn_s, "style scalar in [0, 1]");
    syn->add_option("--output", syn_out, "output sketch path");
    syn->add_option("--steps", syn_steps, "decode iterations (default from checkpoint)");
    syn->add_option("--temperature", syn_temp, "sampling temperature, 0 = deterministic");

    std::string itp_ckpt, itp_photo, itp_out = "grid.pgm";
    std::vector<double> itp_s = {0.0, 0.5, 1.0};
    std::optional<int> itp_steps;
    CLI::App* itp =
        app.add_subcommand("interpolate", "render a horizontal grid across style values");
    itp->add_option("--checkpoint", itp_ckpt, "trained checkpoint")->required();
    itp->add_option("--photo", itp_photo, "input photo (binary graymap)")->required();
    itp->add_option("--styles", itp_s, "style scalars, e.g. --styles 0,0.5,1")->delimiter(',');
    itp->add_option("--output", itp_out, "output grid path");
    itp->add_option("--steps", itp_steps, "decode iterations (default from checkpoint)");

    std::string eval_ckpt, eval_split = "heldout";
    CLI::App* ev = app.add_subcommand("eval", "report mean SSIM and pixel loss on a split");
    add_common(ev, eval_opts);
    ev->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
    ev->add_option("--split", eval_split, "heldout | finetune | pretrain");

    CLI::App* gc = app.add_subcommand(
        "grad-check", "finite-difference verification of all primitives and the masked loss");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_opts);
        if (vq->parsed()) return cmd_train_vq(vq_opts);
        if (pre->parsed()) return cmd_pretrain(pre_opts, pre_ckpt);
        if (fin->parsed()) return cmd_finetune(fin_opts, fin_ckpt);
        if (syn->parsed())
            return cmd_synthesize(syn_ckpt, syn_photo, syn_s, syn_out, syn_steps, syn_temp);
        if (itp->parsed()) return cmd_interpolate(itp_ckpt, itp_photo, itp_s, itp_out, itp_steps);
        if (ev->parsed()) return cmd_eval(eval_opts, eval_ckpt, eval_split);
        if (gc->parsed()) return cmd_grad_check();
    } catch (const config_key_error& e) {
        std::fprintf(stderr, "error: unknown config key: %s\n", e.key.c_str());
        return 2;
    } catch (const config_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const load_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
