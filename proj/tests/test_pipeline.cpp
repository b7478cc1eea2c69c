#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "sketchgen/pipeline.hpp"

using namespace sketchgen;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.seed = 321;
    cfg.corpus.resolution = 16;
    cfg.corpus.pretrain_pairs = 24;
    cfg.corpus.finetune_pairs = 12;
    cfg.corpus.heldout_pairs = 4;
    cfg.codec.grid_h = cfg.codec.grid_w = 4;
    cfg.codec.codebook_size = 16;
    cfg.codec.code_dim = 8;
    cfg.codec.enc_channels = {12, 16};
    cfg.codec.dec_channels = {16, 12, 6};
    cfg.encoder.d_e = 16;
    cfg.encoder.channels = {8, 16};
    cfg.transformer.depth = 2;
    cfg.transformer.width = 16;
    cfg.transformer.heads = 2;
    cfg.transformer.mlp_ratio = 2;
    cfg.perceptual.layers = {0, 1};
    cfg.perceptual.weights = {0.5, 0.5};
    cfg.train_vq = {60, 4, 3e-3};
    cfg.pretrain = {30, 4, 1e-3};
    cfg.finetune = {16, 4, 1e-3};
    cfg.finalize();
    return cfg;
}

// Small random-weight transformer + features for decode-loop property tests.
struct DecodeFixture {
    TransformerConfig tc;
    MaskedTokenTransformer transformer;
    EncoderFeatures features;
    Tensor style;

    DecodeFixture(int grid, std::uint64_t seed) {
        tc.depth = 2;
        tc.width = 16;
        tc.heads = 2;
        tc.num_tokens = grid * grid;
        tc.vocab = 8;
        tc.d_cond = 16;
        tc.d_style = 16;
        tc.mlp_ratio = 2;
        transformer = MaskedTokenTransformer(tc, seed);
        Rng rng(seed + 1);
        // nudge the zero-initialized head so confidences are not all ties
        transformer.visit_params("t", [&](const std::string&, Tensor& p) {
            for (double& v : p.data()) v += 0.02 * rng.normal();
        });
        features.intermediates.push_back(Tensor::randn({10, 16}, rng, 0.5));
        features.final_pooled = Tensor::randn({16}, rng, 0.5);
        style = Tensor::randn({16}, rng, 0.5);
    }
};

}  // namespace

TEST_CASE("decode masked-count trace matches the schedule for N=16, T=4") {
    DecodeFixture fx(4, 77);
    InferenceConfig icfg;
    icfg.steps = 4;
    std::vector<int> trace = {16};  // fully masked start
    iterative_decode(fx.features, fx.style, fx.transformer, 4, 4, icfg,
                     [&](int, const MaskedTokens& state) { trace.push_back(state.masked_count()); });
    REQUIRE(trace == std::vector<int>{16, 15, 12, 7, 0});
}

TEST_CASE("decode properties hold over the N x T grid") {
    for (int grid : {2, 4, 8, 16}) {  // N = 4, 16, 64, 256
        for (int steps : {1, 2, 4, 8}) {
            DecodeFixture fx(grid, 100 + grid * 10 + steps);
            InferenceConfig icfg;
            icfg.steps = steps;
            const int n = grid * grid;
            std::vector<int> committed(static_cast<size_t>(n), kMaskSentinel);
            int expected_t = steps;
            TokenGrid out = iterative_decode(
                fx.features, fx.style, fx.transformer, grid, grid, icfg,
                [&](int t, const MaskedTokens& state) {
                    REQUIRE(t == expected_t);
                    --expected_t;
                    REQUIRE(state.masked_count() == inference_masked_count(t - 1, steps, n));
                    for (int i = 0; i < n; ++i) {
                        const size_t si = static_cast<size_t>(i);
                        if (committed[si] != kMaskSentinel) {
                            REQUIRE(state.values[si] == committed[si]);  // never re-masked
                        }
                        if (!state.mask[si]) committed[si] = state.values[si];
                    }
                });
            for (int idx : out.indices) {
                REQUIRE(idx != kMaskSentinel);
                REQUIRE(idx >= 0);
                REQUIRE(idx < 8);
            }
        }
    }
}

TEST_CASE("single decode step reveals every token at once") {
    DecodeFixture fx(4, 5);
    InferenceConfig icfg;
    icfg.steps = 1;
    int calls = 0;
    iterative_decode(fx.features, fx.style, fx.transformer, 4, 4, icfg,
                     [&](int, const MaskedTokens& st) {
                         ++calls;
                         REQUIRE(st.masked_count() == 0);
                     });
    REQUIRE(calls == 1);
}

TEST_CASE("decode is deterministic for a fixed seed, including sampling") {
    DecodeFixture fx(4, 6);
    InferenceConfig icfg;
    icfg.steps = 4;
    REQUIRE(iterative_decode(fx.features, fx.style, fx.transformer, 4, 4, icfg).indices ==
            iterative_decode(fx.features, fx.style, fx.transformer, 4, 4, icfg).indices);
    icfg.temperature = 0.9;
    icfg.seed = 42;
    REQUIRE(iterative_decode(fx.features, fx.style, fx.transformer, 4, 4, icfg).indices ==
            iterative_decode(fx.features, fx.style, fx.transformer, 4, 4, icfg).indices);
}

TEST_CASE("tiny two-stage run: frozen sets, loss drop, persistence") {
    const RunConfig cfg = tiny_config();
    const Corpus corpus = build_corpus(cfg.corpus);
    Model model = build_model(cfg);

    const auto encoder_before =
        snapshot_params([&](const ParamVisitor& f) { model.encoder.visit_params("e", f); });

    run_stage0(model, corpus);
    REQUIRE(model.stage == 0);

    const auto q_before = snapshot_params(
        [&](const ParamVisitor& f) { model.codec.visit_encoder_params("vq", f); });
    const auto codebook_before = model.codec.codebook().data();

    auto items = prepare_items(model, corpus.pretrain, false);
    const auto hist = pretrain_transformer(model, items);
    REQUIRE(model.stage == 1);
    REQUIRE(hist.size() == static_cast<size_t>(cfg.pretrain.steps));
    REQUIRE(hist.back().mim < hist.front().mim);  // learns something even when tiny

    // frozen contracts: encoder and tokenizer untouched by stage 1
    REQUIRE(encoder_before == snapshot_params([&](const ParamVisitor& f) {
                model.encoder.visit_params("e", f);
            }));
    REQUIRE(q_before == snapshot_params([&](const ParamVisitor& f) {
                model.codec.visit_encoder_params("vq", f);
            }));
    REQUIRE(codebook_before == model.codec.codebook().data());

    SECTION("checkpoint persists the model bit for bit") {
        const std::string path = temp_path("sg_stage1.ckpt");
        save_model(path, model);
        Model back = load_model(path);
        REQUIRE(back.stage == 1);
        std::vector<double> a, b;
        visit_model_params(model, [&](const std::string&, Tensor& t) {
            a.insert(a.end(), t.data().begin(), t.data().end());
        });
        visit_model_params(back, [&](const std::string&, Tensor& t) {
            b.insert(b.end(), t.data().begin(), t.data().end());
        });
        REQUIRE(a == b);
    }

    SECTION("fine-tuning updates T and D but not Q, codebook, or E") {
        auto fitems = prepare_items(model, corpus.finetune, true);
        const auto dec_before = snapshot_params(
            [&](const ParamVisitor& f) { model.codec.visit_decoder_params("vq", f); });
        const auto t_before = snapshot_params(
            [&](const ParamVisitor& f) { model.transformer.visit_params("t", f); });
        const auto fhist = finetune(model, fitems);
        REQUIRE(model.stage == 2);
        REQUIRE(fhist.size() == static_cast<size_t>(cfg.finetune.steps));
        REQUIRE(encoder_before == snapshot_params([&](const ParamVisitor& f) {
                    model.encoder.visit_params("e", f);
                }));
        REQUIRE(q_before == snapshot_params([&](const ParamVisitor& f) {
                    model.codec.visit_encoder_params("vq", f);
                }));
        REQUIRE(codebook_before == model.codec.codebook().data());
        REQUIRE(dec_before != snapshot_params([&](const ParamVisitor& f) {
                    model.codec.visit_decoder_params("vq", f);
                }));
        REQUIRE(t_before != snapshot_params([&](const ParamVisitor& f) {
                    model.transformer.visit_params("t", f);
                }));

        // synthesize end to end, deterministic
        const Tensor sk1 = synthesize(model, corpus.heldout[0].photo, 0.25, cfg.inference);
        const Tensor sk2 = synthesize(model, corpus.heldout[0].photo, 0.25, cfg.inference);
        REQUIRE(sk1.shape() == Shape{1, 16, 16});
        REQUIRE(sk1.data() == sk2.data());
    }
}

TEST_CASE("zero image-loss weights reduce fine-tuning to pure masked-token training") {
    RunConfig cfg = tiny_config();
    cfg.pretrain = {12, 4, 1e-3};
    cfg.finetune = {12, 4, 1e-3};
    const Corpus corpus = build_corpus(cfg.corpus);

    Model a = build_model(cfg);
    run_stage0(a, corpus);
    auto items_a = prepare_items(a, corpus.pretrain, false);
    const auto curve_a = pretrain_transformer(a, items_a);

    RunConfig zcfg = cfg;
    zcfg.loss_weights = {0.0, 0.0};
    Model b = build_model(zcfg);
    run_stage0(b, corpus);
    b.stage = 1;  // compare the loop bodies from the same initial weights
    auto items_b = prepare_items(b, corpus.pretrain, false);
    const auto curve_b = finetune(b, items_b);

    REQUIRE(curve_a.size() == curve_b.size());
    for (size_t i = 0; i < curve_a.size(); ++i)
        REQUIRE(curve_a[i].total == curve_b[i].total);

    std::vector<double> ta, tb;
    a.transformer.visit_params("t", [&](const std::string&, Tensor& t) {
        ta.insert(ta.end(), t.data().begin(), t.data().end());
    });
    b.transformer.visit_params("t", [&](const std::string&, Tensor& t) {
        tb.insert(tb.end(), t.data().begin(), t.data().end());
    });
    REQUIRE(ta == tb);
}

TEST_CASE("save, load, resume matches uninterrupted training bit for bit") {
    RunConfig cfg = tiny_config();
    cfg.finetune = {16, 4, 1e-3};
    const Corpus corpus = build_corpus(cfg.corpus);

    auto make_stage1 = [&]() {
        Model m = build_model(cfg);
        run_stage0(m, corpus);
        auto items = prepare_items(m, corpus.pretrain, false);
        pretrain_transformer(m, items);
        return m;
    };

    // run A: 16 uninterrupted fine-tune steps
    Model a = make_stage1();
    {
        auto items = prepare_items(a, corpus.finetune, true);
        finetune(a, items);
    }

    // run B: 8 steps, checkpoint with optimizer state, reload, 8 more
    Model b = make_stage1();
    const std::string path = temp_path("sg_resume.ckpt");
    {
        auto items = prepare_items(b, corpus.finetune, true);
        b.transformer.set_trainable(true);
        b.anchors.set_trainable(true);
        b.codec.set_decoder_trainable(true);
        AdamConfig ac;
        ac.lr = cfg.finetune.lr;
        Adam adam(ac);
        NamedParams params = stage2_params(b);
        adam.register_params(params.tensors);
        finetune_steps(b, items, adam, 0, 8, nullptr);
        Checkpoint ck = model_to_checkpoint(b);
        adam_to_checkpoint(adam, params, ck);
        save_checkpoint(path, ck);
    }
    Model c = load_model(path);
    {
        const Checkpoint ck = load_checkpoint(path);
        auto items = prepare_items(c, corpus.finetune, true);
        c.transformer.set_trainable(true);
        c.anchors.set_trainable(true);
        c.codec.set_decoder_trainable(true);
        AdamConfig ac;
        ac.lr = cfg.finetune.lr;
        Adam adam(ac);
        NamedParams params = stage2_params(c);
        adam.register_params(params.tensors);
        REQUIRE(adam_from_checkpoint(adam, params, ck));
        REQUIRE(adam.state().step_count == 8);
        finetune_steps(c, items, adam, 8, 16, nullptr);
    }

    std::vector<double> wa, wc;
    visit_model_params(a, [&](const std::string&, Tensor& t) {
        wa.insert(wa.end(), t.data().begin(), t.data().end());
    });
    visit_model_params(c, [&](const std::string&, Tensor& t) {
        wc.insert(wc.end(), t.data().begin(), t.data().end());
    });
    REQUIRE(wa == wc);
}

TEST_CASE("stage gates reject out-of-order training") {
    RunConfig cfg = tiny_config();
    const Corpus corpus = build_corpus(cfg.corpus);
    Model fresh = build_model(cfg);
    auto items = prepare_items(fresh, corpus.pretrain, false);
    REQUIRE_THROWS_AS(pretrain_transformer(fresh, items), config_error);
    run_stage0(fresh, corpus);
    auto fitems = prepare_items(fresh, corpus.finetune, true);
    REQUIRE_THROWS_AS(finetune(fresh, fitems), config_error);  // stage 1 missing
}

TEST_CASE("evaluation reports sane metric ranges") {
    RunConfig cfg = tiny_config();
    cfg.pretrain = {10, 4, 1e-3};
    cfg.finetune = {6, 4, 1e-3};
    const Corpus corpus = build_corpus(cfg.corpus);
    Model m = build_model(cfg);
    run_stage0(m, corpus);
    auto items = prepare_items(m, corpus.pretrain, false);
    pretrain_transformer(m, items);
    auto fitems = prepare_items(m, corpus.finetune, true);
    finetune(m, fitems);
    const EvalReport r = evaluate(m, corpus.heldout, cfg.inference);
    REQUIRE(r.count == 4);
    REQUIRE(r.mean_ssim <= 1.0);
    REQUIRE(r.mean_ssim >= -1.0);
    REQUIRE(r.baseline_ssim <= 1.0);
    REQUIRE(r.mean_pixel_l1 >= 0.0);
}
