#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "stvit/bench.hpp"
#include "stvit/model.hpp"
#include "stvit/presets.hpp"

using namespace stvit;

namespace {

void zero_linear(LinearWeights& l) {
    for (auto& v : l.weight.data()) v = 0.0;
    if (l.bias)
        for (auto& v : l.bias->data()) v = 0.0;
}

void zero_residual_branches(TransformerLayerWeights& w) {
    zero_linear(w.attn.o);
    zero_linear(w.fc2);
}

// Expected schedule of tokens_out per transformer layer, derived from the config alone.
std::vector<std::size_t> schedule(const ModelConfig& cfg) {
    std::vector<std::size_t> out;
    std::size_t grid = cfg.grid();
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        if (s > 0 && !(cfg.semantic && cfg.semantic->stage < s && !cfg.dumbbell)) grid /= 2;
        const std::size_t n = grid * grid;
        if (cfg.dumbbell && cfg.dumbbell->stage == s) {
            const std::size_t ns = cfg.semantic->ws * cfg.semantic->ws;
            for (const auto& u : cfg.dumbbell->units) {
                out.insert(out.end(), u.image_layers, n);
                out.insert(out.end(), u.stgm_layers + u.semantic_layers, ns);
                out.insert(out.end(), u.recovery_layers, n);
            }
        } else if (cfg.semantic && cfg.semantic->stage == s) {
            const std::size_t windows = cfg.variant == Variant::local ? (grid / cfg.window) * (grid / cfg.window) : 1;
            const std::size_t ns = windows * cfg.semantic->ws * cfg.semantic->ws;
            const std::size_t pos = *cfg.semantic->stgm_position;
            out.insert(out.end(), pos, n);
            out.insert(out.end(), cfg.stages[s].depth - pos, ns);
        } else if (cfg.semantic && cfg.semantic->stage < s && !cfg.dumbbell) {
            out.insert(out.end(), cfg.stages[s].depth, out.back());
        } else {
            out.insert(out.end(), cfg.stages[s].depth, n);
        }
    }
    return out;
}

ModelConfig random_global_config(std::mt19937_64& gen) {
    std::uniform_int_distribution<int> pick(0, 1000);
    ModelConfig c;
    c.name = "random";
    c.image_size = 8 * (1 + pick(gen) % 3);
    c.patch_size = 4;
    c.in_channels = 1 + pick(gen) % 3;
    c.num_classes = 2 + pick(gen) % 5;
    c.mlp_ratio = 1 + pick(gen) % 4;
    const std::size_t heads = 1 + pick(gen) % 2;
    const std::size_t depth = 3 + pick(gen) % 4;
    c.stages = {{depth, heads * 4 * (1 + pick(gen) % 2), heads}};
    if (pick(gen) % 4 != 0) {
        SemanticConfig s;
        s.stgm_position = pick(gen) % (depth - 1);
        s.ws = 1 + pick(gen) % c.grid();
        s.pooling = pick(gen) % 2 ? PoolingMode::adaptive : PoolingMode::intra_inter;
        s.allow_uneven = true;
        c.semantic = s;
    }
    return c;
}

std::filesystem::path temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("patch embedding") {
    Rng rng(41);
    const auto proj = random_linear(16 * 16 * 3, 8, true, rng);
    CHECK(patch_embed(Tensor({224, 224, 3}), 16, proj).shape() == Shape{196, 8});
    CHECK(patch_embed(Tensor({32, 32, 3}), 16, proj).shape() == Shape{4, 8});
    const Tensor z = patch_embed(Tensor({32, 32, 3}), 16, proj);
    for (double v : z.values()) CHECK(v == 0.0);
    CHECK_THROWS_AS(patch_embed(Tensor({30, 32, 3}), 16, proj), DimensionError);

    std::mt19937_64 gen(41);
    const Tensor img = oracle::random_tensor(gen, {8, 8, 2});
    const auto p = random_linear(4 * 4 * 2, 3, true, rng);
    const Tensor t = patch_embed(img, 4, p);
    Tensor flat({4, 32});
    for (std::size_t pr = 0; pr < 2; ++pr)
        for (std::size_t pc = 0; pc < 2; ++pc)
            for (std::size_t r = 0; r < 4; ++r)
                for (std::size_t q = 0; q < 4; ++q)
                    for (std::size_t ch = 0; ch < 2; ++ch)
                        flat(pr * 2 + pc, (r * 4 + q) * 2 + ch) = img(pr * 4 + r, pc * 4 + q, ch);
    CHECK(max_abs_diff(t, oracle::linear(flat, p)) < 1e-12);
}

TEST_CASE("transformer layer single token and equivariance") {
    std::mt19937_64 gen(42);
    Rng rng(42);
    const auto w = random_transformer_layer(8, 2, 4, rng);
    const Tensor x = oracle::random_tensor(gen, {1, 8});
    AttentionCapture cap;
    const Tensor y = transformer_layer(x, w, {}, &cap);
    CHECK(cap.at(0)(0, 0, 0) == 1.0);
    const Tensor v = linear(linear(layer_norm(x, w.norm1, kLayerNormEps), w.attn.v), w.attn.o);
    const Tensor h = add(x, v);
    CHECK(max_abs_diff(y, add(h, feed_forward(layer_norm(h, w.norm2, kLayerNormEps), w))) < 1e-12);

    const Tensor xs = oracle::random_tensor(gen, {10, 8});
    const std::vector<std::size_t> perm{3, 7, 0, 9, 1, 2, 8, 4, 6, 5};
    CHECK(max_abs_diff(transformer_layer(gather_rows(xs, perm), w), gather_rows(transformer_layer(xs, w), perm)) < 1e-12);
    CHECK(max_abs_diff(transformer_layer(xs, w), oracle::self_layer(xs, w, oracle::all_keys())) < 1e-10);
}

TEST_CASE("recovery layer") {
    std::mt19937_64 gen(43);
    Rng rng(43);
    const auto w = random_transformer_layer(8, 2, 4, rng);
    const Tensor x = oracle::random_tensor(gen, {64, 8});
    SemanticTokenSet s{oracle::random_tensor(gen, {4, 8}), 0, WindowGrid{1, 1, 2}};

    // One window: every image token sees every semantic token.
    const Tensor one = recovery_layer(x, 8, 8, s, {8, 2}, w);
    CHECK(max_abs_diff(one, oracle::cross_layer(x, s.tokens, w, oracle::all_keys())) < 1e-10);

    // Four windows with one semantic token each: weight 1 on the window's token.
    AttentionCapture cap;
    const Tensor four = recovery_layer(x, 8, 8, s, {4, 1}, w, &cap);
    CHECK(four.shape() == x.shape());
    for (const auto& m : cap)
        for (double v : m.values()) CHECK(v == 1.0);
    auto window_of_token = [](std::size_t i) { return ((i / 8) / 4) * 2 + (i % 8) / 4; };
    auto window_of_sem = [](std::size_t j) { return j; };  // 2x2 grid, one token per window
    auto allowed = [&](std::size_t i, std::size_t j) { return window_of_token(i) == window_of_sem(j); };
    CHECK(max_abs_diff(four, oracle::cross_layer(x, s.tokens, w, allowed)) < 1e-10);

    CHECK_THROWS_AS(recovery_layer(x, 8, 8, s, {4, 2}, w), ConfigError);
}

TEST_CASE("deit schedule") {
    const auto cfg = preset("deit-s-16");
    ModelConfig small = cfg;
    small.image_size = 56;
    small.patch_size = 4;
    small.stages[0].channels = 12;
    small.stages[0].heads = 2;
    small.num_classes = 3;
    const auto w = random_weights(small, 1);
    const auto r = forward(small, w, random_image(small, 1));
    const auto counts = r.trace.layer_token_counts();
    std::vector<std::size_t> expect(4, 196);
    expect.insert(expect.end(), 8, 16);
    CHECK(counts == expect);
    CHECK(r.logits.numel() == 3);
    for (double v : r.logits.values()) CHECK(std::isfinite(v));
}

TEST_CASE("dumbbell schedule oscillates three times") {
    const auto cfg = preset("stvit-r-tiny");
    const auto w = random_weights(cfg, 2);
    const auto r = forward(cfg, w, random_image(cfg, 2));
    const auto counts = r.trace.layer_token_counts();
    CHECK(counts == schedule(cfg));
    std::size_t down = 0, up = 0;
    for (std::size_t i = 1; i < counts.size(); ++i) {
        down += counts[i] < counts[i - 1];
        up += counts[i] > counts[i - 1];
    }
    CHECK(down == 3);
    CHECK(up == 3);
    CHECK(counts.front() == 64);
    CHECK(counts.back() == 64);
}

TEST_CASE("token schedules match the config for random and preset configs") {
    for (const auto& name : {"stvit-tiny", "stvit-r-tiny", "stvit-swin-tiny"}) {
        const auto cfg = preset(name);
        const auto r = forward(cfg, random_weights(cfg, 3), random_image(cfg, 3));
        CHECK_MESSAGE(r.trace.layer_token_counts() == schedule(cfg), name);
    }
    std::mt19937_64 gen(44);
    for (int trial = 0; trial < 20; ++trial) {
        const auto cfg = random_global_config(gen);
        cfg.validate();
        const auto r = forward(cfg, random_weights(cfg, trial), random_image(cfg, trial));
        CHECK(r.trace.layer_token_counts() == schedule(cfg));
        CHECK(r.logits.numel() == cfg.num_classes);
    }
}

TEST_CASE("zeroed semantic branches leave a plain transformer over image layers") {
    const auto cfg = preset("stvit-r-tiny");
    auto w = random_weights(cfg, 4);
    const auto plan = build_plan(cfg);
    std::vector<const TransformerLayerWeights*> image_layers;
    for (std::size_t b = 0; b < plan.stages[0].blocks.size(); ++b) {
        auto& blk = w.stages[0].blocks[b];
        if (auto* stgm = std::get_if<StgmWeights>(&blk)) {
            zero_residual_branches(stgm->layer1);
            zero_residual_branches(stgm->layer2);
            continue;
        }
        auto& lw = std::get<TransformerLayerWeights>(blk);
        if (plan.stages[0].blocks[b].kind == BlockKind::image) {
            image_layers.push_back(&lw);
        } else {
            zero_residual_branches(lw);
        }
    }
    const Tensor image = random_image(cfg, 4);
    const auto r = forward(cfg, w, image);

    Tensor x = oracle::linear(patch_embed(image, cfg.patch_size, LinearWeights{Tensor::identity(48), std::nullopt}),
                              w.patch_embed);
    x = oracle::add(x, *w.pos_embed);
    for (const auto* lw : image_layers) x = oracle::self_layer(x, *lw, oracle::all_keys());
    const Tensor pooled = mean_rows(oracle::layer_norm(x, w.final_norm, kLayerNormEps));
    const Tensor logits = oracle::linear(pooled, w.head);
    CHECK(max_abs_diff(r.logits.reshaped({1, cfg.num_classes}), logits) < 1e-10);
}

TEST_CASE("head bias shift keeps the argmax") {
    const auto cfg = preset("stvit-tiny");
    auto w = random_weights(cfg, 5);
    const Tensor image = random_image(cfg, 5);
    const auto a = forward(cfg, w, image).logits;
    for (auto& v : w.head.bias->data()) v += 3.25;
    const auto b = forward(cfg, w, image).logits;
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(b[i] - a[i] - 3.25) < 1e-12);
    const auto argmax = [](const Tensor& t) {
        return std::max_element(t.values().begin(), t.values().end()) - t.values().begin();
    };
    CHECK(argmax(a) == argmax(b));
}

TEST_CASE("forward is deterministic and independent of thread count") {
    const auto cfg = preset("stvit-swin-tiny");
    const auto w = random_weights(cfg, 6);
    const Tensor image = random_image(cfg, 6);
    set_num_threads(1);
    const auto a = forward(cfg, w, image);
    set_num_threads(3);
    const auto b = forward(cfg, w, image);
    set_num_threads(1);
    CHECK(a.logits == b.logits);
    CHECK(trace_to_json(a.trace, false) == trace_to_json(b.trace, false));
}

TEST_CASE("config parsing errors") {
    CHECK_THROWS_AS(parse_model_config("{"), ConfigError);
    CHECK_THROWS_AS(parse_model_config(R"({"stages": [{"depth": 2, "channels": 8, "heads": 3}]})"), ConfigError);
    CHECK_THROWS_AS(parse_model_config(R"({"stages": [{"depth": 2, "channels": 8, "heads": 2}], "bogus": 1})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_model_config(R"({"stages": [{"depth": 4, "channels": 8, "heads": 2}],
        "image_size": 32, "patch_size": 4, "semantic": {"stgm_position": 3, "ws": 2}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_model_config(R"({"stages": [{"depth": 4, "channels": 8, "heads": 2}],
        "image_size": 32, "patch_size": 4, "semantic": {"ws": 2},
        "dumbbell": {"units": [[1, 2, 2, 1], [1, 2, 2, 1]]}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_model_config(R"({"stages": [{"depth": 4, "channels": 8, "heads": 2}],
        "image_size": 32, "patch_size": 4, "semantic": {"stgm_position": 1, "ws": 0}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_model_config(R"({"variant": "sideways", "stages": [{"depth": 2, "channels": 8, "heads": 2}]})"),
                    ConfigError);
    CHECK_THROWS_AS(load_model_config("/nonexistent/config.json"), IoError);
    CHECK_THROWS_AS(preset("deit-q"), ConfigError);
}

TEST_CASE("config json round trip") {
    for (const auto& name : preset_names()) {
        const auto cfg = preset(name);
        const auto again = parse_model_config(model_config_to_json(cfg));
        CHECK(model_config_to_json(again) == model_config_to_json(cfg));
        CHECK(again.depth() == cfg.depth());
    }
}

TEST_CASE("weights save and load") {
    const auto cfg = preset("stvit-r-tiny");
    auto w = random_weights(cfg, 7);
    const auto dir = temp_dir("stvit_weights_roundtrip");
    save_weights(dir, cfg, w);
    auto loaded = load_weights(dir, cfg);
    const Tensor image = random_image(cfg, 7);
    CHECK(forward(cfg, loaded, image).logits == forward(cfg, w, image).logits);

    // Loading against a different config enumerates every mismatch.
    auto other = preset("stvit-tiny");
    other.stages[0].depth = 18;
    other.semantic->stgm_position = 2;
    try {
        load_weights(dir, other);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("missing stages.0.blocks.") != std::string::npos);
        CHECK(msg.find("does not use") != std::string::npos);
    }
    std::filesystem::remove(dir / "head.weight.stvt");
    try {
        load_weights(dir, cfg);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("head.weight.stvt") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_weights(dir, cfg), IoError);

    auto bad = random_weights(cfg, 8);
    Rng rng(1);
    bad.head = random_linear(32, 11, true, rng);
    try {
        validate_weights(cfg, bad);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("head.weight") != std::string::npos);
    }
}

TEST_CASE("trace json") {
    const auto cfg = preset("stvit-tiny");
    const auto w = random_weights(cfg, 9);
    const auto plain = forward(cfg, w, random_image(cfg, 9));
    const auto maps = forward(cfg, w, random_image(cfg, 9), {true});
    const std::string a = trace_to_json(plain.trace, false);
    CHECK(a.find("attention_maps") == std::string::npos);
    CHECK(a.find("seconds") == std::string::npos);
    CHECK(trace_to_json(maps.trace, false).find("attention_maps") != std::string::npos);
    CHECK(trace_to_json(plain.trace, true).find("seconds") != std::string::npos);
    CHECK(plain.trace.records.front().name == "patch_embed");
    CHECK(plain.trace.records.back().name == "head");
}

}  // TEST_SUITE
