#include "stvit/model.hpp"

#include <json.hpp>

namespace stvit {

std::string to_string(BlockKind k) {
    switch (k) {
        case BlockKind::image: return "image";
        case BlockKind::stgm: return "stgm";
        case BlockKind::semantic: return "semantic";
        case BlockKind::recovery: return "recovery";
    }
    return "unknown";
}

std::string to_string(AttentionScope s) {
    switch (s) {
        case AttentionScope::global: return "global";
        case AttentionScope::window: return "window";
        case AttentionScope::semantic_local: return "semantic_local";
        case AttentionScope::semantic_cross: return "semantic_cross";
    }
    return "unknown";
}

std::string to_string(Transition t) {
    switch (t) {
        case Transition::none: return "none";
        case Transition::patch_merge: return "patch_merge";
        case Transition::channel_double: return "channel_double";
    }
    return "unknown";
}

namespace {

std::string grid_str(std::size_t h, std::size_t w) { return std::to_string(h) + "x" + std::to_string(w); }

void check_stgm_geometry(const ModelConfig& cfg, const StagePlan& sp) {
    const auto& s = *cfg.semantic;
    if (cfg.variant == Variant::global) {
        if (s.ws > sp.grid_h || s.ws > sp.grid_w) {
            throw ConfigError(cfg.name + ": ws " + std::to_string(s.ws) + " exceeds the " + grid_str(sp.grid_h, sp.grid_w) +
                              " token grid");
        }
        if (s.pooling == PoolingMode::intra_inter) pooling_cells(sp.grid_h, sp.grid_w, s.ws, s.allow_uneven);
        return;
    }
    WindowPartition::for_map(sp.grid_h, sp.grid_w, sp.window, s.key_window1, s.ws);
    if (s.key_window2 < sp.window) {
        throw ConfigError(cfg.name + ": second key window " + std::to_string(s.key_window2) + " smaller than window " +
                          std::to_string(sp.window));
    }
    if (s.ws > sp.window) {
        throw ConfigError(cfg.name + ": ws " + std::to_string(s.ws) + " exceeds window " + std::to_string(sp.window));
    }
    if (s.pooling == PoolingMode::intra_inter) pooling_cells(sp.window, sp.window, s.ws, s.allow_uneven);
}

}  // namespace

WindowGrid semantic_grid(const ModelConfig& cfg, const StagePlan& stage) {
    if (!cfg.semantic) throw ConfigError(cfg.name + ": model has no semantic tokens");
    if (cfg.variant == Variant::global) return {1, 1, cfg.semantic->ws};
    return {stage.grid_h / stage.window, stage.grid_w / stage.window, cfg.semantic->ws};
}

ModelPlan build_plan(const ModelConfig& cfg) {
    ModelPlan plan;
    std::size_t gh = cfg.grid(), gw = cfg.grid();
    plan.image_tokens = gh * gw;
    bool semantic = false;
    std::size_t layer = 1;
    std::size_t prev_channels = cfg.stages.front().channels;

    for (std::size_t si = 0; si < cfg.stages.size(); ++si) {
        const auto& st = cfg.stages[si];
        StagePlan sp;
        sp.in_channels = prev_channels;
        sp.channels = st.channels;
        sp.heads = st.heads;
        sp.semantic_input = semantic;
        if (si > 0) {
            if (semantic) {
                sp.transition = Transition::channel_double;
            } else {
                sp.transition = Transition::patch_merge;
                if (gh % 2 != 0 || gw % 2 != 0) {
                    throw ConfigError(cfg.name + ": cannot merge patches of an odd " + grid_str(gh, gw) + " grid");
                }
                gh /= 2;
                gw /= 2;
            }
        }
        sp.grid_h = gh;
        sp.grid_w = gw;
        sp.window = cfg.variant == Variant::local ? std::min(cfg.window, std::min(gh, gw)) : 0;

        const AttentionScope image_scope = cfg.variant == Variant::global ? AttentionScope::global : AttentionScope::window;
        std::size_t semantic_run = 0;
        auto push = [&](BlockKind kind, bool reuse = false) {
            BlockPlan b;
            b.kind = kind;
            b.first_layer = layer;
            b.reuse_centers = reuse;
            switch (kind) {
                case BlockKind::image:
                case BlockKind::recovery:
                    b.scope = image_scope;
                    break;
                case BlockKind::stgm:
                    b.scope = image_scope;
                    break;
                case BlockKind::semantic:
                    if (cfg.variant == Variant::global) {
                        b.scope = AttentionScope::global;
                    } else {
                        b.scope = semantic_run % 2 == 0 ? AttentionScope::semantic_local : AttentionScope::semantic_cross;
                    }
                    break;
            }
            semantic_run = kind == BlockKind::semantic ? semantic_run + 1 : 0;
            layer += kind == BlockKind::stgm ? 2 : 1;
            sp.blocks.push_back(b);
        };

        const bool image_blocks = !semantic;
        if (image_blocks && cfg.variant == Variant::local && (gh % sp.window != 0 || gw % sp.window != 0)) {
            throw ConfigError(cfg.name + ": stage " + std::to_string(si) + " grid " + grid_str(gh, gw) +
                              " is not divisible into windows of " + std::to_string(sp.window));
        }

        if (cfg.dumbbell && cfg.dumbbell->stage == si) {
            check_stgm_geometry(cfg, sp);
            const auto& d = *cfg.dumbbell;
            const RecoveryWindows rw{d.recovery_window, d.recovery_semantic_window};
            recovery_groups(gh, gw, semantic_grid(cfg, sp), rw);
            for (std::size_t u = 0; u < d.units.size(); ++u) {
                for (std::size_t i = 0; i < d.units[u].image_layers; ++i) push(BlockKind::image);
                push(BlockKind::stgm, d.reuse_semantic_tokens && u > 0);
                for (std::size_t i = 0; i < d.units[u].semantic_layers; ++i) push(BlockKind::semantic);
                push(BlockKind::recovery);
            }
        } else if (cfg.semantic && cfg.semantic->stage == si) {
            check_stgm_geometry(cfg, sp);
            const std::size_t pos = *cfg.semantic->stgm_position;
            for (std::size_t i = 0; i < pos; ++i) push(BlockKind::image);
            push(BlockKind::stgm);
            for (std::size_t i = pos + 2; i < st.depth; ++i) push(BlockKind::semantic);
            semantic = true;
        } else if (semantic) {
            for (std::size_t i = 0; i < st.depth; ++i) push(BlockKind::semantic);
        } else {
            for (std::size_t i = 0; i < st.depth; ++i) push(BlockKind::image);
        }
        prev_channels = st.channels;
        plan.stages.push_back(std::move(sp));
    }
    return plan;
}

// ---------------------------------------------------------------------------

Tensor patch_embed(const Tensor& image, std::size_t patch, const LinearWeights& proj) {
    if (image.rank() != 3) throw DimensionError("patch_embed: expected [H,W,C] image, got " + shape_to_string(image.shape()));
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw DimensionError("patch_embed: image " + grid_str(h, w) + " is not divisible by patch " + std::to_string(patch));
    }
    const std::size_t gh = h / patch, gw = w / patch;
    Tensor patches({gh * gw, patch * patch * c});
    auto out = patches.data();
    const auto in = image.data();
    std::size_t k = 0;
    for (std::size_t pr = 0; pr < gh; ++pr) {
        for (std::size_t pc = 0; pc < gw; ++pc) {
            for (std::size_t r = 0; r < patch; ++r) {
                for (std::size_t q = 0; q < patch; ++q) {
                    const std::size_t base = ((pr * patch + r) * w + pc * patch + q) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) out[k++] = in[base + ch];
                }
            }
        }
    }
    return linear(patches, proj);
}

std::vector<AttentionGroup> recovery_groups(std::size_t grid_h, std::size_t grid_w, const WindowGrid& semantic,
                                            const RecoveryWindows& windows) {
    const std::size_t wr = windows.image_window, wsr = windows.semantic_window;
    const std::size_t sh = semantic.rows * semantic.side, sw = semantic.cols * semantic.side;
    if (wr == 0 || wsr == 0 || grid_h % wr != 0 || grid_w % wr != 0 || sh % wsr != 0 || sw % wsr != 0 ||
        grid_h / wr != sh / wsr || grid_w / wr != sw / wsr) {
        throw ConfigError("recovery windows " + std::to_string(wr) + "/" + std::to_string(wsr) + " do not pair the " +
                          grid_str(grid_h, grid_w) + " image grid with the " + grid_str(sh, sw) + " semantic grid");
    }
    std::vector<AttentionGroup> groups;
    const std::size_t cols = grid_w / wr;
    for (std::size_t i = 0; i < (grid_h / wr) * cols; ++i) {
        AttentionGroup g;
        g.queries = window_token_indices(grid_h, grid_w, wr, i);
        const std::size_t r0 = (i / cols) * wsr, c0 = (i % cols) * wsr;
        for (std::size_t r = r0; r < r0 + wsr; ++r) {
            for (std::size_t c = c0; c < c0 + wsr; ++c) g.keys.push_back(semantic_token_index(semantic, r, c));
        }
        groups.push_back(std::move(g));
    }
    return groups;
}

Tensor recovery_layer(const Tensor& image_tokens, std::size_t grid_h, std::size_t grid_w, const SemanticTokenSet& s,
                      const RecoveryWindows& windows, const TransformerLayerWeights& w, AttentionCapture* capture) {
    if (image_tokens.rank() != 2 || image_tokens.dim(0) != grid_h * grid_w) {
        throw DimensionError("recovery_layer: " + shape_to_string(image_tokens.shape()) + " tokens do not fill a " +
                             grid_str(grid_h, grid_w) + " grid");
    }
    const WindowGrid grid = s.window_grid.value_or(WindowGrid{1, 1, 0});
    if (grid.tokens() != s.count()) {
        throw DimensionError("recovery_layer: semantic window grid does not match " + std::to_string(s.count()) + " tokens");
    }
    const auto groups = recovery_groups(grid_h, grid_w, grid, windows);
    return cross_attention_layer(image_tokens, s.tokens, w, groups, nullptr, capture);
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> ForwardTrace::layer_token_counts() const {
    std::vector<std::size_t> out;
    for (const auto& r : records) {
        if (r.index > 0) out.push_back(r.tokens_out);
    }
    return out;
}

std::uint64_t ForwardTrace::total_macs() const {
    std::uint64_t total = 0;
    for (const auto& r : records) total += r.macs;
    return total;
}

namespace {

Tensor patch_merge(const Tensor& x, std::size_t h, std::size_t w, const TransitionWeights& tw) {
    const std::size_t c = x.dim(1);
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor merged({oh * ow, 4 * c});
    auto out = merged.data();
    const auto in = x.data();
    // Channel blocks ordered (0,0), (1,0), (0,1), (1,1) as (row, col) offsets.
    constexpr std::size_t offsets[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t q = 0; q < ow; ++q) {
            for (std::size_t b = 0; b < 4; ++b) {
                const std::size_t src = ((2 * r + offsets[b][0]) * w + 2 * q + offsets[b][1]) * c;
                const std::size_t dst = (r * ow + q) * 4 * c + b * c;
                std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(src), c, out.begin() + static_cast<std::ptrdiff_t>(dst));
            }
        }
    }
    return linear(layer_norm(merged, *tw.norm, kLayerNormEps), tw.proj);
}

AttentionShape shape_of(const AttentionCapture& maps) {
    if (maps.empty()) return {};
    return {maps.size(), maps.front().dim(0), maps.front().dim(1), maps.front().dim(2)};
}

struct Recorder {
    ForwardTrace& trace;
    bool keep_maps;

    TraceRecord& add(std::string name, std::string kind, std::string scope, std::size_t index, std::size_t stage,
                     std::size_t in, std::size_t out, std::size_t channels, std::uint64_t macs, double seconds,
                     AttentionCapture* maps = nullptr) {
        TraceRecord r;
        r.name = std::move(name);
        r.kind = std::move(kind);
        r.scope = std::move(scope);
        r.index = index;
        r.stage = stage;
        r.tokens_in = in;
        r.tokens_out = out;
        r.channels = channels;
        r.macs = macs;
        r.seconds = seconds;
        if (maps) {
            r.attention = shape_of(*maps);
            if (keep_maps) r.attention_maps = std::move(*maps);
        }
        trace.records.push_back(std::move(r));
        return trace.records.back();
    }
};

}  // namespace

ForwardResult forward(const ModelConfig& cfg, const ModelWeights& w, const Tensor& image, const ForwardOptions& opts) {
    const ModelPlan plan = build_plan(cfg);
    const Shape expected{cfg.image_size, cfg.image_size, cfg.in_channels};
    if (image.shape() != expected) {
        throw DimensionError("forward: image " + shape_to_string(image.shape()) + ", expected " + shape_to_string(expected));
    }
    if (w.stages.size() != plan.stages.size()) throw DimensionError("forward: weights have the wrong number of stages");

    ForwardResult result;
    result.trace.model = cfg.name;
    result.trace.image_tokens = plan.image_tokens;
    Recorder rec{result.trace, opts.export_attention};

    std::size_t gh = cfg.grid(), gw = cfg.grid();
    Tensor x;
    {
        const Timer t;
        const macs::Scope m;
        x = patch_embed(image, cfg.patch_size, w.patch_embed);
        if (w.pos_embed) add_inplace(x, *w.pos_embed);
        if (w.patch_norm) x = layer_norm(x, *w.patch_norm, kLayerNormEps);
        rec.add("patch_embed", "patch_embed", "none", 0, 0, plan.image_tokens, plan.image_tokens, x.dim(1), m.elapsed(),
                t.seconds());
    }

    std::optional<SemanticTokenSet> sem;        // live semantic tokens
    std::optional<SemanticTokenSet> previous;   // semantic tokens of the last finished dumbbell unit
    const std::size_t span = cfg.semantic ? cfg.semantic->span_multiplier : 4;

    for (std::size_t si = 0; si < plan.stages.size(); ++si) {
        const StagePlan& sp = plan.stages[si];
        const StageWeights& sw = w.stages[si];
        if (sw.blocks.size() != sp.blocks.size()) {
            throw DimensionError("forward: stage " + std::to_string(si) + " has " + std::to_string(sw.blocks.size()) +
                                 " weight blocks, expected " + std::to_string(sp.blocks.size()));
        }
        if (sp.transition != Transition::none) {
            const Timer t;
            const macs::Scope m;
            const auto& tw = *sw.transition;
            std::size_t in_tokens = 0, out_tokens = 0;
            if (sp.transition == Transition::channel_double) {
                in_tokens = out_tokens = sem->count();
                sem->tokens = linear(sem->tokens, tw.proj);
            } else {
                in_tokens = gh * gw;
                x = patch_merge(x, gh, gw, tw);
                gh = sp.grid_h;
                gw = sp.grid_w;
                out_tokens = gh * gw;
            }
            rec.add("transition", to_string(sp.transition), "none", 0, si, in_tokens, out_tokens, sp.channels,
                    m.elapsed(), t.seconds());
        }

        for (std::size_t bi = 0; bi < sp.blocks.size(); ++bi) {
            const BlockPlan& bp = sp.blocks[bi];
            const std::string scope = to_string(bp.scope);
            if (bp.kind == BlockKind::stgm) {
                const auto& sw_stgm = std::get<StgmWeights>(sw.blocks[bi]);
                StgmCapture cap;
                std::optional<Tensor> init;
                if (bp.reuse_centers && previous) init = previous->tokens;
                if (cfg.variant == Variant::global) {
                    StgmOptions so{cfg.semantic->ws, cfg.semantic->pooling, cfg.semantic->allow_uneven, bp.first_layer,
                                   std::move(init)};
                    sem = run_stgm(x, gh, gw, sw_stgm, so, &cap);
                } else {
                    LocalStgmOptions lo;
                    lo.part = WindowPartition::for_map(gh, gw, sp.window, cfg.semantic->key_window1, cfg.semantic->ws);
                    lo.key_window_layer2 = cfg.semantic->key_window2;
                    lo.mode = cfg.semantic->pooling;
                    lo.allow_uneven = cfg.semantic->allow_uneven;
                    lo.origin_layer = bp.first_layer;
                    lo.initial_centers = std::move(init);
                    sem = local_stgm(x.reshaped({gh, gw, x.dim(1)}), sw_stgm, lo, &cap);
                }
                rec.add("layer", "stgm_layer1", scope, bp.first_layer, si, gh * gw, sem->count(), sp.channels,
                        cap.layer1_macs, cap.layer1_seconds, &cap.layer1);
                rec.add("layer", "stgm_layer2", scope, bp.first_layer + 1, si, sem->count() + gh * gw, sem->count(),
                        sp.channels, cap.layer2_macs, cap.layer2_seconds, &cap.layer2);
                continue;
            }

            const auto& lw = std::get<TransformerLayerWeights>(sw.blocks[bi]);
            const Timer t;
            const macs::Scope m;
            AttentionCapture maps;
            std::size_t in_tokens = 0, out_tokens = 0;
            switch (bp.kind) {
                case BlockKind::image: {
                    in_tokens = out_tokens = gh * gw;
                    if (bp.scope == AttentionScope::window) {
                        x = transformer_layer(x, lw, window_groups(gh, gw, sp.window), &maps);
                    } else {
                        x = transformer_layer(x, lw, {}, &maps);
                    }
                    break;
                }
                case BlockKind::semantic: {
                    in_tokens = out_tokens = sem->count();
                    if (bp.scope == AttentionScope::semantic_local) {
                        sem = semantic_local_attention(*sem, lw, &maps);
                    } else if (bp.scope == AttentionScope::semantic_cross) {
                        sem = cross_window_attention(*sem, lw, span, &maps);
                    } else {
                        sem->tokens = transformer_layer(sem->tokens, lw, {}, &maps);
                    }
                    break;
                }
                case BlockKind::recovery: {
                    in_tokens = sem->count();
                    out_tokens = gh * gw;
                    const RecoveryWindows rw{cfg.dumbbell->recovery_window, cfg.dumbbell->recovery_semantic_window};
                    x = recovery_layer(x, gh, gw, *sem, rw, lw, &maps);
                    previous = std::move(sem);
                    sem.reset();
                    break;
                }
                case BlockKind::stgm: break;
            }
            rec.add("layer", to_string(bp.kind), scope, bp.first_layer, si, in_tokens, out_tokens, sp.channels,
                    m.elapsed(), t.seconds(), &maps);
        }
    }

    {
        const Timer t;
        const macs::Scope m;
        const Tensor& tokens = sem ? sem->tokens : x;
        const Tensor pooled = mean_rows(layer_norm(tokens, w.final_norm, kLayerNormEps));
        result.logits = linear(pooled, w.head).reshaped({cfg.num_classes});
        rec.add("head", "head", "none", 0, plan.stages.size() - 1, tokens.dim(0), 1, tokens.dim(1), m.elapsed(),
                t.seconds());
    }
    return result;
}

std::string trace_to_json(const ForwardTrace& trace, bool include_timings, int indent) {
    using nlohmann::json;
    json j;
    j["model"] = trace.model;
    j["image_tokens"] = trace.image_tokens;
    j["total_macs"] = trace.total_macs();
    j["layer_tokens"] = trace.layer_token_counts();
    json records = json::array();
    for (const auto& r : trace.records) {
        json jr{{"name", r.name},           {"kind", r.kind},         {"scope", r.scope},
                {"index", r.index},         {"stage", r.stage},       {"tokens_in", r.tokens_in},
                {"tokens_out", r.tokens_out}, {"channels", r.channels}, {"macs", r.macs}};
        if (r.attention) {
            jr["attention"] = {{"groups", r.attention->groups},
                               {"heads", r.attention->heads},
                               {"queries", r.attention->queries},
                               {"keys", r.attention->keys}};
        } else {
            jr["attention"] = nullptr;
        }
        if (include_timings) jr["seconds"] = r.seconds;
        if (!r.attention_maps.empty()) {
            json maps = json::array();
            for (const auto& m : r.attention_maps) maps.push_back({{"shape", m.shape()}, {"data", m.values()}});
            jr["attention_maps"] = std::move(maps);
        }
        records.push_back(std::move(jr));
    }
    j["records"] = std::move(records);
    return j.dump(indent);
}

}  // namespace stvit
