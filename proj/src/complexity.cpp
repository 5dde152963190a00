#include "stvit/complexity.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace stvit {

double flops_global_base(double n, double c, double depth) { return depth * (12 * n * c * c + 2 * n * n * c); }

double flops_stvit_global(double n, double m, double c) {
    return 52 * n * c * c + 12 * m * m * c + 76 * m * c * c + 8 * n * n * c + 4 * m * n * c;
}

double flops_attention_global(double n, double c) { return 4 * n * c * c + 2 * n * n * c; }
double flops_attention_window(double n, double c, double w) { return 4 * n * c * c + 2 * w * w * n * c; }
double flops_stgm_local(double n, double m, double c, double w) {
    return 2 * (n / w) * m * c * c + 2 * n * c * c + 2 * (n / w) * m * m * c;
}
double flops_ffn(double n, double c, double mlp_ratio) { return 2 * mlp_ratio * n * c * c; }

namespace {

using u64 = std::uint64_t;

// `qk` is the sum over attention groups of queries * keys.
u64 self_layer(u64 t, u64 c, u64 r, u64 qk) { return 4 * t * c * c + 2 * c * qk + 2 * r * t * c * c; }

u64 cross_layer(u64 q, u64 kv, u64 c, u64 r, u64 qk) {
    return 2 * q * c * c + 2 * kv * c * c + 2 * c * qk + 2 * r * q * c * c;
}

// Intra branch per cell (3x3 depthwise conv, 1-channel pointwise, provisional
// center), inter branch on the ws x ws provisional grid, final weighted sum.
u64 pooling_macs(std::size_t h, std::size_t w, std::size_t ws, bool allow_uneven, u64 c) {
    const auto cells = pooling_cells(h, w, ws, allow_uneven);
    u64 covered = 0, largest = 0;
    for (const auto& cell : cells) {
        covered += cell.tokens();
        largest = std::max<u64>(largest, cell.tokens());
    }
    return 12 * c * covered + ws * ws * c * (9 + largest);
}

u64 square_sum(const std::vector<AttentionGroup>& groups) {
    u64 s = 0;
    for (const auto& g : groups) s += static_cast<u64>(g.queries.size()) * g.keys.size();
    return s;
}

u64 layer_params(u64 c, u64 r) { return (4 + 2 * r) * c * c + (4 + r + 1 + 4) * c; }

}  // namespace

FlopsReport flops_counted(const ModelConfig& cfg) {
    const ModelPlan plan = build_plan(cfg);
    FlopsReport rep;
    rep.model = cfg.name;
    rep.image_tokens = plan.image_tokens;
    rep.uncounted_ops = {"softmax", "layer_norm", "gelu", "residual_add", "bias_add", "adaptive_avg_pool",
                         "query_offset_add"};
    const u64 r = cfg.mlp_ratio;
    u64 params = 0;
    auto emit = [&](std::string name, std::string kind, std::size_t index, std::size_t stage, u64 macs) {
        rep.layers.push_back({std::move(name), std::move(kind), index, stage, macs});
        rep.counted += macs;
    };

    std::size_t gh = cfg.grid(), gw = cfg.grid();
    const u64 c0 = cfg.stages.front().channels;
    const u64 patch_in = static_cast<u64>(cfg.patch_size) * cfg.patch_size * cfg.in_channels;
    emit("patch_embed", "patch_embed", 0, 0, plan.image_tokens * patch_in * c0);
    params += patch_in * c0 + c0 + (cfg.variant == Variant::global ? plan.image_tokens * c0 : 2 * c0);

    u64 ns = 0;
    std::optional<WindowGrid> grid;
    for (std::size_t si = 0; si < plan.stages.size(); ++si) {
        const StagePlan& sp = plan.stages[si];
        const u64 c = sp.channels;
        if (sp.transition == Transition::patch_merge) {
            gh = sp.grid_h;
            gw = sp.grid_w;
            emit("transition", to_string(sp.transition), 0, si, static_cast<u64>(gh) * gw * 4 * sp.in_channels * c);
            params += 4 * sp.in_channels * c + 8 * sp.in_channels;
        } else if (sp.transition == Transition::channel_double) {
            emit("transition", to_string(sp.transition), 0, si, ns * sp.in_channels * c);
            params += sp.in_channels * c;
        }
        const u64 n = static_cast<u64>(gh) * gw;
        for (const BlockPlan& bp : sp.blocks) {
            const std::string kind = to_string(bp.kind);
            switch (bp.kind) {
                case BlockKind::image: {
                    const u64 qk = bp.scope == AttentionScope::global ? n * n : n * sp.window * sp.window;
                    emit("layer", kind, bp.first_layer, si, self_layer(n, c, r, qk));
                    params += layer_params(c, r);
                    break;
                }
                case BlockKind::stgm: {
                    const auto& s = *cfg.semantic;
                    grid = semantic_grid(cfg, sp);
                    ns = grid->tokens();
                    const u64 per = grid->per_window();
                    u64 pool = 0, qk1 = 0, qk2 = 0;
                    std::size_t pool_tokens = 0;
                    if (cfg.variant == Variant::global) {
                        if (s.pooling == PoolingMode::intra_inter) {
                            pool_tokens = max_cell_tokens(gh, gw, s.ws, s.allow_uneven);
                            if (!bp.reuse_centers) pool = pooling_macs(gh, gw, s.ws, s.allow_uneven, c);
                        }
                        qk1 = ns * n;
                        qk2 = ns * (ns + n);
                    } else {
                        if (s.pooling == PoolingMode::intra_inter) {
                            pool_tokens = max_cell_tokens(sp.window, sp.window, s.ws, s.allow_uneven);
                            if (!bp.reuse_centers) {
                                pool = grid->windows() * pooling_macs(sp.window, sp.window, s.ws, s.allow_uneven, c);
                            }
                        }
                        const u64 k1 = static_cast<u64>(std::min(s.key_window1, gh)) * std::min(s.key_window1, gw);
                        const u64 k2 = static_cast<u64>(std::min(s.key_window2, gh)) * std::min(s.key_window2, gw);
                        qk1 = grid->windows() * per * k1;
                        qk2 = grid->windows() * per * (per + k2);
                    }
                    emit("layer", "stgm_layer1", bp.first_layer, si, pool + cross_layer(ns, n, c, r, qk1));
                    emit("layer", "stgm_layer2", bp.first_layer + 1, si, cross_layer(ns, ns + n, c, r, qk2));
                    params += 2 * layer_params(c, r) + ns * c;
                    if (pool_tokens > 0) params += 2 * (9 * c + 3 * c) + c + 1 + c * pool_tokens + pool_tokens;
                    break;
                }
                case BlockKind::semantic: {
                    u64 qk = ns * ns;
                    if (bp.scope == AttentionScope::semantic_local) {
                        qk = square_sum(semantic_local_groups(*grid));
                    } else if (bp.scope == AttentionScope::semantic_cross) {
                        qk = square_sum(cross_window_groups(*grid, cfg.semantic->span_multiplier * grid->side));
                    }
                    emit("layer", kind, bp.first_layer, si, self_layer(ns, c, r, qk));
                    params += layer_params(c, r);
                    break;
                }
                case BlockKind::recovery: {
                    const u64 wsr = cfg.dumbbell->recovery_semantic_window;
                    emit("layer", kind, bp.first_layer, si, cross_layer(n, ns, c, r, n * wsr * wsr));
                    params += layer_params(c, r);
                    ns = 0;
                    break;
                }
            }
        }
    }
    const u64 cl = cfg.stages.back().channels;
    emit("head", "head", 0, plan.stages.size() - 1, cl * cfg.num_classes);
    params += 2 * cl + cl * cfg.num_classes + cfg.num_classes;
    rep.params_estimate = params;
    rep.semantic_tokens = grid ? grid->tokens() : 0;

    if (cfg.semantic) {
        rep.base_counted = flops_counted(cfg.base()).counted;
    } else {
        rep.base_counted = rep.counted;
    }
    rep.reduction_vs_base = 1.0 - static_cast<double>(rep.counted) / static_cast<double>(rep.base_counted);

    if (cfg.variant == Variant::global && !cfg.dumbbell) {
        const double nd = static_cast<double>(plan.image_tokens), cd = static_cast<double>(c0);
        if (!cfg.semantic) {
            rep.closed_form = flops_global_base(nd, cd, static_cast<double>(cfg.depth()));
        } else if (cfg.depth() == 12 && cfg.semantic->stgm_position == 4 && cfg.mlp_ratio == 4) {
            rep.closed_form = flops_stvit_global(nd, static_cast<double>(rep.semantic_tokens), cd);
        }
    }
    return rep;
}

std::string flops_report_to_json(const FlopsReport& r, int indent) {
    using nlohmann::json;
    json layers = json::array();
    for (const auto& l : r.layers) {
        layers.push_back({{"name", l.name}, {"kind", l.kind}, {"index", l.index}, {"stage", l.stage}, {"macs", l.macs}});
    }
    json j{{"model", r.model},
           {"image_tokens", r.image_tokens},
           {"semantic_tokens", r.semantic_tokens},
           {"counted", r.counted},
           {"counted_gflops", static_cast<double>(r.counted) * 1e-9},
           {"base_counted", r.base_counted},
           {"reduction_vs_base", r.reduction_vs_base},
           {"closed_form", r.closed_form ? json(*r.closed_form) : json(nullptr)},
           {"params_estimate", r.params_estimate},
           {"uncounted_ops", r.uncounted_ops},
           {"layers", std::move(layers)}};
    return j.dump(indent);
}

std::string flops_csv_header() {
    return "model,image_tokens,semantic_tokens,counted_gflops,base_gflops,reduction_pct,closed_form_gflops,params_m";
}

std::string flops_csv_row(const FlopsReport& r) {
    std::ostringstream os;
    os << std::fixed;
    os << r.model << ',' << r.image_tokens << ',' << r.semantic_tokens << ',' << std::setprecision(4)
       << static_cast<double>(r.counted) * 1e-9 << ',' << static_cast<double>(r.base_counted) * 1e-9 << ','
       << std::setprecision(2) << 100.0 * r.reduction_vs_base << ',';
    if (r.closed_form) os << std::setprecision(4) << *r.closed_form * 1e-9;
    os << ',' << std::setprecision(2) << static_cast<double>(r.params_estimate) * 1e-6;
    return os.str();
}

}  // namespace stvit
