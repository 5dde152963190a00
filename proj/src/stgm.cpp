#include "stvit/stgm.hpp"

#include <algorithm>

namespace stvit {

namespace {

Tensor flatten_map(const Tensor& map) { return map.reshaped({map.dim(0) * map.dim(1), map.dim(2)}); }

// [T, 1] logits column -> [1, T] row.
Tensor as_row(const Tensor& column) { return column.reshaped({1, column.numel()}); }

void check_map(const Tensor& x, const char* what) {
    if (x.rank() != 3) throw DimensionError(std::string(what) + ": expected [H,W,C] map, got " + shape_to_string(x.shape()));
}

}  // namespace

std::string to_string(PoolingMode m) { return m == PoolingMode::adaptive ? "adaptive" : "intra_inter"; }

PoolingMode parse_pooling_mode(const std::string& s) {
    if (s == "adaptive") return PoolingMode::adaptive;
    if (s == "intra_inter") return PoolingMode::intra_inter;
    throw ConfigError("unknown pooling mode '" + s + "' (expected adaptive or intra_inter)");
}

std::vector<PoolingCell> pooling_cells(std::size_t h, std::size_t w, std::size_t ws, bool allow_uneven) {
    if (ws == 0) throw ConfigError("semantic grid side ws must be >= 1");
    if (h < ws || w < ws) {
        throw ConfigError("map " + std::to_string(h) + "x" + std::to_string(w) + " smaller than semantic grid " +
                          std::to_string(ws));
    }
    if ((h % ws != 0 || w % ws != 0) && !allow_uneven) {
        throw ConfigError("map " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by ws=" +
                          std::to_string(ws) + " and uneven pooling windows are disabled");
    }
    std::vector<PoolingCell> cells;
    cells.reserve(ws * ws);
    for (std::size_t i = 0; i < ws; ++i) {
        for (std::size_t j = 0; j < ws; ++j) cells.push_back({adaptive_range(i, h, ws), adaptive_range(j, w, ws)});
    }
    return cells;
}

std::vector<std::size_t> cell_token_indices(const PoolingCell& cell, std::size_t map_width) {
    std::vector<std::size_t> idx;
    idx.reserve(cell.tokens());
    for (std::size_t r = cell.rows.begin; r < cell.rows.end; ++r) {
        for (std::size_t c = cell.cols.begin; c < cell.cols.end; ++c) idx.push_back(r * map_width + c);
    }
    return idx;
}

std::size_t max_cell_tokens(std::size_t h, std::size_t w, std::size_t ws, bool allow_uneven) {
    std::size_t m = 0;
    for (const auto& c : pooling_cells(h, w, ws, allow_uneven)) m = std::max(m, c.tokens());
    return m;
}

Tensor init_centers_adaptive(const Tensor& x, std::size_t ws) {
    check_map(x, "init_centers_adaptive");
    if (ws == 0) throw ConfigError("init_centers_adaptive: ws must be >= 1");
    return flatten_map(adaptive_avg_pool(x, ws, ws));
}

Tensor pooling_branch_forward(const Tensor& map, const PoolingBranch& branch) {
    check_map(map, "pooling branch");
    const Tensor conv = flatten_map(depthwise_conv2d(map, branch.dw_kernel, branch.dw_bias));
    return linear(gelu(layer_norm(conv, branch.norm, kLayerNormEps)), branch.pointwise);
}

Tensor init_centers_intra_inter(const Tensor& x, std::size_t ws, const PoolingNet& net, bool allow_uneven) {
    check_map(x, "init_centers_intra_inter");
    const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const auto cells = pooling_cells(h, w, ws, allow_uneven);
    const std::size_t max_tokens = max_cell_tokens(h, w, ws, allow_uneven);
    if (net.intra.pointwise.out_features() != 1) throw DimensionError("intra pooling branch must emit one logit per token");
    if (net.tokens_per_window() != max_tokens) {
        throw DimensionError("inter pooling branch emits " + std::to_string(net.tokens_per_window()) +
                             " offsets per window, partition needs " + std::to_string(max_tokens));
    }

    const Tensor tokens = flatten_map(x);
    std::vector<Tensor> window_tokens;
    std::vector<Tensor> masks;
    Tensor provisional({ws, ws, c});
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& cell = cells[i];
        const auto idx = cell_token_indices(cell, w);
        Tensor xw = gather_rows(tokens, idx);
        Tensor mask = as_row(pooling_branch_forward(xw.reshaped({cell.rows.size(), cell.cols.size(), c}), net.intra));
        const Tensor p_hat = matmul(softmax_rows(mask), xw);
        std::copy_n(p_hat.data().begin(), c, provisional.data().begin() + static_cast<std::ptrdiff_t>(i * c));
        window_tokens.push_back(std::move(xw));
        masks.push_back(std::move(mask));
    }

    const Tensor offsets = pooling_branch_forward(provisional, net.inter);  // [ws*ws, max_tokens]
    Tensor centers({cells.size(), c});
    for (std::size_t i = 0; i < cells.size(); ++i) {
        Tensor logits = masks[i];
        const auto o = offsets.row(i);
        for (std::size_t t = 0; t < logits.numel(); ++t) logits[t] += o[t];
        const Tensor p = matmul(softmax_rows(logits), window_tokens[i]);
        std::copy_n(p.data().begin(), c, centers.row(i).begin());
    }
    return centers;
}

Tensor init_centers(const Tensor& map, const StgmWeights& w, const StgmOptions& opts) {
    // Adaptive pooling is total; divisibility only matters for the mask nets.
    if (opts.mode == PoolingMode::adaptive) return init_centers_adaptive(map, opts.ws);
    if (!w.pooling) throw ConfigError("intra_inter pooling requested but the STGM has no pooling net weights");
    return init_centers_intra_inter(map, opts.ws, *w.pooling, opts.allow_uneven);
}

Tensor stgm_layer1(const Tensor& centers, const Tensor& image_tokens, const TransformerLayerWeights& w,
                   std::span<const AttentionGroup> groups, AttentionCapture* capture) {
    return cross_attention_layer(centers, image_tokens, w, groups, nullptr, capture);
}

Tensor stgm_layer2(const Tensor& s1, const Tensor& global_centers, const Tensor& image_tokens,
                   const TransformerLayerWeights& w, std::span<const AttentionGroup> groups, AttentionCapture* capture) {
    if (global_centers.shape() != s1.shape()) {
        throw DimensionError("stgm_layer2: global centers " + shape_to_string(global_centers.shape()) +
                             " do not match semantic tokens " + shape_to_string(s1.shape()));
    }
    return cross_attention_layer(s1, concat_rows(s1, image_tokens), w, groups, &global_centers, capture);
}

Tensor stgm_layer2(const Tensor& s1, const Tensor& global_centers, const TransformerLayerWeights& w,
                   AttentionCapture* capture) {
    if (global_centers.shape() != s1.shape()) {
        throw DimensionError("stgm_layer2: global centers " + shape_to_string(global_centers.shape()) +
                             " do not match semantic tokens " + shape_to_string(s1.shape()));
    }
    return cross_attention_layer(s1, s1, w, {}, &global_centers, capture);
}

Tensor fused_query_logits(const Tensor& s1, const Tensor& g, const Tensor& keys, const Tensor& w_q, const Tensor& w_k) {
    return matmul_transposed(matmul(add(s1, g), w_q), matmul(keys, w_k));
}

Tensor decoupled_query_logits(const Tensor& s1, const Tensor& g, const Tensor& keys, const Tensor& w_q,
                              const Tensor& w_k) {
    const Tensor k = matmul(keys, w_k);
    Tensor a_s = matmul_transposed(matmul(s1, w_q), k);
    add_inplace(a_s, matmul_transposed(matmul(g, w_q), k));
    return a_s;
}

SemanticTokenSet run_stgm(const Tensor& image_tokens, std::size_t grid_h, std::size_t grid_w, const StgmWeights& w,
                          const StgmOptions& opts, StgmCapture* capture) {
    if (image_tokens.rank() != 2 || image_tokens.dim(0) != grid_h * grid_w) {
        throw DimensionError("run_stgm: " + shape_to_string(image_tokens.shape()) + " tokens do not fill a " +
                             std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
    }
    const Timer t1;
    const macs::Scope m1;
    Tensor centers;
    if (opts.initial_centers) {
        centers = *opts.initial_centers;
    } else {
        centers = init_centers(image_tokens.reshaped({grid_h, grid_w, image_tokens.dim(1)}), w, opts);
    }
    const Tensor s1 = stgm_layer1(centers, image_tokens, w.layer1, {}, capture ? &capture->layer1 : nullptr);
    if (capture) {
        capture->layer1_macs = m1.elapsed();
        capture->layer1_seconds = t1.seconds();
    }
    const Timer t2;
    const macs::Scope m2;
    Tensor s2 = stgm_layer2(s1, w.global_centers, image_tokens, w.layer2, {}, capture ? &capture->layer2 : nullptr);
    if (capture) {
        capture->layer2_macs = m2.elapsed();
        capture->layer2_seconds = t2.seconds();
    }
    return {std::move(s2), opts.origin_layer, WindowGrid{1, 1, opts.ws}};
}

namespace {

PoolingBranch make_branch(std::size_t channels, std::size_t outputs, bool zero, Rng* rng) {
    PoolingBranch b;
    b.dw_kernel = zero ? Tensor::zeros({3, 3, channels}) : rng->normal_tensor({3, 3, channels}, kInitStd);
    b.dw_bias = Tensor::zeros({channels});
    b.norm = identity_norm(channels);
    if (zero) {
        b.norm.gamma = Tensor::zeros({channels});
        b.pointwise = {Tensor::zeros({channels, outputs}), Tensor::zeros({outputs})};
    } else {
        b.pointwise = random_linear(channels, outputs, true, *rng);
    }
    return b;
}

}  // namespace

PoolingNet random_pooling_net(std::size_t channels, std::size_t tokens_per_window, Rng& rng) {
    return {make_branch(channels, 1, false, &rng), make_branch(channels, tokens_per_window, false, &rng)};
}

PoolingNet zero_pooling_net(std::size_t channels, std::size_t tokens_per_window) {
    return {make_branch(channels, 1, true, nullptr), make_branch(channels, tokens_per_window, true, nullptr)};
}

StgmWeights random_stgm_weights(std::size_t channels, std::size_t heads, std::size_t mlp_ratio,
                                std::size_t semantic_tokens, std::optional<std::size_t> pooling_tokens, Rng& rng) {
    StgmWeights w;
    w.layer1 = random_transformer_layer(channels, heads, mlp_ratio, rng);
    w.layer2 = random_transformer_layer(channels, heads, mlp_ratio, rng);
    w.global_centers = rng.normal_tensor({semantic_tokens, channels}, kInitStd);
    if (pooling_tokens) w.pooling = random_pooling_net(channels, *pooling_tokens, rng);
    return w;
}

void visit_tensors(PoolingNet& w, const std::string& prefix, const TensorVisitor& f) {
    for (auto [branch, name] : {std::pair{&w.intra, "intra"}, std::pair{&w.inter, "inter"}}) {
        const std::string p = prefix + "." + name;
        f(p + ".dw_kernel", branch->dw_kernel);
        f(p + ".dw_bias", branch->dw_bias);
        visit_tensors(branch->norm, p + ".norm", f);
        visit_tensors(branch->pointwise, p + ".pointwise", f);
    }
}

void visit_tensors(StgmWeights& w, const std::string& prefix, const TensorVisitor& f) {
    visit_tensors(w.layer1, prefix + ".layer1", f);
    visit_tensors(w.layer2, prefix + ".layer2", f);
    f(prefix + ".global_centers", w.global_centers);
    if (w.pooling) visit_tensors(*w.pooling, prefix + ".pooling", f);
}

}  // namespace stvit
