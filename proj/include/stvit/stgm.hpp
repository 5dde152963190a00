#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stvit/attention.hpp"
#include "stvit/ops.hpp"

namespace stvit {

/// One branch of the pooling net: Conv(GeLU(LayerNorm(DepthwiseConv(x)))).
struct PoolingBranch {
    Tensor dw_kernel;  // [3,3,C]
    Tensor dw_bias;    // [C]
    LayerNormParams norm;
    LinearWeights pointwise;  // [C, outputs]
};

/// Intra/inter-window pooling net. `intra` emits one mask logit per token of a
/// window; `inter` maps the ws x ws grid of provisional centers to per-window
/// offsets, one channel per token position of the largest window.
struct PoolingNet {
    PoolingBranch intra;
    PoolingBranch inter;

    std::size_t tokens_per_window() const { return inter.pointwise.out_features(); }
};

enum class PoolingMode { adaptive, intra_inter };

std::string to_string(PoolingMode m);
PoolingMode parse_pooling_mode(const std::string& s);

struct StgmWeights {
    TransformerLayerWeights layer1;
    TransformerLayerWeights layer2;
    Tensor global_centers;  // G, [Ns, C]
    std::optional<PoolingNet> pooling;
};

/// Window arrangement of a semantic token set: `rows x cols` windows of
/// `side x side` tokens each, stored window-major then row-major inside a window.
struct WindowGrid {
    std::size_t rows = 1;
    std::size_t cols = 1;
    std::size_t side = 1;

    std::size_t per_window() const noexcept { return side * side; }
    std::size_t windows() const noexcept { return rows * cols; }
    std::size_t tokens() const noexcept { return windows() * per_window(); }
    bool operator==(const WindowGrid&) const = default;
};

struct SemanticTokenSet {
    Tensor tokens;  // [Ns, C]
    std::size_t origin_layer = 0;
    std::optional<WindowGrid> window_grid;

    std::size_t count() const { return tokens.dim(0); }
};

/// Spatial cell of the pooling partition: half-open row and column ranges.
struct PoolingCell {
    IndexRange rows;
    IndexRange cols;
    std::size_t tokens() const { return rows.size() * cols.size(); }
};

/// Partition of an h x w map into ws x ws cells. Divisible extents give an
/// exact tiling. Otherwise the adaptive-pooling ranges are used when
/// `allow_uneven` is set, and a ConfigError is raised when it is not.
std::vector<PoolingCell> pooling_cells(std::size_t h, std::size_t w, std::size_t ws, bool allow_uneven);

/// Row-major token indices (into an h x w map of width `w`) covered by a cell.
std::vector<std::size_t> cell_token_indices(const PoolingCell& cell, std::size_t map_width);

/// P = adaptive_avg_pool(x, ws, ws) flattened to [ws*ws, C].
Tensor init_centers_adaptive(const Tensor& x, std::size_t ws);

/// Mask-weighted initial centers, P_i = Softmax(M_i + O_i) X_w^i.
Tensor init_centers_intra_inter(const Tensor& x, std::size_t ws, const PoolingNet& net, bool allow_uneven = false);

/// Applies one pooling branch to a [h, w, C] map, returning [h*w, outputs].
Tensor pooling_branch_forward(const Tensor& map, const PoolingBranch& branch);

/// First STGM layer: P attends to image tokens X, residual to P, then FFN.
Tensor stgm_layer1(const Tensor& centers, const Tensor& image_tokens, const TransformerLayerWeights& w,
                   std::span<const AttentionGroup> groups = {}, AttentionCapture* capture = nullptr);

/// Second STGM layer: queries S1 + G, keys/values Concat(S1, X).
Tensor stgm_layer2(const Tensor& s1, const Tensor& global_centers, const Tensor& image_tokens,
                   const TransformerLayerWeights& w, std::span<const AttentionGroup> groups = {},
                   AttentionCapture* capture = nullptr);
/// Second STGM layer with no image tokens: plain self-attention among S1 with query offset G.
Tensor stgm_layer2(const Tensor& s1, const Tensor& global_centers, const TransformerLayerWeights& w,
                   AttentionCapture* capture = nullptr);

/// Pre-softmax logits of the second layer evaluated two ways: with the fused
/// query (S1 + G) W_q, and as the sum A_s + A_g of separately computed terms.
/// No bias and no head split; `keys` are the concatenated key tokens.
Tensor fused_query_logits(const Tensor& s1, const Tensor& g, const Tensor& keys, const Tensor& w_q, const Tensor& w_k);
Tensor decoupled_query_logits(const Tensor& s1, const Tensor& g, const Tensor& keys, const Tensor& w_q,
                              const Tensor& w_k);

struct StgmOptions {
    std::size_t ws = 4;
    PoolingMode mode = PoolingMode::adaptive;
    bool allow_uneven = false;
    std::size_t origin_layer = 0;
    /// Use these centers instead of pooling (semantic-token reuse across dumbbell units).
    std::optional<Tensor> initial_centers;
};

/// Per-layer attention maps and MAC counts; centre initialisation is
/// attributed to layer 1.
struct StgmCapture {
    AttentionCapture layer1;
    AttentionCapture layer2;
    std::uint64_t layer1_macs = 0;
    std::uint64_t layer2_macs = 0;
    double layer1_seconds = 0.0;
    double layer2_seconds = 0.0;
};

/// Full module on a global map: centers, layer 1, layer 2. X is left untouched.
SemanticTokenSet run_stgm(const Tensor& image_tokens, std::size_t grid_h, std::size_t grid_w, const StgmWeights& w,
                          const StgmOptions& opts, StgmCapture* capture = nullptr);

/// Centers for one map according to the pooling mode.
Tensor init_centers(const Tensor& map, const StgmWeights& w, const StgmOptions& opts);

PoolingNet random_pooling_net(std::size_t channels, std::size_t tokens_per_window, Rng& rng);
PoolingNet zero_pooling_net(std::size_t channels, std::size_t tokens_per_window);
/// Largest cell token count of the pooling partition.
std::size_t max_cell_tokens(std::size_t h, std::size_t w, std::size_t ws, bool allow_uneven);

StgmWeights random_stgm_weights(std::size_t channels, std::size_t heads, std::size_t mlp_ratio,
                                std::size_t semantic_tokens, std::optional<std::size_t> pooling_tokens, Rng& rng);

void visit_tensors(PoolingNet& w, const std::string& prefix, const TensorVisitor& f);
void visit_tensors(StgmWeights& w, const std::string& prefix, const TensorVisitor& f);

}  // namespace stvit
