#pragma once

#include <vector>

#include "stvit/stgm.hpp"

namespace stvit {

/// Tiling of an H x W map into `window x window` windows for local attention.
struct WindowPartition {
    std::size_t rows = 1;           // windows along H
    std::size_t cols = 1;           // windows along W
    std::size_t window = 7;         // w, tokens per side
    std::size_t key_window = 7;     // w_k, enlarged key window side
    std::size_t semantic_side = 3;  // ws, semantic tokens per window side

    std::size_t count() const noexcept { return rows * cols; }
    std::size_t height() const noexcept { return rows * window; }
    std::size_t width() const noexcept { return cols * window; }

    static WindowPartition for_map(std::size_t h, std::size_t w, std::size_t window, std::size_t key_window,
                                   std::size_t semantic_side);
};

/// Row-major window order; row-major tokens within a window. H, W divisible by w.
std::vector<Tensor> partition(const Tensor& x, std::size_t w);
Tensor merge(const std::vector<Tensor>& windows, std::size_t h, std::size_t w, std::size_t window);

/// Token indices (row-major over the map) of window `index`.
std::vector<std::size_t> window_token_indices(std::size_t h, std::size_t w, std::size_t window, std::size_t index);

/// Token indices of the key region for a query window: the w_k x w_k block
/// centred on the window, shifted inward to stay on the map. Exactly
/// min(w_k,H) * min(w_k,W) indices, row-major.
std::vector<std::size_t> key_window_indices(std::size_t h, std::size_t w, std::size_t window, std::size_t key_window,
                                            std::size_t index);
Tensor gather_key_window(const Tensor& x, std::size_t index, std::size_t window, std::size_t key_window);

/// Self-attention groups for plain window attention on image tokens.
std::vector<AttentionGroup> window_groups(std::size_t h, std::size_t w, std::size_t window);

/// Index of the semantic token at (r, c) of the semantic grid
/// (rows*side x cols*side) in window-major storage.
std::size_t semantic_token_index(const WindowGrid& grid, std::size_t r, std::size_t c);

struct LocalStgmOptions {
    WindowPartition part;
    std::size_t key_window_layer2 = 14;  // layer 1 uses part.key_window
    PoolingMode mode = PoolingMode::intra_inter;
    bool allow_uneven = true;
    std::size_t origin_layer = 0;
    std::optional<Tensor> initial_centers;  // [windows * ws^2, C], window-major
};

/// Per-window semantic token generation with enlarged key windows.
SemanticTokenSet local_stgm(const Tensor& x, const StgmWeights& w, const LocalStgmOptions& opts,
                            StgmCapture* capture = nullptr);

std::vector<AttentionGroup> semantic_local_groups(const WindowGrid& grid);
/// Non-overlapping span x span tiles over the semantic grid (stride = span).
std::vector<AttentionGroup> cross_window_groups(const WindowGrid& grid, std::size_t span);

/// Self-attention inside each window's ws x ws tokens, plus FFN.
SemanticTokenSet semantic_local_attention(const SemanticTokenSet& s, const TransformerLayerWeights& w,
                                          AttentionCapture* capture = nullptr);

/// Self-attention over (span_multiplier * ws)-sided tiles of the semantic grid.
/// Equal to global self-attention when the grid fits in one tile.
SemanticTokenSet cross_window_attention(const SemanticTokenSet& s, const TransformerLayerWeights& w,
                                        std::size_t span_multiplier = 4, AttentionCapture* capture = nullptr);

}  // namespace stvit
