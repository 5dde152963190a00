#include "stvit/windowing.hpp"

#include <algorithm>
#include <numeric>

namespace stvit {

namespace {

void check_divisible(std::size_t h, std::size_t w, std::size_t window) {
    if (window == 0 || h % window != 0 || w % window != 0) {
        throw ConfigError("map " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible into " +
                          std::to_string(window) + "x" + std::to_string(window) + " windows");
    }
}

// Start of the clamped key region along one axis.
std::size_t key_start(std::size_t window_begin, std::size_t window, std::size_t key_window, std::size_t extent) {
    const std::size_t span = std::min(key_window, extent);
    const std::size_t grow = (key_window - window) / 2;
    const std::size_t start = window_begin > grow ? window_begin - grow : 0;
    return std::min(start, extent - span);
}

const WindowGrid& require_grid(const SemanticTokenSet& s, const char* what) {
    if (!s.window_grid) throw ConfigError(std::string(what) + ": semantic token set has no window grid");
    if (s.window_grid->tokens() != s.count()) {
        throw DimensionError(std::string(what) + ": window grid does not match token count " + std::to_string(s.count()));
    }
    return *s.window_grid;
}

}  // namespace

WindowPartition WindowPartition::for_map(std::size_t h, std::size_t w, std::size_t window, std::size_t key_window,
                                         std::size_t semantic_side) {
    check_divisible(h, w, window);
    if (key_window < window) {
        throw ConfigError("key window " + std::to_string(key_window) + " smaller than window " + std::to_string(window));
    }
    return {h / window, w / window, window, key_window, semantic_side};
}

std::vector<std::size_t> window_token_indices(std::size_t h, std::size_t w, std::size_t window, std::size_t index) {
    check_divisible(h, w, window);
    const std::size_t cols = w / window;
    const std::size_t r0 = (index / cols) * window, c0 = (index % cols) * window;
    std::vector<std::size_t> idx;
    idx.reserve(window * window);
    for (std::size_t r = r0; r < r0 + window; ++r) {
        for (std::size_t c = c0; c < c0 + window; ++c) idx.push_back(r * w + c);
    }
    return idx;
}

std::vector<Tensor> partition(const Tensor& x, std::size_t window) {
    if (x.rank() != 3) throw DimensionError("partition: expected [H,W,C], got " + shape_to_string(x.shape()));
    const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    check_divisible(h, w, window);
    const Tensor tokens = x.reshaped({h * w, c});
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < (h / window) * (w / window); ++i) {
        out.push_back(gather_rows(tokens, window_token_indices(h, w, window, i)));
    }
    return out;
}

Tensor merge(const std::vector<Tensor>& windows, std::size_t h, std::size_t w, std::size_t window) {
    check_divisible(h, w, window);
    if (windows.size() != (h / window) * (w / window)) throw DimensionError("merge: wrong window count");
    const std::size_t c = windows.front().dim(1);
    Tensor tokens({h * w, c});
    for (std::size_t i = 0; i < windows.size(); ++i) scatter_rows(tokens, windows[i], window_token_indices(h, w, window, i));
    return std::move(tokens).reshaped({h, w, c});
}

std::vector<std::size_t> key_window_indices(std::size_t h, std::size_t w, std::size_t window, std::size_t key_window,
                                            std::size_t index) {
    check_divisible(h, w, window);
    if (key_window < window) throw ConfigError("key window smaller than query window");
    const std::size_t cols = w / window;
    const std::size_t r0 = key_start((index / cols) * window, window, key_window, h);
    const std::size_t c0 = key_start((index % cols) * window, window, key_window, w);
    const std::size_t kh = std::min(key_window, h), kw = std::min(key_window, w);
    std::vector<std::size_t> idx;
    idx.reserve(kh * kw);
    for (std::size_t r = r0; r < r0 + kh; ++r) {
        for (std::size_t c = c0; c < c0 + kw; ++c) idx.push_back(r * w + c);
    }
    return idx;
}

Tensor gather_key_window(const Tensor& x, std::size_t index, std::size_t window, std::size_t key_window) {
    if (x.rank() != 3) throw DimensionError("gather_key_window: expected [H,W,C], got " + shape_to_string(x.shape()));
    const std::size_t h = x.dim(0), w = x.dim(1);
    return gather_rows(x.reshaped({h * w, x.dim(2)}), key_window_indices(h, w, window, key_window, index));
}

std::vector<AttentionGroup> window_groups(std::size_t h, std::size_t w, std::size_t window) {
    check_divisible(h, w, window);
    std::vector<AttentionGroup> groups;
    for (std::size_t i = 0; i < (h / window) * (w / window); ++i) {
        auto idx = window_token_indices(h, w, window, i);
        groups.push_back({idx, idx});
    }
    return groups;
}

std::size_t semantic_token_index(const WindowGrid& grid, std::size_t r, std::size_t c) {
    const std::size_t window = (r / grid.side) * grid.cols + c / grid.side;
    return window * grid.per_window() + (r % grid.side) * grid.side + c % grid.side;
}

SemanticTokenSet local_stgm(const Tensor& x, const StgmWeights& w, const LocalStgmOptions& opts, StgmCapture* capture) {
    if (x.rank() != 3) throw DimensionError("local_stgm: expected [H,W,C], got " + shape_to_string(x.shape()));
    const std::size_t h = x.dim(0), wd = x.dim(1), c = x.dim(2);
    const auto& part = opts.part;
    if (part.height() != h || part.width() != wd) {
        throw ConfigError("local_stgm: partition " + std::to_string(part.rows) + "x" + std::to_string(part.cols) +
                          " of " + std::to_string(part.window) + " does not tile the " + std::to_string(h) + "x" +
                          std::to_string(wd) + " map");
    }
    const std::size_t per_window = part.semantic_side * part.semantic_side;
    const std::size_t ns = per_window * part.count();
    const Tensor tokens = x.reshaped({h * wd, c});
    const auto windows = partition(x, part.window);

    const Timer t1;
    const macs::Scope m1;
    Tensor centers({ns, c});
    if (opts.initial_centers) {
        if (opts.initial_centers->shape() != centers.shape()) {
            throw DimensionError("local_stgm: initial centers " + shape_to_string(opts.initial_centers->shape()) +
                                 ", expected " + shape_to_string(centers.shape()));
        }
        centers = *opts.initial_centers;
    } else {
        const StgmOptions pool_opts{part.semantic_side, opts.mode, opts.allow_uneven, opts.origin_layer, std::nullopt};
        for (std::size_t i = 0; i < windows.size(); ++i) {
            const Tensor p = init_centers(windows[i].reshaped({part.window, part.window, c}), w, pool_opts);
            std::copy(p.data().begin(), p.data().end(),
                      centers.data().begin() + static_cast<std::ptrdiff_t>(i * per_window * c));
        }
    }

    std::vector<AttentionGroup> groups1, groups2;
    for (std::size_t i = 0; i < part.count(); ++i) {
        std::vector<std::size_t> q(per_window);
        std::iota(q.begin(), q.end(), i * per_window);
        groups1.push_back({q, key_window_indices(h, wd, part.window, part.key_window, i)});
        std::vector<std::size_t> k2 = q;
        for (auto t : key_window_indices(h, wd, part.window, opts.key_window_layer2, i)) k2.push_back(ns + t);
        groups2.push_back({q, std::move(k2)});
    }

    const Tensor s1 = stgm_layer1(centers, tokens, w.layer1, groups1, capture ? &capture->layer1 : nullptr);
    if (capture) {
        capture->layer1_macs = m1.elapsed();
        capture->layer1_seconds = t1.seconds();
    }
    const Timer t2;
    const macs::Scope m2;
    Tensor s2 = stgm_layer2(s1, w.global_centers, tokens, w.layer2, groups2, capture ? &capture->layer2 : nullptr);
    if (capture) {
        capture->layer2_macs = m2.elapsed();
        capture->layer2_seconds = t2.seconds();
    }
    return {std::move(s2), opts.origin_layer, WindowGrid{part.rows, part.cols, part.semantic_side}};
}

std::vector<AttentionGroup> semantic_local_groups(const WindowGrid& grid) {
    std::vector<AttentionGroup> groups;
    for (std::size_t i = 0; i < grid.windows(); ++i) {
        std::vector<std::size_t> idx(grid.per_window());
        std::iota(idx.begin(), idx.end(), i * grid.per_window());
        groups.push_back({idx, idx});
    }
    return groups;
}

std::vector<AttentionGroup> cross_window_groups(const WindowGrid& grid, std::size_t span) {
    if (span == 0) throw ConfigError("cross-window span must be >= 1");
    const std::size_t sh = grid.rows * grid.side, sw = grid.cols * grid.side;
    std::vector<AttentionGroup> groups;
    for (std::size_t r0 = 0; r0 < sh; r0 += span) {
        for (std::size_t c0 = 0; c0 < sw; c0 += span) {
            std::vector<std::size_t> idx;
            for (std::size_t r = r0; r < std::min(sh, r0 + span); ++r) {
                for (std::size_t c = c0; c < std::min(sw, c0 + span); ++c) idx.push_back(semantic_token_index(grid, r, c));
            }
            std::sort(idx.begin(), idx.end());
            groups.push_back({idx, idx});
        }
    }
    return groups;
}

SemanticTokenSet semantic_local_attention(const SemanticTokenSet& s, const TransformerLayerWeights& w,
                                          AttentionCapture* capture) {
    const auto& grid = require_grid(s, "semantic_local_attention");
    const auto groups = semantic_local_groups(grid);
    return {transformer_layer(s.tokens, w, groups, capture), s.origin_layer, s.window_grid};
}

SemanticTokenSet cross_window_attention(const SemanticTokenSet& s, const TransformerLayerWeights& w,
                                        std::size_t span_multiplier, AttentionCapture* capture) {
    const auto& grid = require_grid(s, "cross_window_attention");
    const auto groups = cross_window_groups(grid, span_multiplier * grid.side);
    return {transformer_layer(s.tokens, w, groups, capture), s.origin_layer, s.window_grid};
}

}  // namespace stvit
