#include "stvit/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stvit/ops.hpp"

namespace stvit {

namespace {

// Rows `rows` and columns [col, col+width) of x, as a dense matrix.
Tensor gather_block(const Tensor& x, std::span<const std::size_t> rows, std::size_t col, std::size_t width) {
    Tensor out({rows.size(), width});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = x.row(rows[i]).subspan(col, width);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

}  // namespace

void AttentionWeights::validate(const std::string& name) const {
    q.validate(name + ".q");
    k.validate(name + ".k");
    v.validate(name + ".v");
    o.validate(name + ".o");
    const std::size_t c = q.in_features();
    if (heads == 0 || c % heads != 0) {
        throw ConfigError(name + ": head count " + std::to_string(heads) + " does not divide channels " +
                          std::to_string(c));
    }
    for (const auto* lw : {&q, &k, &v, &o}) {
        if (lw->in_features() != c || lw->out_features() != c) {
            throw DimensionError(name + ": projection shape " + shape_to_string(lw->weight.shape()) +
                                 " inconsistent with channels " + std::to_string(c));
        }
    }
}

void TransformerLayerWeights::validate(const std::string& name) const {
    attn.validate(name + ".attn");
    const std::size_t c = attn.channels();
    for (const auto* n : {&norm1, &norm2}) {
        if (n->gamma.numel() != c || n->beta.numel() != c) throw DimensionError(name + ": norm params must have length C");
    }
    fc1.validate(name + ".fc1");
    fc2.validate(name + ".fc2");
    if (fc1.in_features() != c || fc2.out_features() != c || fc1.out_features() != fc2.in_features()) {
        throw DimensionError(name + ": FFN shapes " + shape_to_string(fc1.weight.shape()) + ", " +
                             shape_to_string(fc2.weight.shape()) + " inconsistent with channels " + std::to_string(c));
    }
}

Tensor multi_head_attention(const Tensor& queries, const Tensor& keys_values, const AttentionWeights& w,
                            std::span<const AttentionGroup> groups, const Tensor* query_offset,
                            AttentionCapture* capture) {
    const std::size_t c = w.channels();
    if (w.heads == 0 || c % w.heads != 0) {
        throw ConfigError("attention: head count " + std::to_string(w.heads) + " does not divide channels " +
                          std::to_string(c));
    }
    if (queries.rank() != 2 || keys_values.rank() != 2 || queries.dim(1) != c || keys_values.dim(1) != c) {
        throw DimensionError("attention: queries " + shape_to_string(queries.shape()) + " / keys " +
                             shape_to_string(keys_values.shape()) + " do not have " + std::to_string(c) + " channels");
    }

    const Tensor q = query_offset ? linear(add(queries, *query_offset), w.q) : linear(queries, w.q);
    const Tensor k = linear(keys_values, w.k);
    const Tensor v = linear(keys_values, w.v);

    std::vector<AttentionGroup> whole;
    if (groups.empty()) {
        whole.push_back({iota_indices(queries.dim(0)), iota_indices(keys_values.dim(0))});
        groups = whole;
    }

    const std::size_t dh = c / w.heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor mixed({queries.dim(0), c});
    if (capture) capture->clear();

    for (const auto& g : groups) {
        Tensor probs_capture;
        if (capture) probs_capture = Tensor({w.heads, g.queries.size(), g.keys.size()});
        for (std::size_t h = 0; h < w.heads; ++h) {
            const Tensor qh = gather_block(q, g.queries, h * dh, dh);
            const Tensor kh = gather_block(k, g.keys, h * dh, dh);
            const Tensor vh = gather_block(v, g.keys, h * dh, dh);
            const Tensor probs = softmax_rows(scale(matmul_transposed(qh, kh), scale_factor));
            const Tensor out = matmul(probs, vh);
            for (std::size_t i = 0; i < g.queries.size(); ++i) {
                const auto src = out.row(i);
                std::copy(src.begin(), src.end(), mixed.row(g.queries[i]).begin() + static_cast<std::ptrdiff_t>(h * dh));
            }
            if (capture) {
                std::copy(probs.data().begin(), probs.data().end(),
                          probs_capture.data().begin() + static_cast<std::ptrdiff_t>(h * probs.numel()));
            }
        }
        if (capture) capture->push_back(std::move(probs_capture));
    }
    return linear(mixed, w.o);
}

Tensor feed_forward(const Tensor& x, const TransformerLayerWeights& w) {
    return linear(gelu(linear(x, w.fc1)), w.fc2);
}

Tensor transformer_layer(const Tensor& x, const TransformerLayerWeights& w, std::span<const AttentionGroup> groups,
                         AttentionCapture* capture) {
    const Tensor normed = layer_norm(x, w.norm1, kLayerNormEps);
    Tensor h = add(x, multi_head_attention(normed, normed, w.attn, groups, nullptr, capture));
    add_inplace(h, feed_forward(layer_norm(h, w.norm2, kLayerNormEps), w));
    return h;
}

Tensor cross_attention_layer(const Tensor& queries, const Tensor& keys_values, const TransformerLayerWeights& w,
                             std::span<const AttentionGroup> groups, const Tensor* query_offset,
                             AttentionCapture* capture) {
    const Tensor qn = layer_norm(queries, w.norm1, kLayerNormEps);
    const Tensor kvn = layer_norm(keys_values, w.norm1, kLayerNormEps);
    Tensor h = add(queries, multi_head_attention(qn, kvn, w.attn, groups, query_offset, capture));
    add_inplace(h, feed_forward(layer_norm(h, w.norm2, kLayerNormEps), w));
    return h;
}

LinearWeights random_linear(std::size_t in, std::size_t out, bool bias, Rng& rng) {
    LinearWeights lw{rng.normal_tensor({in, out}, kInitStd), std::nullopt};
    if (bias) lw.bias = Tensor::zeros({out});
    return lw;
}

LayerNormParams identity_norm(std::size_t channels) {
    return {Tensor::full({channels}, 1.0), Tensor::zeros({channels})};
}

TransformerLayerWeights random_transformer_layer(std::size_t channels, std::size_t heads, std::size_t mlp_ratio, Rng& rng) {
    TransformerLayerWeights w;
    w.norm1 = identity_norm(channels);
    w.attn.q = random_linear(channels, channels, true, rng);
    w.attn.k = random_linear(channels, channels, true, rng);
    w.attn.v = random_linear(channels, channels, true, rng);
    w.attn.o = random_linear(channels, channels, true, rng);
    w.attn.heads = heads;
    w.norm2 = identity_norm(channels);
    w.fc1 = random_linear(channels, channels * mlp_ratio, true, rng);
    w.fc2 = random_linear(channels * mlp_ratio, channels, true, rng);
    return w;
}

void visit_tensors(LinearWeights& w, const std::string& prefix, const TensorVisitor& f) {
    f(prefix + ".weight", w.weight);
    if (w.bias) f(prefix + ".bias", *w.bias);
}

void visit_tensors(LayerNormParams& w, const std::string& prefix, const TensorVisitor& f) {
    f(prefix + ".gamma", w.gamma);
    f(prefix + ".beta", w.beta);
}

void visit_tensors(TransformerLayerWeights& w, const std::string& prefix, const TensorVisitor& f) {
    visit_tensors(w.norm1, prefix + ".norm1", f);
    visit_tensors(w.attn.q, prefix + ".attn.q", f);
    visit_tensors(w.attn.k, prefix + ".attn.k", f);
    visit_tensors(w.attn.v, prefix + ".attn.v", f);
    visit_tensors(w.attn.o, prefix + ".attn.o", f);
    visit_tensors(w.norm2, prefix + ".norm2", f);
    visit_tensors(w.fc1, prefix + ".fc1", f);
    visit_tensors(w.fc2, prefix + ".fc2", f);
}

}  // namespace stvit
