#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stvit/rng.hpp"
#include "stvit/tensor.hpp"

namespace stvit {

struct AttentionWeights {
    LinearWeights q, k, v, o;
    std::size_t heads = 1;

    std::size_t channels() const { return q.in_features(); }
    void validate(const std::string& name) const;
};

/// Pre-norm transformer block: norm1 -> MHA -> residual, norm2 -> FFN -> residual.
struct TransformerLayerWeights {
    LayerNormParams norm1;
    AttentionWeights attn;
    LayerNormParams norm2;
    LinearWeights fc1, fc2;

    std::size_t channels() const { return attn.channels(); }
    void validate(const std::string& name) const;
};

/// One block of a block-sparse attention: the listed query rows attend only to
/// the listed key rows.
struct AttentionGroup {
    std::vector<std::size_t> queries;
    std::vector<std::size_t> keys;
};

/// Attention probabilities captured per group, each shaped [heads, queries, keys].
using AttentionCapture = std::vector<Tensor>;

/// Multi-head attention with queries from `queries` and keys/values from
/// `keys_values`. Projections are applied once over all rows; the softmax
/// attention is evaluated per group (one group covering everything when
/// `groups` is empty). When `query_offset` is given it is added to the query
/// tokens before the query projection, the fused form of A_s + A_g.
Tensor multi_head_attention(const Tensor& queries, const Tensor& keys_values, const AttentionWeights& w,
                            std::span<const AttentionGroup> groups = {}, const Tensor* query_offset = nullptr,
                            AttentionCapture* capture = nullptr);

Tensor feed_forward(const Tensor& x, const TransformerLayerWeights& w);

/// Self-attention block over `x` (attention restricted to `groups` if given).
Tensor transformer_layer(const Tensor& x, const TransformerLayerWeights& w, std::span<const AttentionGroup> groups = {},
                         AttentionCapture* capture = nullptr);

/// Cross-attention block: `queries` attend to `keys_values`, residual onto the
/// queries, then FFN. Keys/values are normalized with the same norm1 params.
Tensor cross_attention_layer(const Tensor& queries, const Tensor& keys_values, const TransformerLayerWeights& w,
                             std::span<const AttentionGroup> groups = {}, const Tensor* query_offset = nullptr,
                             AttentionCapture* capture = nullptr);

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kInitStd = 0.02;

TransformerLayerWeights random_transformer_layer(std::size_t channels, std::size_t heads, std::size_t mlp_ratio, Rng& rng);
LinearWeights random_linear(std::size_t in, std::size_t out, bool bias, Rng& rng);
LayerNormParams identity_norm(std::size_t channels);

/// Enumerates every tensor in a weight set under a dotted name.
using TensorVisitor = std::function<void(const std::string&, Tensor&)>;
void visit_tensors(LinearWeights& w, const std::string& prefix, const TensorVisitor& f);
void visit_tensors(LayerNormParams& w, const std::string& prefix, const TensorVisitor& f);
void visit_tensors(TransformerLayerWeights& w, const std::string& prefix, const TensorVisitor& f);

}  // namespace stvit
