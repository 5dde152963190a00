#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "stvit/windowing.hpp"

namespace stvit {

enum class Variant { global, local };

struct StageConfig {
    std::size_t depth = 12;
    std::size_t channels = 384;
    std::size_t heads = 6;
};

/// Where and how semantic tokens are generated.
struct SemanticConfig {
    std::size_t stage = 0;
    std::optional<std::size_t> stgm_position;  // 0-based first STGM layer; unused with a dumbbell
    std::size_t ws = 4;
    PoolingMode pooling = PoolingMode::adaptive;
    bool allow_uneven = false;
    std::size_t key_window1 = 10;
    std::size_t key_window2 = 14;
    std::size_t span_multiplier = 4;
};

/// (image layers, STGM layers, semantic layers, recovery layers). STGM is
/// always two layers and recovery one.
struct DumbbellUnit {
    std::size_t image_layers = 1;
    std::size_t stgm_layers = 2;
    std::size_t semantic_layers = 2;
    std::size_t recovery_layers = 1;

    std::size_t depth() const noexcept { return image_layers + stgm_layers + semantic_layers + recovery_layers; }
};

struct DumbbellConfig {
    std::size_t stage = 0;
    std::vector<DumbbellUnit> units;
    std::size_t recovery_window = 7;           // w^r
    std::size_t recovery_semantic_window = 3;  // w_s^r
    bool reuse_semantic_tokens = false;
};

struct ModelConfig {
    std::string name = "model";
    Variant variant = Variant::global;
    std::size_t image_size = 224;
    std::size_t patch_size = 16;
    std::size_t in_channels = 3;
    std::size_t num_classes = 1000;
    std::size_t mlp_ratio = 4;
    std::vector<StageConfig> stages;
    std::size_t window = 7;  // local variant, image-token attention window
    std::optional<SemanticConfig> semantic;
    std::optional<DumbbellConfig> dumbbell;

    std::size_t grid() const noexcept { return image_size / patch_size; }
    std::size_t depth() const noexcept;
    /// Throws ConfigError describing the first violated constraint.
    void validate() const;
    /// The same model without semantic tokens.
    ModelConfig base() const;
};

ModelConfig parse_model_config(const std::string& json_text);
ModelConfig load_model_config(const std::filesystem::path& path);
std::string model_config_to_json(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Layer plan shared by the forward pass and the FLOPs engine.

enum class BlockKind { image, stgm, semantic, recovery };
enum class AttentionScope { global, window, semantic_local, semantic_cross };
enum class Transition { none, patch_merge, channel_double };

std::string to_string(BlockKind k);
std::string to_string(AttentionScope s);
std::string to_string(Transition t);

struct BlockPlan {
    BlockKind kind = BlockKind::image;
    AttentionScope scope = AttentionScope::global;
    std::size_t first_layer = 0;  // 1-based model-wide index of the (first) transformer layer
    bool reuse_centers = false;   // STGM initialised from the previous unit's semantic tokens
};

struct StagePlan {
    Transition transition = Transition::none;
    std::size_t in_channels = 0;
    std::size_t channels = 0;
    std::size_t heads = 0;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::size_t window = 0;        // effective image-token window (local variant)
    bool semantic_input = false;  // tokens entering the stage are semantic
    std::vector<BlockPlan> blocks;
};

struct ModelPlan {
    std::vector<StagePlan> stages;
    std::size_t image_tokens = 0;
};

ModelPlan build_plan(const ModelConfig& cfg);

/// Window arrangement of semantic tokens produced in a stage.
WindowGrid semantic_grid(const ModelConfig& cfg, const StagePlan& stage);

// ---------------------------------------------------------------------------
// Weights

struct TransitionWeights {
    std::optional<LayerNormParams> norm;
    LinearWeights proj;
};

using BlockWeights = std::variant<TransformerLayerWeights, StgmWeights>;

struct StageWeights {
    std::optional<TransitionWeights> transition;
    std::vector<BlockWeights> blocks;
};

struct ModelWeights {
    LinearWeights patch_embed;
    std::optional<Tensor> pos_embed;
    std::optional<LayerNormParams> patch_norm;
    std::vector<StageWeights> stages;
    LayerNormParams final_norm;
    LinearWeights head;
};

/// Weight set with the shapes the config demands, drawn from N(0, 0.02^2)
/// (biases zero, norms identity).
ModelWeights random_weights(const ModelConfig& cfg, std::uint64_t seed);
void visit_tensors(ModelWeights& w, const TensorVisitor& f);
/// Throws DimensionError listing every tensor whose shape disagrees with the config.
void validate_weights(const ModelConfig& cfg, const ModelWeights& w);

void save_weights(const std::filesystem::path& dir, const ModelConfig& cfg, ModelWeights& w,
                  StorageType storage = StorageType::f64);
ModelWeights load_weights(const std::filesystem::path& dir, const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Forward pass

struct AttentionShape {
    std::size_t groups = 0;
    std::size_t heads = 0;
    std::size_t queries = 0;  // per group (first group)
    std::size_t keys = 0;     // per group (first group)
};

struct TraceRecord {
    std::string name;  // e.g. "patch_embed", "layer", "head"
    std::string kind;  // block kind / op kind
    std::string scope;
    std::size_t index = 0;  // 1-based transformer layer index, 0 for non-layer ops
    std::size_t stage = 0;
    std::size_t tokens_in = 0;
    std::size_t tokens_out = 0;
    std::size_t channels = 0;
    std::optional<AttentionShape> attention;
    std::uint64_t macs = 0;
    double seconds = 0.0;
    AttentionCapture attention_maps;
};

struct ForwardTrace {
    std::string model;
    std::size_t image_tokens = 0;
    std::vector<TraceRecord> records;

    /// tokens_out of each transformer layer, in order.
    std::vector<std::size_t> layer_token_counts() const;
    std::uint64_t total_macs() const;
};

struct ForwardOptions {
    bool export_attention = false;
};

struct ForwardResult {
    Tensor logits;  // [classes]
    ForwardTrace trace;
};

/// Non-overlapping patches flattened (row, col, channel) and projected.
Tensor patch_embed(const Tensor& image, std::size_t patch, const LinearWeights& proj);

struct RecoveryWindows {
    std::size_t image_window = 7;     // w^r
    std::size_t semantic_window = 3;  // w_s^r
};

/// Image tokens of each w^r window attend to the semantic tokens of the
/// matching w_s^r window; residual and FFN on the image tokens.
Tensor recovery_layer(const Tensor& image_tokens, std::size_t grid_h, std::size_t grid_w, const SemanticTokenSet& s,
                      const RecoveryWindows& windows, const TransformerLayerWeights& w,
                      AttentionCapture* capture = nullptr);
std::vector<AttentionGroup> recovery_groups(std::size_t grid_h, std::size_t grid_w, const WindowGrid& semantic,
                                            const RecoveryWindows& windows);

ForwardResult forward(const ModelConfig& cfg, const ModelWeights& w, const Tensor& image,
                      const ForwardOptions& opts = {});

std::string trace_to_json(const ForwardTrace& trace, bool include_timings, int indent = 2);

}  // namespace stvit
