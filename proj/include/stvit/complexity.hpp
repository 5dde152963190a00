#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stvit/model.hpp"

namespace stvit {

/// MACs of one traced operation. Names and indices mirror ForwardTrace records.
struct LayerMacs {
    std::string name;
    std::string kind;
    std::size_t index = 0;
    std::size_t stage = 0;
    std::uint64_t macs = 0;
};

struct FlopsReport {
    std::string model;
    std::size_t image_tokens = 0;
    std::size_t semantic_tokens = 0;  // 0 for models without semantic tokens
    std::vector<LayerMacs> layers;
    std::uint64_t counted = 0;
    std::uint64_t base_counted = 0;     // same model without semantic tokens
    double reduction_vs_base = 0.0;     // 1 - counted / base_counted
    std::optional<double> closed_form;  // transformer layers only, when a formula covers the layout
    std::uint64_t params_estimate = 0;
    std::vector<std::string> uncounted_ops;
};

/// depth * (12 N C^2 + 2 N^2 C).
double flops_global_base(double n, double c, double depth);
/// 52 N C^2 + 12 M^2 C + 76 M C^2 + 8 N^2 C + 4 M N C: twelve layers, STGM at layers 5-6.
double flops_stvit_global(double n, double m, double c);

/// Per-layer forms for windowed layouts; W is the number of tokens per window side.
double flops_attention_global(double n, double c);                        // 4 N C^2 + 2 N^2 C
double flops_attention_window(double n, double c, double w);              // 4 N C^2 + 2 W^2 N C
double flops_stgm_local(double n, double m, double c, double w);          // 2 (N/W) M C^2 + 2 N C^2 + 2 (N/W) M^2 C
double flops_ffn(double n, double c, double mlp_ratio = 4.0);             // 2 r N C^2

/// Walks the layer plan and counts the matmul MACs the forward pass executes.
FlopsReport flops_counted(const ModelConfig& cfg);

std::string flops_report_to_json(const FlopsReport& r, int indent = 2);
std::string flops_csv_header();
std::string flops_csv_row(const FlopsReport& r);

}  // namespace stvit
