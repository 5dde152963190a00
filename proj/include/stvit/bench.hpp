#pragma once

#include <cstdint>
#include <vector>

#include "stvit/model.hpp"

namespace stvit {

struct BenchTiming {
    std::string model;
    std::vector<double> seconds;  // one entry per timed forward
    double median = 0.0;
    std::uint64_t macs = 0;
};

double median(std::vector<double> v);

/// Random weights and input from `seed`, one untimed warm-up forward, then
/// `repeats` timed forwards. Throws ConfigError when repeats < 3.
BenchTiming bench_forward(const ModelConfig& cfg, std::size_t repeats, std::uint64_t seed);

/// Deterministic N(0, 1) image for a config.
Tensor random_image(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace stvit
