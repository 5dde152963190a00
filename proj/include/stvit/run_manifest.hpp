#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stvit/model.hpp"

namespace stvit {

/// Provenance record written next to every report a command emits.
struct RunManifest {
    std::string command;
    std::string config;  // path or preset name
    std::optional<std::uint64_t> seed;
    std::optional<std::string> weights_hash;
    unsigned threads = 1;
    std::vector<std::pair<std::string, std::string>> outputs;  // role -> path
    std::vector<std::pair<std::string, double>> timings;       // label -> seconds
};

std::string sha1_hex(std::span<const std::uint8_t> bytes);
/// SHA-1 of "blob <size>\0<bytes>", as git computes object ids.
std::string git_blob_hash(std::span<const std::uint8_t> bytes);
/// Git-style hash over every tensor (sorted by name) in f64 encoding.
std::string weights_hash(ModelWeights& w);

std::string manifest_to_json(const RunManifest& m, int indent = 2);
void write_manifest(const std::filesystem::path& path, const RunManifest& m);

}  // namespace stvit
