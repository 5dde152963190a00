#include "stvit/run_manifest.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>
#include <openssl/sha.h>

namespace stvit {

std::string sha1_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[SHA_DIGEST_LENGTH];
    SHA1(bytes.data(), bytes.size(), digest);
    std::ostringstream os;
    for (unsigned char b : digest) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(b);
    return os.str();
}

std::string git_blob_hash(std::span<const std::uint8_t> bytes) {
    const std::string header = "blob " + std::to_string(bytes.size());
    std::vector<std::uint8_t> buf(header.begin(), header.end());
    buf.push_back(0);
    buf.insert(buf.end(), bytes.begin(), bytes.end());
    return sha1_hex(buf);
}

std::string weights_hash(ModelWeights& w) {
    std::map<std::string, std::vector<std::uint8_t>> encoded;
    visit_tensors(w, [&](const std::string& name, Tensor& t) { encoded[name] = encode_tensor(t, StorageType::f64); });
    std::vector<std::uint8_t> all;
    for (const auto& [name, bytes] : encoded) {
        all.insert(all.end(), name.begin(), name.end());
        all.push_back(0);
        all.insert(all.end(), bytes.begin(), bytes.end());
    }
    return git_blob_hash(all);
}

std::string manifest_to_json(const RunManifest& m, int indent) {
    using nlohmann::json;
    json outputs = json::object();
    for (const auto& [role, path] : m.outputs) outputs[role] = path;
    json timings = json::object();
    for (const auto& [label, s] : m.timings) timings[label] = s;
    json j{{"command", m.command},
           {"config", m.config},
           {"seed", m.seed ? json(*m.seed) : json(nullptr)},
           {"weights_hash", m.weights_hash ? json(*m.weights_hash) : json(nullptr)},
           {"threads", m.threads},
           {"outputs", outputs},
           {"timings", timings}};
    return j.dump(indent);
}

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << manifest_to_json(m) << "\n";
}

}  // namespace stvit
