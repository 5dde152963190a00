#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "stvit/model.hpp"

namespace stvit {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

std::size_t get_size(const json& j, const char* key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError(std::string("config field '") + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

SemanticConfig parse_semantic(const json& j) {
    reject_unknown_keys(j,
                        {"stage", "stgm_position", "ws", "pooling", "allow_uneven_windows", "key_windows",
                         "span_multiplier"},
                        "semantic");
    SemanticConfig s;
    s.stage = get_size(j, "stage", 0);
    if (j.contains("stgm_position")) s.stgm_position = get_size(j, "stgm_position", 0);
    s.ws = get_size(j, "ws", 4);
    if (j.contains("pooling")) s.pooling = parse_pooling_mode(j.at("pooling").get<std::string>());
    s.allow_uneven = j.value("allow_uneven_windows", false);
    if (j.contains("key_windows")) {
        const auto& kw = j.at("key_windows");
        if (!kw.is_array() || kw.size() != 2) throw ConfigError("semantic.key_windows must be a pair");
        s.key_window1 = kw[0].get<std::size_t>();
        s.key_window2 = kw[1].get<std::size_t>();
    }
    s.span_multiplier = get_size(j, "span_multiplier", 4);
    return s;
}

DumbbellConfig parse_dumbbell(const json& j) {
    reject_unknown_keys(j, {"stage", "units", "recovery_windows", "reuse_semantic_tokens"}, "dumbbell");
    DumbbellConfig d;
    d.stage = get_size(j, "stage", 0);
    for (const auto& u : j.at("units")) {
        if (!u.is_array() || u.size() != 4) throw ConfigError("dumbbell unit must be [image, stgm, semantic, recovery]");
        d.units.push_back({u[0].get<std::size_t>(), u[1].get<std::size_t>(), u[2].get<std::size_t>(),
                           u[3].get<std::size_t>()});
    }
    if (j.contains("recovery_windows")) {
        const auto& rw = j.at("recovery_windows");
        if (!rw.is_array() || rw.size() != 2) throw ConfigError("dumbbell.recovery_windows must be a pair");
        d.recovery_window = rw[0].get<std::size_t>();
        d.recovery_semantic_window = rw[1].get<std::size_t>();
    }
    d.reuse_semantic_tokens = j.value("reuse_semantic_tokens", false);
    return d;
}

}  // namespace

std::size_t ModelConfig::depth() const noexcept {
    std::size_t d = 0;
    for (const auto& s : stages) d += s.depth;
    return d;
}

ModelConfig ModelConfig::base() const {
    ModelConfig b = *this;
    b.semantic.reset();
    b.dumbbell.reset();
    return b;
}

void ModelConfig::validate() const {
    auto fail = [this](const std::string& msg) { throw ConfigError(name + ": " + msg); };
    if (stages.empty()) fail("at least one stage is required");
    if (variant == Variant::global && stages.size() != 1) fail("global variant has exactly one stage");
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) fail("image_size must be a multiple of patch_size");
    if (in_channels == 0 || num_classes == 0 || mlp_ratio == 0) fail("in_channels, num_classes and mlp_ratio must be >= 1");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& s = stages[i];
        if (s.depth == 0 || s.channels == 0 || s.heads == 0) fail("stage " + std::to_string(i) + " has a zero field");
        if (s.channels % s.heads != 0) {
            fail("stage " + std::to_string(i) + ": heads " + std::to_string(s.heads) + " do not divide channels " +
                 std::to_string(s.channels));
        }
    }
    if (variant == Variant::local && window == 0) fail("window must be >= 1");

    if (dumbbell && !semantic) fail("a dumbbell layout needs a semantic section (ws, pooling, key windows)");
    if (semantic) {
        const auto& s = *semantic;
        if (s.stage >= stages.size()) fail("semantic.stage out of range");
        if (s.ws == 0) fail("ws must be >= 1");
        if (s.span_multiplier == 0) fail("span_multiplier must be >= 1");
        if (!dumbbell) {
            if (!s.stgm_position) fail("semantic.stgm_position is required without a dumbbell layout");
            if (*s.stgm_position + 2 > stages[s.stage].depth) {
                fail("stgm_position " + std::to_string(*s.stgm_position) + " + 2 exceeds stage depth " +
                     std::to_string(stages[s.stage].depth));
            }
        }
    }
    if (dumbbell) {
        const auto& d = *dumbbell;
        if (d.stage != semantic->stage) fail("dumbbell.stage must equal semantic.stage");
        if (d.units.empty()) fail("dumbbell needs at least one unit");
        std::size_t total = 0;
        for (const auto& u : d.units) {
            if (u.stgm_layers != 2) fail("dumbbell STGM part must have 2 layers");
            if (u.recovery_layers != 1) fail("dumbbell recovery part must have 1 layer");
            total += u.depth();
        }
        if (total != stages[d.stage].depth) {
            fail("dumbbell parts sum to " + std::to_string(total) + " but stage depth is " +
                 std::to_string(stages[d.stage].depth));
        }
        if (d.recovery_window == 0 || d.recovery_semantic_window == 0) fail("recovery windows must be >= 1");
    }
    // Geometry (window tiling, pooling partitions, recovery windows) is checked
    // while building the plan.
    build_plan(*this);
}

ModelConfig parse_model_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
    }
    try {
        reject_unknown_keys(j,
                            {"name", "variant", "image_size", "patch_size", "in_channels", "num_classes", "mlp_ratio",
                             "stages", "window", "semantic", "dumbbell"},
                            "model config");
        ModelConfig cfg;
        cfg.name = j.value("name", std::string("model"));
        const std::string variant = j.value("variant", std::string("global"));
        if (variant == "global") {
            cfg.variant = Variant::global;
        } else if (variant == "local") {
            cfg.variant = Variant::local;
        } else {
            throw ConfigError("variant must be 'global' or 'local', got '" + variant + "'");
        }
        cfg.image_size = get_size(j, "image_size", 224);
        cfg.patch_size = get_size(j, "patch_size", 16);
        cfg.in_channels = get_size(j, "in_channels", 3);
        cfg.num_classes = get_size(j, "num_classes", 1000);
        cfg.mlp_ratio = get_size(j, "mlp_ratio", 4);
        cfg.window = get_size(j, "window", 7);
        if (!j.contains("stages")) throw ConfigError("model config needs 'stages'");
        for (const auto& s : j.at("stages")) {
            reject_unknown_keys(s, {"depth", "channels", "heads"}, "stage");
            cfg.stages.push_back({get_size(s, "depth", 0), get_size(s, "channels", 0), get_size(s, "heads", 0)});
        }
        if (j.contains("semantic")) cfg.semantic = parse_semantic(j.at("semantic"));
        if (j.contains("dumbbell")) cfg.dumbbell = parse_dumbbell(j.at("dumbbell"));
        cfg.validate();
        return cfg;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed model config: ") + e.what());
    }
}

ModelConfig load_model_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_model_config(ss.str());
}

std::string model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["name"] = cfg.name;
    j["variant"] = cfg.variant == Variant::global ? "global" : "local";
    j["image_size"] = cfg.image_size;
    j["patch_size"] = cfg.patch_size;
    j["in_channels"] = cfg.in_channels;
    j["num_classes"] = cfg.num_classes;
    j["mlp_ratio"] = cfg.mlp_ratio;
    j["stages"] = json::array();
    for (const auto& s : cfg.stages) j["stages"].push_back({{"depth", s.depth}, {"channels", s.channels}, {"heads", s.heads}});
    if (cfg.variant == Variant::local) j["window"] = cfg.window;
    if (cfg.semantic) {
        const auto& s = *cfg.semantic;
        json js{{"stage", s.stage},
                {"ws", s.ws},
                {"pooling", to_string(s.pooling)},
                {"allow_uneven_windows", s.allow_uneven},
                {"key_windows", {s.key_window1, s.key_window2}},
                {"span_multiplier", s.span_multiplier}};
        if (s.stgm_position) js["stgm_position"] = *s.stgm_position;
        j["semantic"] = js;
    }
    if (cfg.dumbbell) {
        const auto& d = *cfg.dumbbell;
        json units = json::array();
        for (const auto& u : d.units) units.push_back({u.image_layers, u.stgm_layers, u.semantic_layers, u.recovery_layers});
        j["dumbbell"] = {{"stage", d.stage},
                         {"units", units},
                         {"recovery_windows", {d.recovery_window, d.recovery_semantic_window}},
                         {"reuse_semantic_tokens", d.reuse_semantic_tokens}};
    }
    return j.dump(2);
}

}  // namespace stvit
