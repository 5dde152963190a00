#include "stvit/presets.hpp"

#include <functional>
#include <map>
#include <sstream>

#include "stvit/complexity.hpp"

namespace stvit {

namespace {

ModelConfig deit(const std::string& name, std::size_t channels, std::size_t heads) {
    ModelConfig c;
    c.name = name;
    c.variant = Variant::global;
    c.stages = {{12, channels, heads}};
    return c;
}

ModelConfig deit_semantic(ModelConfig c, std::size_t tokens) {
    std::size_t ws = 1;
    while (ws * ws < tokens) ++ws;
    SemanticConfig s;
    s.stage = 0;
    s.stgm_position = 4;
    s.ws = ws;
    s.pooling = PoolingMode::adaptive;
    c.semantic = s;
    c.name += "-" + std::to_string(tokens);
    return c;
}

ModelConfig swin(const std::string& name, std::size_t channels, std::vector<std::size_t> depths,
                 std::vector<std::size_t> heads) {
    ModelConfig c;
    c.name = name;
    c.variant = Variant::local;
    c.patch_size = 4;
    c.window = 7;
    for (std::size_t i = 0; i < depths.size(); ++i) c.stages.push_back({depths[i], channels << i, heads[i]});
    return c;
}

SemanticConfig swin_semantic(std::size_t ws) {
    SemanticConfig s;
    s.stage = 2;
    s.ws = ws;
    s.pooling = PoolingMode::intra_inter;
    s.allow_uneven = true;
    s.key_window1 = 10;
    s.key_window2 = 14;
    s.span_multiplier = 4;
    return s;
}

ModelConfig swin_semantic_preset(ModelConfig c, std::size_t per_window, std::size_t position) {
    std::size_t ws = 1;
    while (ws * ws < per_window) ++ws;
    c.semantic = swin_semantic(ws);
    c.semantic->stgm_position = position;
    c.name += "-" + std::to_string(per_window);
    return c;
}

ModelConfig dumbbell(ModelConfig c, const std::string& name) {
    c.name = name;
    c.semantic = swin_semantic(3);
    DumbbellConfig d;
    d.stage = 2;
    d.units = {{1, 2, 2, 1}, {1, 2, 2, 1}, {1, 2, 2, 1}};
    d.recovery_window = 7;
    d.recovery_semantic_window = 3;
    c.dumbbell = d;
    return c;
}

ModelConfig tiny() {
    ModelConfig c;
    c.name = "stvit-tiny";
    c.variant = Variant::global;
    c.image_size = 32;
    c.patch_size = 4;
    c.num_classes = 10;
    c.stages = {{6, 32, 2}};
    SemanticConfig s;
    s.stgm_position = 2;
    s.ws = 2;
    c.semantic = s;
    return c;
}

ModelConfig tiny_dumbbell() {
    ModelConfig c;
    c.name = "stvit-r-tiny";
    c.variant = Variant::global;
    c.image_size = 32;
    c.patch_size = 4;
    c.num_classes = 10;
    c.stages = {{18, 32, 2}};
    SemanticConfig s;
    s.ws = 2;
    s.pooling = PoolingMode::intra_inter;
    c.semantic = s;
    DumbbellConfig d;
    d.units = {{1, 2, 2, 1}, {1, 2, 2, 1}, {1, 2, 2, 1}};
    d.recovery_window = 4;
    d.recovery_semantic_window = 1;
    c.dumbbell = d;
    return c;
}

ModelConfig tiny_local() {
    ModelConfig c;
    c.name = "stvit-swin-tiny";
    c.variant = Variant::local;
    c.image_size = 64;
    c.patch_size = 4;
    c.window = 4;
    c.num_classes = 10;
    c.stages = {{2, 16, 1}, {4, 32, 2}, {2, 64, 4}};
    SemanticConfig s;
    s.stage = 1;
    s.stgm_position = 0;
    s.ws = 2;
    s.pooling = PoolingMode::intra_inter;
    s.key_window1 = 6;
    s.key_window2 = 8;
    s.span_multiplier = 2;
    c.semantic = s;
    return c;
}

const std::map<std::string, std::function<ModelConfig()>>& registry() {
    static const auto table = [] {
        std::map<std::string, std::function<ModelConfig()>> m;
        const std::vector<std::tuple<std::string, std::size_t, std::size_t>> deits = {
            {"deit-t", 192, 3}, {"deit-s", 384, 6}, {"deit-b", 768, 12}};
        for (const auto& [name, ch, heads] : deits) {
            m[name] = [=] { return deit(name, ch, heads); };
            for (std::size_t tokens : {16, 36, 64, 100}) {
                m[name + "-" + std::to_string(tokens)] = [=] { return deit_semantic(deit(name, ch, heads), tokens); };
            }
        }
        const auto swin_t = [] { return swin("swin-t", 96, {2, 2, 6, 2}, {3, 6, 12, 24}); };
        const auto swin_s = [] { return swin("swin-s", 96, {2, 2, 18, 2}, {3, 6, 12, 24}); };
        const auto swin_b = [] { return swin("swin-b", 128, {2, 2, 18, 2}, {4, 8, 16, 32}); };
        const std::vector<std::tuple<std::string, std::function<ModelConfig()>, std::size_t>> swins = {
            {"swin-t", swin_t, 2}, {"swin-s", swin_s, 10}, {"swin-b", swin_b, 10}};
        for (const auto& [name, make, position] : swins) {
            m[name] = make;
            for (std::size_t per_window : {4, 9, 16}) {
                m[name + "-" + std::to_string(per_window)] = [=] {
                    return swin_semantic_preset(make(), per_window, position);
                };
            }
        }
        m["stvit-r-swin-s"] = [=] { return dumbbell(swin_s(), "stvit-r-swin-s"); };
        m["stvit-r-swin-b"] = [=] { return dumbbell(swin_b(), "stvit-r-swin-b"); };
        m["stvit-tiny"] = tiny;
        m["stvit-r-tiny"] = tiny_dumbbell;
        m["stvit-swin-tiny"] = tiny_local;
        return m;
    }();
    return table;
}

}  // namespace

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& [name, _] : registry()) names.push_back(name);
    return names;
}

ModelConfig preset(const std::string& name) {
    const auto& r = registry();
    const auto it = r.find(name);
    if (it == r.end()) {
        std::ostringstream os;
        os << "unknown preset '" << name << "'; known presets:";
        for (const auto& [n, _] : r) os << ' ' << n;
        throw ConfigError(os.str());
    }
    ModelConfig cfg = it->second();
    cfg.validate();
    return cfg;
}

std::vector<std::string> table_presets() {
    std::vector<std::string> out;
    for (const char* family : {"deit-t", "deit-s", "deit-b"}) {
        out.emplace_back(family);
        for (const char* t : {"-16", "-36", "-64", "-100"}) out.push_back(std::string(family) + t);
    }
    for (const char* family : {"swin-t", "swin-s", "swin-b"}) {
        out.emplace_back(family);
        for (const char* t : {"-4", "-9", "-16"}) out.push_back(std::string(family) + t);
    }
    out.emplace_back("stvit-r-swin-s");
    out.emplace_back("stvit-r-swin-b");
    return out;
}

std::string flops_table_csv() {
    std::ostringstream os;
    os << flops_csv_header() << '\n';
    for (const auto& name : table_presets()) os << flops_csv_row(flops_counted(preset(name))) << '\n';
    return os.str();
}

}  // namespace stvit
