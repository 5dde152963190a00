#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "stvit/model.hpp"

namespace stvit {

using nlohmann::json;

ModelWeights random_weights(const ModelConfig& cfg, std::uint64_t seed) {
    const ModelPlan plan = build_plan(cfg);
    Rng rng(seed);
    ModelWeights w;
    const std::size_t c0 = cfg.stages.front().channels;
    w.patch_embed = random_linear(cfg.patch_size * cfg.patch_size * cfg.in_channels, c0, true, rng);
    if (cfg.variant == Variant::global) {
        w.pos_embed = rng.normal_tensor({plan.image_tokens, c0}, kInitStd);
    } else {
        w.patch_norm = identity_norm(c0);
    }
    for (const auto& sp : plan.stages) {
        StageWeights sw;
        if (sp.transition == Transition::patch_merge) {
            sw.transition = TransitionWeights{identity_norm(4 * sp.in_channels),
                                              random_linear(4 * sp.in_channels, sp.channels, false, rng)};
        } else if (sp.transition == Transition::channel_double) {
            sw.transition = TransitionWeights{std::nullopt, random_linear(sp.in_channels, sp.channels, false, rng)};
        }
        for (const auto& bp : sp.blocks) {
            if (bp.kind != BlockKind::stgm) {
                sw.blocks.emplace_back(random_transformer_layer(sp.channels, sp.heads, cfg.mlp_ratio, rng));
                continue;
            }
            const auto& s = *cfg.semantic;
            std::optional<std::size_t> pool_tokens;
            if (s.pooling == PoolingMode::intra_inter) {
                pool_tokens = cfg.variant == Variant::global ? max_cell_tokens(sp.grid_h, sp.grid_w, s.ws, s.allow_uneven)
                                                             : max_cell_tokens(sp.window, sp.window, s.ws, s.allow_uneven);
            }
            sw.blocks.emplace_back(random_stgm_weights(sp.channels, sp.heads, cfg.mlp_ratio,
                                                       semantic_grid(cfg, sp).tokens(), pool_tokens, rng));
        }
        w.stages.push_back(std::move(sw));
    }
    const std::size_t cl = cfg.stages.back().channels;
    w.final_norm = identity_norm(cl);
    w.head = random_linear(cl, cfg.num_classes, true, rng);
    return w;
}

void visit_tensors(ModelWeights& w, const TensorVisitor& f) {
    visit_tensors(w.patch_embed, "patch_embed", f);
    if (w.pos_embed) f("pos_embed", *w.pos_embed);
    if (w.patch_norm) visit_tensors(*w.patch_norm, "patch_norm", f);
    for (std::size_t s = 0; s < w.stages.size(); ++s) {
        const std::string sp = "stages." + std::to_string(s);
        auto& st = w.stages[s];
        if (st.transition) {
            if (st.transition->norm) visit_tensors(*st.transition->norm, sp + ".transition.norm", f);
            visit_tensors(st.transition->proj, sp + ".transition.proj", f);
        }
        for (std::size_t b = 0; b < st.blocks.size(); ++b) {
            const std::string bp = sp + ".blocks." + std::to_string(b);
            std::visit([&](auto& blk) { visit_tensors(blk, bp, f); }, st.blocks[b]);
        }
    }
    visit_tensors(w.final_norm, "final_norm", f);
    visit_tensors(w.head, "head", f);
}

namespace {

std::map<std::string, Shape> shapes_of(ModelWeights& w) {
    std::map<std::string, Shape> out;
    visit_tensors(w, [&](const std::string& name, Tensor& t) { out[name] = t.shape(); });
    return out;
}

}  // namespace

void validate_weights(const ModelConfig& cfg, const ModelWeights& w) {
    ModelWeights reference = random_weights(cfg, 0);
    const auto expected = shapes_of(reference);
    const auto actual = shapes_of(const_cast<ModelWeights&>(w));
    std::ostringstream problems;
    std::size_t count = 0;
    for (const auto& [name, shape] : expected) {
        const auto it = actual.find(name);
        if (it == actual.end()) {
            problems << "\n  missing " << name << " " << shape_to_string(shape);
            ++count;
        } else if (it->second != shape) {
            problems << "\n  " << name << ": got " << shape_to_string(it->second) << ", expected " << shape_to_string(shape);
            ++count;
        }
    }
    for (const auto& [name, shape] : actual) {
        if (!expected.contains(name)) {
            problems << "\n  unexpected " << name << " " << shape_to_string(shape);
            ++count;
        }
    }
    if (count > 0) {
        throw DimensionError("weights do not match config '" + cfg.name + "' (" + std::to_string(count) +
                             " problems):" + problems.str());
    }
}

void save_weights(const std::filesystem::path& dir, const ModelConfig& cfg, ModelWeights& w, StorageType storage) {
    validate_weights(cfg, w);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create weights directory " + dir.string() + ": " + ec.message());
    json tensors = json::object();
    visit_tensors(w, [&](const std::string& name, Tensor& t) {
        const std::string file = name + ".stvt";
        write_tensor(dir / file, t, storage);
        tensors[name] = {{"file", file}, {"shape", t.shape()}};
    });
    json stages = json::array();
    for (const auto& s : cfg.stages) stages.push_back({{"channels", s.channels}, {"heads", s.heads}, {"depth", s.depth}});
    json semantic = nullptr;
    if (cfg.semantic) semantic = {{"pooling", to_string(cfg.semantic->pooling)}, {"ws", cfg.semantic->ws}};
    json manifest{{"format", "stvit-weights"},
                  {"version", 1},
                  {"model", cfg.name},
                  {"dtype", storage == StorageType::f64 ? "f64" : "f32"},
                  {"stages", std::move(stages)},
                  {"semantic", std::move(semantic)},
                  {"tensors", std::move(tensors)}};
    const auto path = dir / "manifest.json";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << manifest.dump(2) << "\n";
}

ModelWeights load_weights(const std::filesystem::path& dir, const ModelConfig& cfg) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw IoError("cannot open weights manifest " + path.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError("malformed weights manifest " + path.string() + ": " + e.what());
    }
    if (manifest.value("format", std::string()) != "stvit-weights" || !manifest.contains("tensors")) {
        throw IoError(path.string() + " is not an stvit weights manifest");
    }
    const json& tensors = manifest.at("tensors");

    ModelWeights w = random_weights(cfg, 0);
    std::ostringstream problems;
    std::size_t count = 0;
    std::size_t used = 0;
    visit_tensors(w, [&](const std::string& name, Tensor& t) {
        if (!tensors.contains(name)) {
            problems << "\n  missing " << name << " " << shape_to_string(t.shape());
            ++count;
            return;
        }
        ++used;
        Tensor loaded = read_tensor(dir / tensors.at(name).at("file").get<std::string>());
        if (loaded.shape() != t.shape()) {
            problems << "\n  " << name << ": got " << shape_to_string(loaded.shape()) << ", expected "
                     << shape_to_string(t.shape());
            ++count;
            return;
        }
        t = std::move(loaded);
    });
    if (used != tensors.size()) {
        problems << "\n  manifest lists " << tensors.size() - used << " tensors the config does not use";
        ++count;
    }
    if (count > 0) {
        throw DimensionError("weights in " + dir.string() + " do not match config '" + cfg.name + "' (" +
                             std::to_string(count) + " problems):" + problems.str());
    }
    return w;
}

}  // namespace stvit
