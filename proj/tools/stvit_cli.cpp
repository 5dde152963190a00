// stvit command-line entry point: forward passes, FLOPs reports, benchmarks,
// cluster-recovery experiments and weight initialization.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "stvit/bench.hpp"
#include "stvit/complexity.hpp"
#include "stvit/presets.hpp"
#include "stvit/recovery_lab.hpp"
#include "stvit/run_manifest.hpp"

namespace fs = std::filesystem;
using namespace stvit;

namespace {

constexpr int kExitError = 2;

struct ModelSource {
    std::string config;
    std::string preset;

    void add_to(CLI::App& cmd, const std::string& suffix = "") {
        cmd.add_option("--config" + suffix, config, "Model config JSON file");
        cmd.add_option("--preset" + suffix, preset, "Built-in model preset (see `stvit presets`)");
    }

    ModelConfig load() const {
        if (!config.empty() && !preset.empty()) throw ConfigError("give either --config or --preset, not both");
        if (!config.empty()) return load_model_config(config);
        if (!preset.empty()) return stvit::preset(preset);
        throw ConfigError("a model is required: pass --config PATH or --preset NAME");
    }

    std::string label() const { return config.empty() ? "preset:" + preset : config; }
};

unsigned resolve_threads(std::optional<unsigned> flag) {
    if (flag) {
        if (*flag == 0) throw ConfigError("--threads must be >= 1");
        return *flag;
    }
    if (const char* env = std::getenv("STVIT_THREADS"); env && *env) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (*end != '\0' || v == 0) throw ConfigError(std::string("STVIT_THREADS must be a positive integer, got '") + env + "'");
        return static_cast<unsigned>(v);
    }
    return 1;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
}

fs::path prepare_out(const std::string& out) {
    if (out.empty()) throw ConfigError("--out DIR is required");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory " + out + ": " + ec.message());
    return out;
}

std::string error_type(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
    if (dynamic_cast<const DimensionError*>(&e)) return "DimensionError";
    if (dynamic_cast<const NumericError*>(&e)) return "NumericError";
    if (dynamic_cast<const IoError*>(&e)) return "IoError";
    if (dynamic_cast<const CLI::Error*>(&e)) return "UsageError";
    return "Error";
}

int fail(const std::string& type, const std::string& message) {
    nlohmann::json j{{"error", {{"type", type}, {"message", message}}}};
    std::cerr << j.dump() << std::endl;
    return kExitError;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semantic-token vision transformer toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    std::optional<unsigned> threads_flag;
    app.add_option("--threads", threads_flag, "Worker threads inside kernels (default: STVIT_THREADS or 1)");

    // forward
    auto* fwd = app.add_subcommand("forward", "Run one forward pass and write the trace and logits");
    ModelSource fwd_model;
    fwd_model.add_to(*fwd);
    std::string fwd_weights, fwd_input, fwd_out;
    std::uint64_t fwd_seed = 0;
    bool fwd_attention = false, fwd_timings = false;
    fwd->add_option("--weights", fwd_weights, "Weights directory (random weights from --seed when omitted)");
    fwd->add_option("--input", fwd_input, "Input image tensor [H,W,C] (random from --seed when omitted)");
    fwd->add_option("--seed", fwd_seed, "Seed for random weights and input");
    fwd->add_option("--out", fwd_out, "Output directory")->required();
    fwd->add_flag("--export-attention", fwd_attention, "Include attention probabilities in the trace");
    fwd->add_flag("--timings", fwd_timings, "Include per-record wall-clock times in the trace");

    // flops
    auto* flops = app.add_subcommand("flops", "Count MACs per layer");
    ModelSource flops_model;
    flops_model.add_to(*flops);
    std::string flops_out;
    bool flops_table = false;
    flops->add_option("--out", flops_out, "Output directory (prints JSON to stdout when omitted)");
    flops->add_flag("--table", flops_table, "Sweep the table presets and emit one CSV row each");

    // bench
    auto* bench = app.add_subcommand("bench", "Median forward wall-clock of two models");
    ModelSource bench_a, bench_b;
    bench_a.add_to(*bench, "-a");
    bench_b.add_to(*bench, "-b");
    std::size_t repeats = 5;
    std::uint64_t bench_seed = 0;
    std::string bench_out;
    bench->add_option("--repeats", repeats, "Timed forwards per model (>= 3)");
    bench->add_option("--seed", bench_seed, "Seed for weights and input");
    bench->add_option("--out", bench_out, "Output directory");

    // recover
    auto* rec = app.add_subcommand("recover", "Cluster-recovery experiment over seeds");
    MixtureSpec spec;
    ExperimentOptions exp;
    std::string init = "true_perturbed", lambda = "theorem", rec_out;
    std::size_t seeds = 1;
    rec->add_option("--clusters,-K", spec.clusters, "Number of clusters");
    rec->add_option("--dim,-d", spec.dim, "Dimension");
    rec->add_option("--samples,-n", spec.samples, "Samples per cluster");
    rec->add_option("--sigma", spec.sigma, "Noise scale");
    rec->add_option("--gamma-max", spec.gamma_max, "Bound on pairwise center inner products");
    rec->add_option("--seed", spec.seed, "First seed");
    rec->add_option("--seeds", seeds, "Number of consecutive seeds");
    rec->add_option("--init", init, "true_perturbed or random");
    rec->add_option("--perturbation", exp.perturbation, "Perturbation norm for true_perturbed init");
    rec->add_option("--lambda", lambda, "'theorem' or a fixed non-negative value");
    rec->add_option("--updates", exp.updates, "Attention updates");
    rec->add_option("--out", rec_out, "Output directory");

    // init-weights
    auto* initw = app.add_subcommand("init-weights", "Write random weights for a model");
    ModelSource init_model;
    init_model.add_to(*initw);
    std::uint64_t init_seed = 0;
    std::string init_out;
    bool init_f32 = false;
    initw->add_option("--seed", init_seed, "Seed");
    initw->add_option("--out", init_out, "Weights directory")->required();
    initw->add_flag("--f32", init_f32, "Store tensors as 32-bit floats");

    // presets
    auto* presets = app.add_subcommand("presets", "List built-in presets or print one as JSON");
    std::string show;
    presets->add_option("--show", show, "Preset to print");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::Error& e) {
        return fail("UsageError", e.what());
    }

    try {
        const unsigned threads = resolve_threads(threads_flag);
        set_num_threads(threads);

        if (*fwd) {
            const Timer total;
            const ModelConfig cfg = fwd_model.load();
            const fs::path out = prepare_out(fwd_out);
            ModelWeights w = fwd_weights.empty() ? random_weights(cfg, fwd_seed) : load_weights(fwd_weights, cfg);
            Tensor image = fwd_input.empty() ? random_image(cfg, fwd_seed) : read_tensor(fwd_input);
            const Timer t;
            const ForwardResult r = forward(cfg, w, image, {fwd_attention});
            const double fwd_seconds = t.seconds();
            write_text(out / "trace.json", trace_to_json(r.trace, fwd_timings));
            write_tensor(out / "logits.stvt", r.logits);
            RunManifest m;
            m.command = "forward";
            m.config = fwd_model.label();
            m.seed = fwd_seed;
            m.weights_hash = weights_hash(w);
            m.threads = threads;
            m.outputs = {{"trace", (out / "trace.json").string()}, {"logits", (out / "logits.stvt").string()}};
            m.timings = {{"forward", fwd_seconds}, {"total", total.seconds()}};
            write_manifest(out / "manifest.json", m);
            std::cout << "forward " << cfg.name << ": " << r.trace.total_macs() << " MACs, " << fwd_seconds << " s\n";
        } else if (*flops) {
            const Timer total;
            if (flops_table) {
                const std::string csv = flops_table_csv();
                if (flops_out.empty()) {
                    std::cout << csv;
                } else {
                    const fs::path out = prepare_out(flops_out);
                    write_text(out / "flops_table.csv", csv);
                    RunManifest m;
                    m.command = "flops";
                    m.config = "table";
                    m.threads = threads;
                    m.outputs = {{"csv", (out / "flops_table.csv").string()}};
                    m.timings = {{"total", total.seconds()}};
                    write_manifest(out / "manifest.json", m);
                }
            } else {
                const ModelConfig cfg = flops_model.load();
                const FlopsReport rep = flops_counted(cfg);
                if (flops_out.empty()) {
                    std::cout << flops_report_to_json(rep) << "\n";
                } else {
                    const fs::path out = prepare_out(flops_out);
                    write_text(out / "flops.json", flops_report_to_json(rep));
                    write_text(out / "flops.csv", flops_csv_header() + "\n" + flops_csv_row(rep));
                    RunManifest m;
                    m.command = "flops";
                    m.config = flops_model.label();
                    m.threads = threads;
                    m.outputs = {{"report", (out / "flops.json").string()}, {"csv", (out / "flops.csv").string()}};
                    m.timings = {{"total", total.seconds()}};
                    write_manifest(out / "manifest.json", m);
                    std::cout << flops_csv_row(rep) << "\n";
                }
            }
        } else if (*bench) {
            const ModelConfig a = bench_a.load();
            const ModelConfig b = bench_b.load();
            if (repeats < 3) throw ConfigError("--repeats must be >= 3, got " + std::to_string(repeats));
            const BenchTiming ta = bench_forward(a, repeats, bench_seed);
            const BenchTiming tb = bench_forward(b, repeats, bench_seed);
            std::ostringstream csv;
            csv << "label,model,repeats,median_seconds,min_seconds,max_seconds,macs\n";
            for (const auto& [label, t] : {std::pair{"a", &ta}, std::pair{"b", &tb}}) {
                csv << label << ',' << t->model << ',' << t->seconds.size() << ',' << t->median << ','
                    << *std::min_element(t->seconds.begin(), t->seconds.end()) << ','
                    << *std::max_element(t->seconds.begin(), t->seconds.end()) << ',' << t->macs << '\n';
            }
            const double speedup = ta.median / tb.median;
            std::cout << csv.str() << "speedup_b_over_a," << speedup << "\n";
            if (!bench_out.empty()) {
                const fs::path out = prepare_out(bench_out);
                write_text(out / "bench.csv", csv.str());
                RunManifest m;
                m.command = "bench";
                m.config = bench_a.label() + " vs " + bench_b.label();
                m.seed = bench_seed;
                m.threads = threads;
                m.outputs = {{"csv", (out / "bench.csv").string()}};
                m.timings = {{"median_a", ta.median}, {"median_b", tb.median}, {"speedup_b_over_a", speedup}};
                write_manifest(out / "manifest.json", m);
            }
        } else if (*rec) {
            const Timer total;
            exp.init = parse_init_kind(init);
            if (lambda == "theorem") {
                exp.lambda = LambdaRule::theorem();
            } else {
                try {
                    std::size_t used = 0;
                    exp.lambda = LambdaRule::fixed(std::stod(lambda, &used));
                    if (used != lambda.size()) throw std::invalid_argument(lambda);
                } catch (const std::logic_error&) {
                    throw ConfigError("--lambda must be 'theorem' or a number, got '" + lambda + "'");
                }
            }
            if (seeds == 0) throw ConfigError("--seeds must be >= 1");
            const auto reports = run_seeds(spec, exp, spec.seed, seeds, threads);
            std::ostringstream csv;
            csv << recovery_csv_header() << '\n';
            for (const auto& r : reports) csv << recovery_csv_row(r) << '\n';
            if (rec_out.empty()) {
                std::cout << csv.str();
            } else {
                const fs::path out = prepare_out(rec_out);
                nlohmann::json all = nlohmann::json::array();
                for (const auto& r : reports) all.push_back(nlohmann::json::parse(recovery_report_to_json(r)));
                write_text(out / "recovery.json", all.dump(2));
                write_text(out / "recovery.csv", csv.str());
                RunManifest m;
                m.command = "recover";
                m.config = "mixture";
                m.seed = spec.seed;
                m.threads = threads;
                m.outputs = {{"reports", (out / "recovery.json").string()}, {"csv", (out / "recovery.csv").string()}};
                m.timings = {{"total", total.seconds()}};
                write_manifest(out / "manifest.json", m);
                std::cout << csv.str();
            }
        } else if (*initw) {
            const ModelConfig cfg = init_model.load();
            ModelWeights w = random_weights(cfg, init_seed);
            const fs::path out = prepare_out(init_out);
            save_weights(out, cfg, w, init_f32 ? StorageType::f32 : StorageType::f64);
            write_text(out / "config.json", model_config_to_json(cfg));
            std::cout << weights_hash(w) << "\n";
        } else if (*presets) {
            if (show.empty()) {
                for (const auto& n : preset_names()) std::cout << n << "\n";
            } else {
                std::cout << model_config_to_json(preset(show)) << "\n";
            }
        }
    } catch (const std::exception& e) {
        return fail(error_type(e), e.what());
    }
    return 0;
}
