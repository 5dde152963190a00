// Acceptance checks, one per criterion id. Prints a single PASS/FAIL line and
// exits non-zero on failure.
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "stvit/bench.hpp"
#include "stvit/complexity.hpp"
#include "stvit/presets.hpp"
#include "stvit/recovery_lab.hpp"

using namespace stvit;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

constexpr double kCountedTolerance = 0.03;
constexpr double kClosedFormTolerance = 0.07;
constexpr double kReductionPoints = 3.0;
constexpr double kSwinTolerance = 0.10;
constexpr double kIdentityTolerance = 1e-10;
constexpr double kOracleTolerance = 1e-10;
constexpr double kUpdateTolerance = 1e-12;
constexpr double kMinCosine = 0.95;
constexpr std::size_t kSeeds = 20;
constexpr std::size_t kSeedsRequired = 19;
constexpr double kScalingFactor = 1.1;
constexpr double kSpeedup = 1.3;

struct TableEntry {
    const char* preset;
    double gflops;
};

// Reported GFLOPs of the DeiT family, full tokens then 16/36/64/100 semantic tokens.
constexpr TableEntry kTable1[] = {
    {"deit-t", 1.26},     {"deit-t-16", 0.53},  {"deit-t-36", 0.60},  {"deit-t-64", 0.71},  {"deit-t-100", 0.86},
    {"deit-s", 4.58},     {"deit-s-16", 1.91},  {"deit-s-36", 2.20},  {"deit-s-64", 2.62},  {"deit-s-100", 3.16},
    {"deit-b", 17.58},    {"deit-b-16", 7.31},  {"deit-b-36", 8.44},  {"deit-b-64", 10.04}, {"deit-b-100", 12.13},
};
constexpr double kReductionPattern[] = {58, 52, 43, 31};

constexpr TableEntry kTable2[] = {
    {"swin-t", 4.5}, {"swin-t-9", 3.43}, {"swin-s", 8.7}, {"swin-s-9", 6.53}};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

double rel(double got, double want) { return std::abs(got - want) / want; }

Outcome counted_flops() {
    double worst = 0;
    std::string worst_name;
    for (const auto& e : kTable1) {
        const double g = static_cast<double>(flops_counted(preset(e.preset)).counted) * 1e-9;
        if (rel(g, e.gflops) > worst) {
            worst = rel(g, e.gflops);
            worst_name = e.preset;
        }
    }
    return {worst <= kCountedTolerance, "worst " + worst_name + fmt(" off by %.2f%% (limit %.0f%%)", 100 * worst,
                                                                    100 * kCountedTolerance)};
}

Outcome closed_form_flops() {
    double worst = 0;
    std::string worst_name;
    std::size_t failing = 0;
    for (const auto& e : kTable1) {
        const auto r = flops_counted(preset(e.preset));
        const double g = r.closed_form.value_or(0.0) * 1e-9;
        const double err = rel(g, e.gflops);
        failing += err > kClosedFormTolerance;
        if (err > worst) {
            worst = err;
            worst_name = e.preset;
        }
    }
    return {failing == 0, fmt("%.0f of 15 entries beyond %.0f%%; ", static_cast<double>(failing),
                              100 * kClosedFormTolerance) +
                              "worst " + worst_name + fmt(" off by %.2f%%", 100 * worst)};
}

Outcome reductions() {
    double worst = 0;
    std::ostringstream os;
    for (const char* family : {"deit-t", "deit-s", "deit-b"}) {
        const char* sizes[] = {"-16", "-36", "-64", "-100"};
        for (std::size_t i = 0; i < 4; ++i) {
            const auto r = flops_counted(preset(std::string(family) + sizes[i]));
            const double pct = 100 * r.reduction_vs_base;
            worst = std::max(worst, std::abs(pct - kReductionPattern[i]));
            os << ' ' << std::lround(pct);
        }
    }
    return {worst <= kReductionPoints, "reductions" + os.str() + fmt(" (worst %.2f points)", worst)};
}

Outcome swin_flops() {
    double worst = 0;
    std::ostringstream os;
    for (const auto& e : kTable2) {
        const double g = static_cast<double>(flops_counted(preset(e.preset)).counted) * 1e-9;
        worst = std::max(worst, rel(g, e.gflops));
        os << ' ' << e.preset << '=' << fmt("%.2f", g);
    }
    return {worst <= kSwinTolerance, os.str().substr(1) + fmt(" (worst %.2f%%)", 100 * worst)};
}

Outcome decoupled_identity() {
    std::mt19937_64 gen(2024);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        std::uniform_int_distribution<std::size_t> size(1, 24);
        const std::size_t m = size(gen), n = size(gen), c = size(gen);
        const Tensor s1 = oracle::random_tensor(gen, {m, c}), g = oracle::random_tensor(gen, {m, c});
        const Tensor keys = oracle::random_tensor(gen, {m + n, c});
        const Tensor wq = oracle::random_tensor(gen, {c, c}), wk = oracle::random_tensor(gen, {c, c});
        worst = std::max(worst, max_abs_diff(fused_query_logits(s1, g, keys, wq, wk),
                                             decoupled_query_logits(s1, g, keys, wq, wk)));
    }
    return {worst <= kIdentityTolerance, fmt("max |fused - decoupled| = %.3g over 1000 draws", worst)};
}

Outcome recovery_theorem() {
    const MixtureSpec spec;
    const auto reports = run_seeds(spec, {}, 1, kSeeds, num_threads());
    std::size_t ok = 0;
    double lowest = 1;
    for (const auto& r : reports) {
        if (!r.feasible || r.delta < 0.3) continue;
        const double after = *r.min_cos_after;
        lowest = std::min(lowest, after);
        ok += after >= kMinCosine && after > r.min_cos_before;
    }
    return {ok >= kSeedsRequired, fmt("%.0f/%.0f seeds pass, lowest min cosine %.5f", static_cast<double>(ok),
                                      static_cast<double>(kSeeds), lowest)};
}

Outcome recovery_scaling() {
    std::map<std::size_t, double> worst;
    for (std::size_t d : {32u, 64u, 128u, 256u}) {
        MixtureSpec spec;
        spec.dim = d;
        double w = 0;
        for (const auto& r : run_seeds(spec, {}, 1, 5, num_threads())) {
            if (r.feasible) w = std::max(w, 1.0 - *r.min_cos_after);
        }
        worst[d] = w;
    }
    const double limit = kScalingFactor * worst[32];
    bool pass = true;
    for (const auto& [d, w] : worst) pass = pass && w <= limit;
    return {pass, fmt("1 - min cos: d=32 %.3g, d=64 %.3g, d=128 %.3g", worst[32], worst[64], worst[128]) +
                      fmt(", d=256 %.3g (limit %.3g)", worst[256], limit)};
}

Outcome oracle_equivalence() {
    std::mt19937_64 gen(77);
    Rng rng(77);
    double layer1 = 0, layer2 = 0, self = 0, update = 0, structural = 0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t heads = 1 + i % 4, c = heads * (2 + i % 3);
        const auto w = random_transformer_layer(c, heads, 1 + i % 4, rng);
        const Tensor p = oracle::random_tensor(gen, {1 + i % 7, c}), x = oracle::random_tensor(gen, {3 + i % 11, c});
        const Tensor g = oracle::random_tensor(gen, p.shape());
        layer1 = std::max(layer1, max_abs_diff(stgm_layer1(p, x, w), oracle::cross_layer(p, x, w, oracle::all_keys())));
        layer2 = std::max(layer2, max_abs_diff(stgm_layer2(p, g, x, w),
                                               oracle::cross_layer(p, concat_rows(p, x), w, oracle::all_keys(), &g)));
        self = std::max(self, max_abs_diff(transformer_layer(x, w), oracle::self_layer(x, w, oracle::all_keys())));

        const Tensor pts = oracle::random_tensor(gen, {20, c}, 0.5), mu = oracle::random_tensor(gen, {3, c}, 0.3);
        const double lambda = 0.25 * (i % 9);
        update = std::max(update, max_abs_diff(attention_update(pts, mu, lambda).mu_prime,
                                               oracle::attention_update(pts, mu, lambda)));
        AttentionWeights aw;
        aw.heads = 1;
        aw.q = {scale(Tensor::identity(c), lambda * std::sqrt(static_cast<double>(c))), Tensor({c})};
        aw.k = aw.v = aw.o = {Tensor::identity(c), Tensor({c})};
        structural = std::max(structural, max_abs_diff(multi_head_attention(mu, pts, aw),
                                                        attention_update(pts, mu, lambda).mu_prime));
    }
    const bool pass = layer1 <= kOracleTolerance && layer2 <= kOracleTolerance && self <= kOracleTolerance &&
                      update <= kUpdateTolerance && structural <= kOracleTolerance;
    return {pass, fmt("layer1 %.2g, layer2 %.2g, ", layer1, layer2) + fmt("self %.2g, update %.2g, ", self, update) +
                      fmt("structural %.2g", structural)};
}

Outcome schedule() {
    const auto deit = preset("deit-s-16");
    const auto d = forward(deit, random_weights(deit, 1), random_image(deit, 1)).trace;
    const auto counts = d.layer_token_counts();
    std::vector<std::size_t> expect(4, 196);
    expect.insert(expect.end(), 2, 16);  // STGM layers
    expect.insert(expect.end(), 6, 16);
    bool stgm_at_5_6 = false;
    for (const auto& r : d.records) {
        if (r.kind == "stgm_layer1") stgm_at_5_6 = r.index == 5;
    }
    const bool deit_ok = counts == expect && stgm_at_5_6;

    const auto dumbbell = preset("stvit-r-swin-s");
    const auto t = forward(dumbbell, random_weights(dumbbell, 2), random_image(dumbbell, 2)).trace;
    std::size_t dips = 0, restores = 0;
    std::size_t ni = 0, ns = 0;
    for (const auto& r : t.records) {
        if (r.kind == "stgm_layer1" && r.stage == dumbbell.dumbbell->stage) {
            ++dips;
            ni = r.tokens_in;
            ns = r.tokens_out;
        }
        if (r.kind == "recovery") restores += r.tokens_out == ni && r.tokens_in == ns;
    }
    const bool dumbbell_ok = dips == 3 && restores == 3 && ns < ni;

    std::mt19937_64 gen(5);
    bool round_trip = true;
    for (std::size_t w : {2u, 4u, 7u}) {
        const Tensor x = oracle::random_tensor(gen, {w * 4, w * 3, 5});
        round_trip = round_trip && merge(partition(x, w), w * 4, w * 3, w) == x;
    }
    std::ostringstream os;
    os << "deit-s-16 layers";
    for (auto c : counts) os << ' ' << c;
    os << "; stvit-r-swin-s " << ni << "->" << ns << "->" << ni << " x" << restores
       << "; partition round trip " << (round_trip ? "exact" : "differs");
    return {deit_ok && dumbbell_ok && round_trip, os.str()};
}

Outcome bench() {
    set_num_threads(1);
    const auto full = bench_forward(preset("deit-s"), 3, 1);
    const auto semantic = bench_forward(preset("deit-s-16"), 3, 1);
    const double ratio = full.median / semantic.median;
    return {ratio > kSpeedup, fmt("median %.3fs full vs %.3fs semantic, speedup %.2fx", full.median, semantic.median,
                                  ratio)};
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome golden_trace() {
    const std::string dir = STVIT_FIXTURE_DIR;
    const auto cfg = load_model_config(dir + "/config.json");
    const auto w = load_weights(dir + "/weights", cfg);
    const std::string golden = read_file(dir + "/trace.json");
    const Tensor logits = read_tensor(dir + "/logits.stvt");
    bool same = true;
    double drift = 0;
    for (int run = 0; run < 2; ++run) {
        const auto r = forward(cfg, w, random_image(cfg, 7));
        same = same && trace_to_json(r.trace, false) + "\n" == golden;
        drift = std::max(drift, max_abs_diff(r.logits, logits));
    }
    const bool pass = same && drift <= 1e-12;
    return {pass, std::string(same ? "trace JSON byte-identical to fixture over 2 runs" : "trace JSON differs from fixture") +
                      fmt(", logits drift %.3g", drift)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::map<std::string, std::function<Outcome()>> criteria{
        {"1a", counted_flops},      {"1b", closed_form_flops}, {"1c", reductions},   {"2", swin_flops},
        {"3", decoupled_identity},  {"4a", recovery_theorem},  {"4b", recovery_scaling}, {"5", oracle_equivalence},
        {"6", schedule},            {"7", bench},              {"8", golden_trace},
    };
    std::vector<std::string> ids;
    for (int i = 1; i < argc; ++i) ids.emplace_back(argv[i]);
    if (ids.empty())
        for (const auto& [id, _] : criteria) ids.push_back(id);
    bool all = true;
    for (const auto& id : ids) {
        const auto it = criteria.find(id);
        if (it == criteria.end()) {
            std::cerr << "unknown criterion '" << id << "'\n";
            return 2;
        }
        Outcome o;
        try {
            o = it->second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
