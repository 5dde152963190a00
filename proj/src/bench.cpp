#include "stvit/bench.hpp"

#include <algorithm>

namespace stvit {

double median(std::vector<double> v) {
    if (v.empty()) throw ConfigError("median of an empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

Tensor random_image(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed ^ 0x5bd1e995ULL);
    return rng.normal_tensor({cfg.image_size, cfg.image_size, cfg.in_channels}, 1.0);
}

BenchTiming bench_forward(const ModelConfig& cfg, std::size_t repeats, std::uint64_t seed) {
    if (repeats < 3) throw ConfigError("bench needs at least 3 repeats, got " + std::to_string(repeats));
    const ModelWeights w = random_weights(cfg, seed);
    const Tensor image = random_image(cfg, seed);
    BenchTiming out;
    out.model = cfg.name;
    out.macs = forward(cfg, w, image).trace.total_macs();
    for (std::size_t i = 0; i < repeats; ++i) {
        const Timer t;
        (void)forward(cfg, w, image);
        out.seconds.push_back(t.seconds());
    }
    out.median = median(out.seconds);
    return out;
}

}  // namespace stvit
