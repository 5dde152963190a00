#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "stvit/tensor.hpp"

namespace stvit {

/// Seeded generator with platform-stable output.
///
/// std::normal_distribution is implementation defined, so normals are drawn
/// with Box-Muller on top of mt19937_64, whose sequence is fixed by the standard.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        constexpr double two_pi = 6.283185307179586;
        spare_ = r * std::sin(two_pi * u2);
        has_spare_ = true;
        return r * std::cos(two_pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    Tensor normal_tensor(Shape shape, double stddev) {
        Tensor t(std::move(shape));
        for (double& v : t.data()) v = stddev * normal();
        return t;
    }

    std::uint64_t next_u64() { return engine_(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace stvit
