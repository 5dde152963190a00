#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "stvit/ops.hpp"
#include "stvit/recovery_lab.hpp"

using namespace stvit;

namespace {

double dot_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double s = 0;
    for (std::size_t t = 0; t < a.dim(1); ++t) s += a(i, t) * b(j, t);
    return s;
}

Tensor unit_rows(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        const double n = std::sqrt(dot_rows(x, i, x, i));
        for (std::size_t t = 0; t < x.dim(1); ++t) out(i, t) /= n;
    }
    return out;
}

}  // namespace

TEST_SUITE("recovery_lab") {

TEST_CASE("mixture sampling") {
    MixtureSpec spec;
    spec.clusters = 6;
    spec.dim = 16;
    spec.samples = 5;
    spec.sigma = 0.0;
    spec.seed = 3;
    const Mixture m = sample_mixture(spec);
    CHECK(m.centers.shape() == Shape{6, 16});
    CHECK(m.points.shape() == Shape{30, 16});
    for (std::size_t i = 0; i < 30; ++i)
        for (std::size_t t = 0; t < 16; ++t) CHECK(m.points(i, t) == m.centers(i / 5, t));
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(std::abs(dot_rows(m.centers, i, m.centers, i) - 1.0) < 1e-12);
        for (std::size_t j = i + 1; j < 6; ++j) CHECK(std::abs(dot_rows(m.centers, i, m.centers, j)) <= spec.gamma_max);
    }
    const Mixture again = sample_mixture(spec);
    CHECK(again.centers == m.centers);

    spec.clusters = 17;
    CHECK_THROWS_AS(sample_mixture(spec), ConfigError);
    spec.clusters = 1;
    CHECK_THROWS_AS(sample_mixture(spec), ConfigError);
}

TEST_CASE("sample means concentrate on centers") {
    MixtureSpec spec;
    spec.clusters = 2;
    spec.dim = 8;
    spec.samples = 100000;
    spec.sigma = 0.5;
    spec.seed = 4;
    const Mixture m = sample_mixture(spec);
    for (std::size_t k = 0; k < 2; ++k) {
        double err = 0;
        for (std::size_t t = 0; t < 8; ++t) {
            double mean = 0;
            for (std::size_t p = 0; p < spec.samples; ++p) mean += m.points(k * spec.samples + p, t);
            mean /= static_cast<double>(spec.samples);
            err += (mean - m.centers(k, t)) * (mean - m.centers(k, t));
        }
        // Norm of the mean error has expectation sigma / sqrt(n).
        CHECK(std::sqrt(err) < 5 * spec.sigma / std::sqrt(static_cast<double>(spec.samples)));
    }
}

TEST_CASE("attention update cases") {
    const Tensor points = Tensor::from_rows({{1, 0}, {0.9, 0.1}, {0.8, -0.2}, {0, 1}, {-0.1, 0.9}, {0.2, 1.1}});
    const Tensor mu = Tensor::from_rows({{0.8, 0.6}, {-0.6, 0.8}});
    for (double lambda : {0.0, 0.5, 3.0, 25.0}) {
        const auto u = attention_update(points, mu, lambda);
        CHECK(max_abs_diff(u.mu_prime, oracle::attention_update(points, mu, lambda)) < 1e-12);
        for (std::size_t k = 0; k < 2; ++k) {
            CHECK(u.z[k] > 0.0);
            CHECK(u.z[k] >= 1.0);
        }
    }
    const auto zero = attention_update(points, mu, 0.0);
    const Tensor mean = mean_rows(points);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t t = 0; t < 2; ++t) CHECK(std::abs(zero.mu_prime(k, t) - mean(0, t)) < 1e-12);

    // Logit gap of 40 between the closest point and the rest.
    const Tensor pts = Tensor::from_rows({{1, 0}, {0, 0}, {0, 0.5}});
    const auto sat = attention_update(pts, Tensor::from_rows({{1, 0}}), 40.0);
    CHECK(std::abs(sat.mu_prime(0, 0) - 1.0) < 1e-6);
    CHECK(std::abs(sat.mu_prime(0, 1)) < 1e-6);

    CHECK_THROWS_AS(attention_update(pts, Tensor::from_rows({{1, 0}}), -1.0), ConfigError);
    CHECK_THROWS_AS(attention_update(pts, Tensor::from_rows({{1, 0, 0}}), 1.0), DimensionError);
    CHECK_THROWS_AS(attention_update(Tensor::from_rows({{1, std::nan("")}}), Tensor::from_rows({{1, 0}}), 1.0),
                    NumericError);
}

TEST_CASE("update weights form a distribution and stay in the convex hull") {
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor points = oracle::random_tensor(gen, {12, 4});
        const Tensor mu = unit_rows(oracle::random_tensor(gen, {3, 4}));
        const double lambda = 0.5 + trial;
        const auto u = attention_update(points, mu, lambda);
        for (std::size_t k = 0; k < 3; ++k) {
            double total = 0;
            for (std::size_t p = 0; p < 12; ++p) {
                const double w = std::exp(lambda * dot_rows(mu, k, points, p) - u.max_logit[k]) / u.z[k];
                CHECK(w >= 0.0);
                total += w;
            }
            CHECK(std::abs(total - 1.0) < 1e-12);
            for (std::size_t t = 0; t < 4; ++t) {
                double lo = points(0, t), hi = points(0, t);
                for (std::size_t p = 1; p < 12; ++p) {
                    lo = std::min(lo, points(p, t));
                    hi = std::max(hi, points(p, t));
                }
                CHECK(u.mu_prime(k, t) >= lo - 1e-12);
                CHECK(u.mu_prime(k, t) <= hi + 1e-12);
            }
        }
    }
}

TEST_CASE("attention update is a single-head attention with scaled query projection") {
    std::mt19937_64 gen(6);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t d = 6;
        const Tensor points = oracle::random_tensor(gen, {40, d}, 0.5);
        const Tensor mu = unit_rows(oracle::random_tensor(gen, {4, d}));
        const double lambda = 1.0 + 2.0 * trial;
        AttentionWeights w;
        w.heads = 1;
        w.q = {scale(Tensor::identity(d), lambda * std::sqrt(static_cast<double>(d))), Tensor({d})};
        w.k = {Tensor::identity(d), Tensor({d})};
        w.v = {Tensor::identity(d), Tensor({d})};
        w.o = {Tensor::identity(d), Tensor({d})};
        const Tensor attn = multi_head_attention(mu, points, w);
        CHECK(max_abs_diff(attn, attention_update(points, mu, lambda).mu_prime) < 1e-10);
    }
}

TEST_CASE("initialization gaps") {
    const Tensor centers = Tensor::from_rows({{1, 0}, {0, 1}});
    const auto exact = initialization_gaps(centers, centers);
    CHECK(exact[0] == doctest::Approx(1.0));
    CHECK(exact[1] == doctest::Approx(1.0));
    const auto swapped = initialization_gaps(centers, Tensor::from_rows({{0, 1}, {1, 0}}));
    CHECK(swapped[0] == doctest::Approx(-1.0));
}

TEST_CASE("noiseless recovery with a large lambda") {
    MixtureSpec spec;
    spec.clusters = 4;
    spec.dim = 16;
    spec.samples = 50;
    spec.sigma = 0.0;
    spec.seed = 7;
    ExperimentOptions opts;
    opts.lambda = LambdaRule::fixed(200.0);
    const auto r = run_experiment(spec, opts);
    REQUIRE(r.feasible);
    CHECK(r.delta > opts.perturbation * 0.5);
    for (const auto& c : r.clusters) CHECK(std::abs(*c.cos_after - 1.0) < 1e-9);
}

TEST_CASE("theorem lambda improves alignment") {
    MixtureSpec spec;
    spec.samples = 400;
    spec.seed = 8;
    const auto r = run_experiment(spec, {});
    REQUIRE(r.feasible);
    CHECK(r.lambda == doctest::Approx((std::log(64.0) + std::log(8.0)) / r.delta));
    CHECK(*r.min_cos_after > r.min_cos_before);
    for (const auto& c : r.clusters) {
        CHECK(c.cos_before <= 1.0);
        CHECK(*c.cos_after <= 1.0 + 1e-12);
        CHECK(*c.z > 0.0);
    }
}

TEST_CASE("random init and repeated updates") {
    MixtureSpec spec;
    spec.clusters = 4;
    spec.dim = 8;
    spec.samples = 200;
    spec.seed = 9;
    ExperimentOptions opts;
    opts.init = InitKind::random;
    opts.updates = 3;
    const auto r = run_experiment(spec, opts);
    CHECK(r.clusters.size() == 4);
    if (!r.feasible) {
        CHECK(!r.min_cos_after.has_value());
        CHECK(!r.note.empty());
    }
    opts.lambda = LambdaRule::fixed(5.0);
    const auto f = run_experiment(spec, opts);
    CHECK(f.feasible);
    CHECK(f.lambda == 5.0);
    CHECK(parse_init_kind("random") == InitKind::random);
    CHECK_THROWS_AS(parse_init_kind("kmeans"), ConfigError);
    opts.updates = 0;
    CHECK_THROWS_AS(run_experiment(spec, opts), ConfigError);
}

TEST_CASE("determinism and thread independence") {
    MixtureSpec spec;
    spec.clusters = 4;
    spec.dim = 16;
    spec.samples = 100;
    const auto one = run_seeds(spec, {}, 10, 6, 1);
    const auto many = run_seeds(spec, {}, 10, 6, 4);
    REQUIRE(one.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(one[i].spec.seed == 10 + i);
        CHECK(recovery_report_to_json(one[i]) == recovery_report_to_json(many[i]));
    }
    CHECK(recovery_csv_row(one[0]).rfind("10,4,16,100,", 0) == 0);
}

}  // TEST_SUITE
