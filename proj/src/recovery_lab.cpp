#include "stvit/recovery_lab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "stvit/ops.hpp"
#include "stvit/rng.hpp"

namespace stvit {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void normalize(std::span<double> v) {
    const double n = std::sqrt(dot(v, v));
    if (n == 0.0) throw NumericError("cannot normalize a zero vector");
    for (auto& x : v) x /= n;
}

// Removes from `v` its components along the (orthonormal) rows of `basis`.
void project_out(std::span<double> v, const std::vector<std::vector<double>>& basis) {
    for (const auto& b : basis) {
        const double p = dot(v, b);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * b[i];
    }
}

std::vector<double> random_unit(std::size_t d, Rng& rng) {
    std::vector<double> v(d);
    do {
        for (auto& x : v) x = rng.normal();
    } while (dot(v, v) < 1e-12);
    normalize(v);
    return v;
}

double max_pairwise(const Tensor& c) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < c.dim(0); ++i) {
        for (std::size_t j = i + 1; j < c.dim(0); ++j) m = std::max(m, std::abs(dot(c.row(i), c.row(j))));
    }
    return c.dim(0) > 1 ? m : 0.0;
}

void check_spec(const MixtureSpec& s) {
    if (s.clusters < 2) throw ConfigError("mixture needs at least 2 clusters, got " + std::to_string(s.clusters));
    if (s.dim == 0 || s.samples == 0) throw ConfigError("mixture dimension and samples per cluster must be >= 1");
    if (s.clusters > s.dim) {
        throw ConfigError("infeasible mixture: " + std::to_string(s.clusters) + " near-orthogonal centers do not fit in " +
                          std::to_string(s.dim) + " dimensions");
    }
    if (!(s.sigma >= 0.0) || !std::isfinite(s.sigma)) throw ConfigError("sigma must be finite and >= 0");
    if (!(s.gamma_max >= 0.0) || s.gamma_max >= 1.0) throw ConfigError("gamma_max must lie in [0, 1)");
}

// Kuhn's augmenting path step for bipartite matching on allowed[k][i].
bool augment(std::size_t k, const std::vector<std::vector<char>>& allowed, std::vector<char>& seen,
             std::vector<std::size_t>& owner) {
    for (std::size_t i = 0; i < allowed[k].size(); ++i) {
        if (!allowed[k][i] || seen[i]) continue;
        seen[i] = 1;
        if (owner[i] == SIZE_MAX || augment(owner[i], allowed, seen, owner)) {
            owner[i] = k;
            return true;
        }
    }
    return false;
}

std::optional<std::vector<std::size_t>> perfect_matching(const std::vector<std::vector<char>>& allowed) {
    const std::size_t k = allowed.size();
    std::vector<std::size_t> owner(k, SIZE_MAX);
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<char> seen(k, 0);
        if (!augment(c, allowed, seen, owner)) return std::nullopt;
    }
    std::vector<std::size_t> assign(k);
    for (std::size_t i = 0; i < k; ++i) assign[owner[i]] = i;
    return assign;
}

// Assigns random unit vectors to clusters maximizing the smallest per-cluster gap.
Tensor assign_by_gap(const Tensor& centers, const std::vector<std::vector<double>>& candidates) {
    const std::size_t k = centers.dim(0), d = centers.dim(1);
    std::vector<std::vector<double>> score(k, std::vector<double>(k));
    std::vector<double> levels;
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < k; ++i) {
            double s = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < k; ++j) {
                if (j == c) continue;
                double g = 0.0;
                for (std::size_t t = 0; t < d; ++t) g += candidates[i][t] * (centers(c, t) - centers(j, t));
                s = std::min(s, g);
            }
            score[c][i] = s;
            levels.push_back(s);
        }
    }
    std::sort(levels.begin(), levels.end());
    std::size_t lo = 0, hi = levels.size() - 1;  // the lowest level always admits a matching
    std::vector<std::size_t> best;
    auto try_level = [&](double t) {
        std::vector<std::vector<char>> allowed(k, std::vector<char>(k));
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t i = 0; i < k; ++i) allowed[c][i] = score[c][i] >= t;
        }
        return perfect_matching(allowed);
    };
    best = *try_level(levels[lo]);
    while (lo < hi) {
        const std::size_t mid = (lo + hi + 1) / 2;
        if (auto m = try_level(levels[mid])) {
            best = *m;
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Tensor mu_hat({k, d});
    for (std::size_t c = 0; c < k; ++c) std::copy(candidates[best[c]].begin(), candidates[best[c]].end(), mu_hat.row(c).begin());
    return mu_hat;
}

}  // namespace

Mixture sample_mixture(const MixtureSpec& spec) {
    check_spec(spec);
    const std::size_t k = spec.clusters, d = spec.dim;
    Rng rng(spec.seed);

    std::vector<std::vector<double>> basis;
    while (basis.size() < k) {
        auto v = random_unit(d, rng);
        project_out(v, basis);
        if (dot(v, v) < 1e-8) continue;
        normalize(v);
        basis.push_back(std::move(v));
    }
    std::vector<std::vector<double>> jitter(k, std::vector<double>(d));
    for (auto& j : jitter) {
        for (auto& x : j) x = rng.normal() / std::sqrt(static_cast<double>(d));
    }
    Tensor centers({k, d});
    double eps = spec.gamma_max > 0.0 ? 1.0 : 0.0;
    for (int attempt = 0; attempt < 64; ++attempt) {
        for (std::size_t i = 0; i < k; ++i) {
            auto row = centers.row(i);
            for (std::size_t t = 0; t < d; ++t) row[t] = basis[i][t] + eps * jitter[i][t];
            normalize(row);
        }
        if (max_pairwise(centers) <= spec.gamma_max) break;
        eps = attempt == 62 ? 0.0 : eps * 0.5;
    }

    Tensor points({k * spec.samples, d});
    const double sd = spec.sigma / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t s = 0; s < spec.samples; ++s) {
            auto row = points.row(i * spec.samples + s);
            for (std::size_t t = 0; t < d; ++t) row[t] = centers(i, t) + (sd > 0.0 ? sd * rng.normal() : 0.0);
        }
    }
    return {std::move(centers), std::move(points)};
}

AttentionUpdate attention_update(const Tensor& points, const Tensor& mu_hat, double lambda) {
    if (points.rank() != 2 || mu_hat.rank() != 2 || points.dim(1) != mu_hat.dim(1)) {
        throw DimensionError("attention_update: points " + shape_to_string(points.shape()) + " and centers " +
                             shape_to_string(mu_hat.shape()) + " disagree");
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("attention_update: lambda must be finite and >= 0");
    for (double v : points.values()) {
        if (!std::isfinite(v)) throw NumericError("attention_update: non-finite sample point");
    }
    const std::size_t k = mu_hat.dim(0), d = mu_hat.dim(1), p = points.dim(0);
    Tensor logits = scale(matmul_transposed(mu_hat, points), lambda);
    AttentionUpdate out{Tensor({k, d}), Tensor({k}), Tensor({k})};
    for (std::size_t c = 0; c < k; ++c) {
        auto row = logits.row(c);
        const double m = *std::max_element(row.begin(), row.end());
        if (!std::isfinite(m)) throw NumericError("attention_update: non-finite logit for center " + std::to_string(c));
        double z = 0.0;
        for (auto& v : row) {
            v = std::exp(v - m);
            z += v;
        }
        auto dst = out.mu_prime.row(c);
        for (std::size_t i = 0; i < p; ++i) {
            const double wgt = row[i] / z;
            const auto x = points.row(i);
            for (std::size_t t = 0; t < d; ++t) dst[t] += wgt * x[t];
        }
        for (double v : dst) {
            if (!std::isfinite(v)) throw NumericError("attention_update: overflow for center " + std::to_string(c));
        }
        out.z[c] = z;
        out.max_logit[c] = m;
    }
    return out;
}

std::vector<double> initialization_gaps(const Tensor& centers, const Tensor& mu_hat) {
    const std::size_t k = centers.dim(0);
    std::vector<double> gaps(k, std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t j = 0; j < k; ++j) {
            if (j != c) gaps[c] = std::min(gaps[c], dot(mu_hat.row(c), centers.row(c)) - dot(mu_hat.row(c), centers.row(j)));
        }
    }
    return gaps;
}

std::string to_string(InitKind k) { return k == InitKind::true_perturbed ? "true_perturbed" : "random"; }

InitKind parse_init_kind(const std::string& s) {
    if (s == "true_perturbed") return InitKind::true_perturbed;
    if (s == "random") return InitKind::random;
    throw ConfigError("unknown init '" + s + "' (expected true_perturbed or random)");
}

RecoveryReport run_experiment(const MixtureSpec& spec, const ExperimentOptions& opts) {
    if (opts.updates == 0) throw ConfigError("updates must be >= 1");
    if (!(opts.perturbation >= 0.0)) throw ConfigError("perturbation must be >= 0");
    const Mixture mix = sample_mixture(spec);
    const std::size_t k = spec.clusters, d = spec.dim;
    Rng rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);

    Tensor mu_hat({k, d});
    if (opts.init == InitKind::true_perturbed) {
        std::vector<std::vector<double>> span_basis;
        for (std::size_t i = 0; i < k; ++i) {
            auto v = std::vector<double>(mix.centers.row(i).begin(), mix.centers.row(i).end());
            project_out(v, span_basis);
            normalize(v);
            span_basis.push_back(std::move(v));
        }
        for (std::size_t i = 0; i < k; ++i) {
            std::vector<double> u;
            do {
                u = random_unit(d, rng);
                if (k < d) {
                    project_out(u, span_basis);
                } else {
                    project_out(u, {std::vector<double>(mix.centers.row(i).begin(), mix.centers.row(i).end())});
                }
            } while (dot(u, u) < 1e-12);
            normalize(u);
            auto row = mu_hat.row(i);
            for (std::size_t t = 0; t < d; ++t) row[t] = mix.centers(i, t) + opts.perturbation * u[t];
            normalize(row);
        }
    } else {
        std::vector<std::vector<double>> candidates;
        for (std::size_t i = 0; i < k; ++i) candidates.push_back(random_unit(d, rng));
        mu_hat = assign_by_gap(mix.centers, candidates);
    }

    RecoveryReport rep;
    rep.spec = spec;
    rep.options = opts;
    const auto gaps = initialization_gaps(mix.centers, mu_hat);
    rep.delta = *std::min_element(gaps.begin(), gaps.end());
    rep.clusters.resize(k);
    rep.min_cos_before = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) {
        rep.clusters[i].delta = gaps[i];
        rep.clusters[i].cos_before = dot(mix.centers.row(i), mu_hat.row(i));
        rep.min_cos_before = std::min(rep.min_cos_before, rep.clusters[i].cos_before);
    }

    if (opts.lambda.kind == LambdaRule::Kind::theorem) {
        if (!(rep.delta > 0.0)) {
            rep.feasible = false;
            rep.note = "initialization gap " + std::to_string(rep.delta) + " <= 0; theorem lambda undefined";
            return rep;
        }
        rep.lambda = (std::log(static_cast<double>(d)) + std::log(static_cast<double>(k))) / rep.delta;
    } else {
        rep.lambda = opts.lambda.value;
    }

    Tensor current = mu_hat;
    AttentionUpdate upd;
    for (std::size_t u = 0; u < opts.updates; ++u) {
        if (u > 0) {
            for (std::size_t i = 0; i < k; ++i) normalize(current.row(i));
        }
        upd = attention_update(mix.points, current, rep.lambda);
        current = upd.mu_prime;
    }
    double sum = 0.0, mn = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) {
        const auto mp = upd.mu_prime.row(i);
        const double cos = dot(mix.centers.row(i), mp) / std::sqrt(dot(mp, mp));
        auto& c = rep.clusters[i];
        c.cos_after = cos;
        c.z = upd.z[i];
        c.max_logit = upd.max_logit[i];
        sum += cos;
        mn = std::min(mn, cos);
    }
    rep.min_cos_after = mn;
    rep.mean_cos_after = sum / static_cast<double>(k);
    return rep;
}

std::vector<RecoveryReport> run_seeds(MixtureSpec spec, const ExperimentOptions& opts, std::uint64_t first_seed,
                                      std::size_t count, unsigned threads) {
    std::vector<RecoveryReport> out(count);
    std::vector<std::exception_ptr> errors(count);
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            MixtureSpec s = spec;
            s.seed = first_seed + i;
            try {
                out[i] = run_experiment(s, opts);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (unsigned t = 1; t < workers; ++t) pool.emplace_back(work);
        work();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

std::string recovery_report_to_json(const RecoveryReport& r, int indent) {
    using nlohmann::json;
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json clusters = json::array();
    for (const auto& c : r.clusters) {
        clusters.push_back({{"delta", c.delta},
                            {"cos_before", c.cos_before},
                            {"cos_after", opt(c.cos_after)},
                            {"z", opt(c.z)},
                            {"max_logit", opt(c.max_logit)}});
    }
    json lambda_rule = r.options.lambda.kind == LambdaRule::Kind::theorem
                           ? json{{"kind", "theorem"}}
                           : json{{"kind", "fixed"}, {"value", r.options.lambda.value}};
    json j{{"spec",
            {{"clusters", r.spec.clusters},
             {"dim", r.spec.dim},
             {"samples", r.spec.samples},
             {"sigma", r.spec.sigma},
             {"gamma_max", r.spec.gamma_max},
             {"seed", r.spec.seed}}},
           {"init", to_string(r.options.init)},
           {"perturbation", r.options.perturbation},
           {"lambda_rule", lambda_rule},
           {"updates", r.options.updates},
           {"feasible", r.feasible},
           {"note", r.note},
           {"delta", r.delta},
           {"lambda", r.lambda},
           {"min_cos_before", r.min_cos_before},
           {"min_cos_after", opt(r.min_cos_after)},
           {"mean_cos_after", opt(r.mean_cos_after)},
           {"clusters", std::move(clusters)}};
    return j.dump(indent);
}

std::string recovery_csv_header() {
    return "seed,clusters,dim,samples,sigma,init,lambda,delta,min_cos_before,min_cos_after,mean_cos_after,feasible";
}

std::string recovery_csv_row(const RecoveryReport& r) {
    std::ostringstream os;
    os << std::setprecision(10);
    os << r.spec.seed << ',' << r.spec.clusters << ',' << r.spec.dim << ',' << r.spec.samples << ',' << r.spec.sigma
       << ',' << to_string(r.options.init) << ',' << r.lambda << ',' << r.delta << ',' << r.min_cos_before << ',';
    if (r.min_cos_after) os << *r.min_cos_after;
    os << ',';
    if (r.mean_cos_after) os << *r.mean_cos_after;
    os << ',' << (r.feasible ? "true" : "false");
    return os.str();
}

}  // namespace stvit
