#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stvit/tensor.hpp"

namespace stvit {

/// Gaussian mixture with K unit-norm centers in R^d and n samples per cluster,
/// x = mu_i + u with u ~ N(0, sigma^2 I / d).
struct MixtureSpec {
    std::size_t clusters = 8;   // K
    std::size_t dim = 64;       // d
    std::size_t samples = 2000; // n per cluster
    double sigma = 0.5;
    double gamma_max = 0.1;     // bound on pairwise center inner products
    std::uint64_t seed = 0;
};

struct Mixture {
    Tensor centers;  // [K, d]
    Tensor points;   // [K*n, d], cluster-major
};

/// Throws ConfigError for infeasible specs (K > d, zero sizes, negative sigma).
Mixture sample_mixture(const MixtureSpec& spec);

struct AttentionUpdate {
    Tensor mu_prime;   // [K, d]
    Tensor z;          // [K], stabilised: sum_p exp(lambda <mu_k, x_p> - max_logit_k)
    Tensor max_logit;  // [K]
};

/// mu'_k = sum_p exp(lambda <mu_hat_k, x_p>) x_p / Z_k, with the per-k max logit subtracted.
AttentionUpdate attention_update(const Tensor& points, const Tensor& mu_hat, double lambda);

/// Per-row initialization gap: Delta_k = min_{j != k} <mu_hat_k, mu_k - mu_j>.
std::vector<double> initialization_gaps(const Tensor& centers, const Tensor& mu_hat);

enum class InitKind { true_perturbed, random };
std::string to_string(InitKind k);
InitKind parse_init_kind(const std::string& s);

struct LambdaRule {
    enum class Kind { theorem, fixed } kind = Kind::theorem;
    double value = 0.0;  // used when kind == fixed

    static LambdaRule theorem() { return {}; }
    static LambdaRule fixed(double v) { return {Kind::fixed, v}; }
};

struct ExperimentOptions {
    InitKind init = InitKind::true_perturbed;
    double perturbation = 0.5;  // norm of the orthogonal perturbation before normalization
    LambdaRule lambda;
    std::size_t updates = 1;
};

struct ClusterResult {
    double delta = 0.0;
    double cos_before = 0.0;
    std::optional<double> cos_after;
    std::optional<double> z;
    std::optional<double> max_logit;
};

struct RecoveryReport {
    MixtureSpec spec;
    ExperimentOptions options;
    bool feasible = true;
    std::string note;
    double delta = 0.0;
    double lambda = 0.0;
    std::vector<ClusterResult> clusters;
    double min_cos_before = 0.0;
    std::optional<double> min_cos_after;
    std::optional<double> mean_cos_after;
};

RecoveryReport run_experiment(const MixtureSpec& spec, const ExperimentOptions& opts);

/// Runs seeds first_seed .. first_seed+count-1 on up to `threads` workers.
std::vector<RecoveryReport> run_seeds(MixtureSpec spec, const ExperimentOptions& opts, std::uint64_t first_seed,
                                      std::size_t count, unsigned threads = 1);

std::string recovery_report_to_json(const RecoveryReport& r, int indent = 2);
std::string recovery_csv_header();
std::string recovery_csv_row(const RecoveryReport& r);

}  // namespace stvit
