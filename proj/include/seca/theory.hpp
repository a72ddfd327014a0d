#pragma once

// Entropy-regularized teacher weighting on the probability simplex:
//
//   minimize  sum_i a_i L_i + tau sum_i a_i log a_i   subject to  a in simplex
//
// whose stationarity conditions give a_k proportional to exp(-L_k / tau).
// `closed_form_weights` evaluates that solution; `numeric_minimize` reaches
// the minimizer independently by exponentiated-gradient descent, so the two
// can be checked against each other.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace seca::theory {

/// Simplex tolerance on the weight sum.
constexpr double kSimplexTolerance = 1e-10;

bool is_simplex_point(std::span<const double> alpha, double tol = kSimplexTolerance);

/// sum_i a_i L_i + tau sum_i a_i log a_i, with 0 log 0 = 0.
double surrogate_objective(std::span<const double> alpha, std::span<const double> losses, double tau);

/// a_k = exp(-L_k / tau) / sum_j exp(-L_j / tau), max-subtracted.
std::vector<double> closed_form_weights(std::span<const double> losses, double tau);

struct MinimizeResult {
    std::vector<double> weights;
    std::size_t iterations = 0;
    double stationarity = 0.0;  // max_k |g_k - sum_j a_j g_j|
};

/// Exponentiated-gradient minimization of the surrogate from the uniform
/// point, step 0.5 / tau, in the log domain. Throws non-convergence when the
/// stationarity measure stays above `tol` after `max_iters` steps.
MinimizeResult numeric_minimize(std::span<const double> losses, double tau, std::size_t max_iters = 10000,
                                double tol = 1e-12);

struct CheckInstance {
    std::size_t teachers = 0;
    double tau = 0.0;
    std::uint64_t seed = 0;
    double max_abs_diff = 0.0;      // closed form vs numeric, infinity norm
    double worst_objective_gap = 0.0;  // max over probes of f(closed) - f(probe)
    std::size_t probes = 0;
    bool passed = false;
};

struct CheckConfig {
    std::size_t instances = 300;
    std::size_t min_teachers = 2;
    std::size_t max_teachers = 8;
    std::vector<double> taus = {0.1, 1.0, 10.0};
    std::size_t random_probes = 200;
    double weight_tol = 1e-5;
    double objective_slack = 1e-9;
    std::uint64_t seed = 2024;
};

/// Runs the seeded instance grid: losses ~ U[0, 5), teacher count cycling
/// through [min, max], tau cycling through `taus`. Probes are random simplex
/// points (Dirichlet(1)), every vertex, and the uniform point.
std::vector<CheckInstance> run_check(const CheckConfig& cfg);

}  // namespace seca::theory
