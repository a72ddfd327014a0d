#include "seca/theory.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "seca/errors.hpp"
#include "seca/rng.hpp"

namespace seca::theory {

namespace {

void check_tau(double tau) {
    require(tau > 0.0, ErrorCode::kInvalidConfig, "entropy temperature must be positive");
}

double log_sum_exp(std::span<const double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

}  // namespace

bool is_simplex_point(std::span<const double> alpha, double tol) {
    if (alpha.empty()) return false;
    double s = 0.0;
    for (double a : alpha) {
        if (!(a >= 0.0)) return false;
        s += a;
    }
    return std::abs(s - 1.0) <= tol;
}

double surrogate_objective(std::span<const double> alpha, std::span<const double> losses, double tau) {
    check_tau(tau);
    require(alpha.size() == losses.size(), ErrorCode::kInvalidInput, "weights and losses differ in length");
    double linear = 0.0, entropy = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        linear += alpha[i] * losses[i];
        if (alpha[i] > 0.0) entropy += alpha[i] * std::log(alpha[i]);
    }
    return linear + tau * entropy;
}

std::vector<double> closed_form_weights(std::span<const double> losses, double tau) {
    check_tau(tau);
    require(!losses.empty(), ErrorCode::kInvalidInput, "no teacher losses");
    const double lo = *std::min_element(losses.begin(), losses.end());
    std::vector<double> w(losses.size());
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = std::exp(-(losses[i] - lo) / tau);
        total += w[i];
    }
    for (double& v : w) v /= total;
    return w;
}

MinimizeResult numeric_minimize(std::span<const double> losses, double tau, std::size_t max_iters, double tol) {
    check_tau(tau);
    require(!losses.empty(), ErrorCode::kInvalidInput, "no teacher losses");
    const std::size_t n = losses.size();
    const double step = 0.5 / tau;
    std::vector<double> log_a(n, -std::log(static_cast<double>(n)));
    std::vector<double> a(n), g(n);

    MinimizeResult res;
    for (std::size_t it = 0; it <= max_iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = std::exp(log_a[i]);
            g[i] = losses[i] + tau * (log_a[i] + 1.0);
        }
        double gbar = 0.0;
        for (std::size_t i = 0; i < n; ++i) gbar += a[i] * g[i];
        double stat = 0.0;
        for (std::size_t i = 0; i < n; ++i) stat = std::max(stat, std::abs(g[i] - gbar));
        res.stationarity = stat;
        res.iterations = it;
        if (stat <= tol * std::max(1.0, tau)) {
            res.weights = a;
            return res;
        }
        for (std::size_t i = 0; i < n; ++i) log_a[i] -= step * g[i];
        const double lse = log_sum_exp(log_a);
        for (double& v : log_a) v -= lse;
    }
    fail(ErrorCode::kNonConvergence, "exponentiated gradient did not reach stationarity " + std::to_string(tol) +
                                         " within " + std::to_string(max_iters) + " iterations");
}

std::vector<CheckInstance> run_check(const CheckConfig& cfg) {
    require(cfg.min_teachers >= 1 && cfg.max_teachers >= cfg.min_teachers, ErrorCode::kInvalidConfig,
            "teacher count range is empty");
    require(!cfg.taus.empty(), ErrorCode::kInvalidConfig, "no temperatures given");
    std::vector<CheckInstance> out;
    const std::size_t span = cfg.max_teachers - cfg.min_teachers + 1;
    for (std::size_t k = 0; k < cfg.instances; ++k) {
        CheckInstance inst;
        inst.teachers = cfg.min_teachers + k % span;
        inst.tau = cfg.taus[(k / span) % cfg.taus.size()];
        inst.seed = derive_seed(cfg.seed, "theory-instance", k);
        Rng rng(inst.seed);
        std::vector<double> losses(inst.teachers);
        for (double& l : losses) l = 5.0 * rng.uniform();

        const auto closed = closed_form_weights(losses, inst.tau);
        const auto numeric = numeric_minimize(losses, inst.tau).weights;
        for (std::size_t i = 0; i < closed.size(); ++i)
            inst.max_abs_diff = std::max(inst.max_abs_diff, std::abs(closed[i] - numeric[i]));

        const double f_closed = surrogate_objective(closed, losses, inst.tau);
        double worst = -INFINITY;
        auto probe = [&](const std::vector<double>& alpha) {
            worst = std::max(worst, f_closed - surrogate_objective(alpha, losses, inst.tau));
            ++inst.probes;
        };
        std::vector<double> alpha(inst.teachers);
        for (std::size_t p = 0; p < cfg.random_probes; ++p) {
            double s = 0.0;
            for (double& v : alpha) {
                v = -std::log(1.0 - rng.uniform());
                s += v;
            }
            for (double& v : alpha) v /= s;
            probe(alpha);
        }
        for (std::size_t j = 0; j < inst.teachers; ++j) {
            std::fill(alpha.begin(), alpha.end(), 0.0);
            alpha[j] = 1.0;
            probe(alpha);
        }
        std::fill(alpha.begin(), alpha.end(), 1.0 / static_cast<double>(inst.teachers));
        probe(alpha);

        inst.worst_objective_gap = worst;
        inst.passed = inst.max_abs_diff <= cfg.weight_tol && worst <= cfg.objective_slack;
        out.push_back(inst);
    }
    return out;
}

}  // namespace seca::theory
