#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "quip/matrix.hpp"
#include "quip/rounding.hpp"

namespace quip {

struct LossReport {
    double      proxy_loss = 0.0;      // against the damped H
    double      proxy_loss_raw = 0.0;  // against the raw H
    double      trace_d = 0.0;
    double      trace_h = 0.0;
    double      mu_h = 0.0;
    double      mu_w = 0.0;
    long long   clamp_count = 0;
    std::string method;
    int         bits = 0;
    uint64_t    seed = 0;
};

struct HessianStats {
    double frac_rank_abs = 0.0;     // fraction of eigenvalues > 1e-10 * lambda_max
    double frac_rank_approx = 0.0;  // fraction of eigenvalues > 0.01 * lambda_max
    double trace_ratio = 0.0;       // tr(D) / tr(H)
};

// tr((W_hat - W) H (W_hat - W)^T)
double proxy_loss(const Matrix & w, const Matrix & w_hat, const Matrix & h);

enum class AvgLossMethod { Nearest, Stochastic, LdlqNearest, LdlqStochastic };

struct McEstimate {
    double mean = 0.0;
    double stderr_of_mean = 0.0;
    int    trials = 0;
};

// Monte Carlo average proxy loss over W ~ Unif[0,1]^(m x n), rounding to the
// integer lattice (clamp disabled, matching the closed-form setting).
McEstimate estimate_avg_loss(AvgLossMethod method, const Matrix & h, std::size_t m, int trials, uint64_t seed);

// i.i.d. entries 0.5 - eps or 0.5 + eps with equal probability.
Matrix worst_case_weights(std::size_t m, std::size_t n, double eps, uint64_t seed);

// Adversarial witness for the LDLQ worst case: W is built so that every
// pre-rounding value in the feedback recurrence lands at exactly 0.5 +- eps,
// which makes the integer-lattice LDLQ loss exactly m (1/2 - eps)^2 tr(D).
Matrix worst_case_adaptive(std::size_t m, std::size_t n, const Matrix & u_feedback, double eps, uint64_t seed);

// Weight/Hessian pair where clamped LDLQ loses to nearest rounding on a
// finite grid. H is validated PSD before returning.
std::pair<Matrix, Matrix> make_counterexample(std::size_t n, std::size_t d, double c);

HessianStats hessian_stats(const Matrix & h);

struct TraceBoundAudit {
    double lhs = 0.0;  // tr(D)
    double rhs = 0.0;  // (mu^2 / n) tr(H^(1/2))^2
    double mu = 0.0;
    bool   holds = false;
};

TraceBoundAudit audit_trace_bound(const Matrix & h);

}  // namespace quip
