#include "quip/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "quip/incoherence.hpp"
#include "quip/linalg.hpp"

namespace quip {

namespace {

constexpr uint64_t kTrialStream = 6;

double round_away(double x) { return std::floor(std::fabs(x) + 0.5) * (x < 0.0 ? -1.0 : 1.0); }

}  // namespace

double proxy_loss(const Matrix & w, const Matrix & w_hat, const Matrix & h) {
    if (!w.same_shape(w_hat) || h.rows != w.cols || h.cols != w.cols) {
        throw DataError("proxy_loss: shape mismatch");
    }
    // tr(E H E^T) = sum_ij (E H)_ij E_ij
    const std::size_t m = w.rows;
    const std::size_t n = w.cols;
    double            total = 0.0;
    std::vector<double> err(n), eh(n);
    for (std::size_t r = 0; r < m; ++r) {
        const double * wr = w.row(r);
        const double * qr = w_hat.row(r);
        for (std::size_t j = 0; j < n; ++j) {
            err[j] = qr[j] - wr[j];
        }
        std::fill(eh.begin(), eh.end(), 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            const double ek = err[k];
            if (ek == 0.0) {
                continue;
            }
            const double * hk = h.row(k);
            for (std::size_t j = 0; j < n; ++j) {
                eh[j] += ek * hk[j];
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            total += eh[j] * err[j];
        }
    }
    return total;
}

McEstimate estimate_avg_loss(AvgLossMethod method, const Matrix & h, std::size_t m, int trials, uint64_t seed) {
    if (trials < 100) {
        throw DataError("estimate_avg_loss: trials must be >= 100");
    }
    require_symmetric(h, "estimate_avg_loss");
    const std::size_t n = h.rows;

    const bool uses_ldl = method == AvgLossMethod::LdlqNearest || method == AvgLossMethod::LdlqStochastic;
    Matrix     u(n, n);
    if (uses_ldl) {
        u = ldl_decompose(h).u_strict;
    }

    RoundingConfig cfg;
    cfg.bits = 16;  // irrelevant on the integer lattice
    cfg.clamp_to_grid = false;
    cfg.subroutine = (method == AvgLossMethod::Stochastic || method == AvgLossMethod::LdlqStochastic)
                         ? Subroutine::Stochastic
                         : Subroutine::Nearest;

    double sum = 0.0;
    double sum2 = 0.0;
    for (int t = 0; t < trials; ++t) {
        Rng    rng = Rng(seed, kTrialStream).derive(static_cast<uint64_t>(t));
        Matrix w(m, n);
        for (double & v : w.data) {
            v = rng.next_unit();
        }
        cfg.seed = rng.next_u64();  // per-trial rounding streams
        const Matrix q = round_with_linear_feedback(w, u, cfg);
        const double loss = proxy_loss(w, q, h);
        sum += loss;
        sum2 += loss * loss;
    }
    McEstimate est;
    est.trials = trials;
    est.mean = sum / trials;
    const double var = std::max(0.0, (sum2 - sum * sum / trials) / (trials - 1.0));
    est.stderr_of_mean = std::sqrt(var / trials);
    return est;
}

Matrix worst_case_weights(std::size_t m, std::size_t n, double eps, uint64_t seed) {
    if (!(eps > 0.0) || !(eps < 0.5)) {
        throw DataError("worst_case_weights: eps must lie in (0, 0.5)");
    }
    Rng    rng(seed, kTrialStream);
    Matrix w(m, n);
    for (double & v : w.data) {
        v = 0.5 + ((rng.next_u64() & 1u) ? eps : -eps);
    }
    return w;
}

Matrix worst_case_adaptive(std::size_t m, std::size_t n, const Matrix & u_feedback, double eps, uint64_t seed) {
    if (!(eps > 0.0) || !(eps < 0.5)) {
        throw DataError("worst_case_adaptive: eps must lie in (0, 0.5)");
    }
    if (u_feedback.rows != n || u_feedback.cols != n) {
        throw DataError("worst_case_adaptive: feedback matrix must be n x n");
    }
    Matrix w(m, n);
    std::vector<double> fb(n);
    for (std::size_t r = 0; r < m; ++r) {
        Rng rng = Rng(seed, kTrialStream).derive(r);
        std::fill(fb.begin(), fb.end(), 0.0);
        double * wr = w.row(r);
        for (std::size_t k = 0; k < n; ++k) {
            const double xi = (rng.next_u64() & 1u) ? eps : -eps;
            wr[k] = 0.5 + xi - fb[k];
            const double v = 0.5 + xi;  // the pre-rounding value by construction
            const double q = round_away(v);
            const double res = wr[k] - q;
            const double * uk = u_feedback.row(k);
            for (std::size_t j = k + 1; j < n; ++j) {
                fb[j] += res * uk[j];
            }
        }
    }
    return w;
}

std::pair<Matrix, Matrix> make_counterexample(std::size_t n, std::size_t d, double c) {
    if (n < 3) {
        throw DataError("make_counterexample: n must be >= 3");
    }
    Matrix h(n, n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        h.at(i, i) += 1.0;
    }
    h.at(n - 1, n - 1) = 1.0;
    for (std::size_t j = 1; j + 1 < n; ++j) {
        h.at(0, j) += 2.0 * c;
        h.at(j, 0) += 2.0 * c;
    }
    h.at(0, n - 1) += c;
    h.at(n - 1, 0) += c;
    h.at(0, 0) += 4.0 * c + static_cast<double>(n) * c * c;

    const EigResult eig = sym_eig(h);
    const double    floor = -1e-8 * trace(h) / static_cast<double>(n);
    if (eig.lambda.back() < floor) {
        throw NumericalError("make_counterexample: perturbed H is not PSD");
    }

    // columns alternate 0.499 / 0.501
    Matrix w(d, n);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            w.at(i, j) = 0.499 + 0.002 * static_cast<double>(j % 2);
        }
    }
    return {std::move(w), std::move(h)};
}

HessianStats hessian_stats(const Matrix & h) {
    const EigResult eig = sym_eig(h);
    const std::size_t n = h.rows;
    const double      lmax = eig.lambda.empty() ? 0.0 : std::max(eig.lambda.front(), 0.0);

    HessianStats stats;
    if (lmax <= 0.0) {
        stats.trace_ratio = 1.0;  // zero matrix: D = H = 0
        return stats;
    }
    std::size_t abs_count = 0;
    std::size_t approx_count = 0;
    for (double lam : eig.lambda) {
        if (lam > 1e-10 * lmax) {
            ++abs_count;
        }
        if (lam > 0.01 * lmax) {
            ++approx_count;
        }
    }
    stats.frac_rank_abs = static_cast<double>(abs_count) / static_cast<double>(n);
    stats.frac_rank_approx = static_cast<double>(approx_count) / static_cast<double>(n);
    stats.trace_ratio = ldl_decompose(h).trace_d() / trace(h);
    return stats;
}

TraceBoundAudit audit_trace_bound(const Matrix & h) {
    require_symmetric(h, "audit_trace_bound");
    const std::size_t n = h.rows;
    const EigResult   eig = sym_eig(h);

    TraceBoundAudit audit;
    audit.mu = std::sqrt(static_cast<double>(n)) * max_abs(eig.q);
    double tr_sqrt = 0.0;
    for (double lam : eig.lambda) {
        if (lam > 0.0) {
            tr_sqrt += std::sqrt(lam);
        }
    }
    audit.lhs = ldl_decompose(h).trace_d();
    audit.rhs = audit.mu * audit.mu / static_cast<double>(n) * tr_sqrt * tr_sqrt;
    audit.holds = audit.lhs <= audit.rhs * (1.0 + 1e-9) + 1e-12;
    return audit;
}

}  // namespace quip
