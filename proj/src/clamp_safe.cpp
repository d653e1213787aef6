#include "quip/clamp_safe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "quip/analysis.hpp"
#include "quip/incoherence.hpp"
#include "quip/linalg.hpp"
#include "quip/rounding.hpp"

namespace quip {

namespace {

// Inverse of a unit upper triangular matrix (unit upper again).
Matrix invert_unit_upper(const Matrix & u) {
    const std::size_t n = u.rows;
    Matrix            inv = Matrix::identity(n);
    // back substitution per column: U x = e_j
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = j; i-- > 0;) {
            double acc = 0.0;
            for (std::size_t k = i + 1; k <= j; ++k) {
                acc += u.at(i, k) * inv.at(k, j);
            }
            inv.at(i, j) = -acc;
        }
    }
    return inv;
}

// Unit-upper factor B of M = B D B^T (LDL without forming D's inverse).
Matrix unit_upper_factor(const Matrix & m) {
    LdlFactors f = ldl_decompose(m);
    for (std::size_t i = 0; i < m.rows; ++i) {
        f.u_strict.at(i, i) = 1.0;
    }
    return f.u_strict;
}

// Column j of B^-1 where B is unit upper: solve B x = e_j.
void solve_unit_upper_col(const Matrix & b, std::size_t j, std::vector<double> & x) {
    const std::size_t n = b.rows;
    std::fill(x.begin(), x.end(), 0.0);
    x[j] = 1.0;
    for (std::size_t i = j; i-- > 0;) {
        double acc = 0.0;
        const double * bi = b.row(i);
        for (std::size_t k = i + 1; k <= j; ++k) {
            acc += bi[k] * x[k];
        }
        x[i] = -acc;
    }
}

double column_norm2_excess(const Matrix & h, const std::vector<double> & lambda, std::size_t j,
                           double c, std::vector<double> & x) {
    const std::size_t n = h.rows;
    Matrix            m = h;
    for (std::size_t i = 0; i < n; ++i) {
        m.at(i, i) += lambda[i];
    }
    const Matrix b = unit_upper_factor(m);
    solve_unit_upper_col(b, j, x);
    double s = 0.0;
    for (std::size_t i = 0; i <= j; ++i) {
        s += x[i] * x[i];
    }
    return s - 1.0 - c;
}

double objective_of(const Matrix & h, const Matrix & r) {
    // tr(R H R^T) = sum_ik (R H)_ik R_ik
    const Matrix rh = matmul(r, h);
    double       s = 0.0;
    for (std::size_t i = 0; i < r.data.size(); ++i) {
        s += rh.data[i] * r.data[i];
    }
    return s;
}

}  // namespace

ConstrainedFactor solve_constrained(const Matrix & h, double c, double tol, int max_iters) {
    require_symmetric(h, "solve_constrained");
    if (!(c > 0.0)) {
        throw DataError("solve_constrained: c must be positive");
    }
    const std::size_t n = h.rows;

    std::vector<double> lambda(n, 0.0);
    std::vector<double> x(n);

    auto factor_inverse = [&]() {
        Matrix m = h;
        for (std::size_t i = 0; i < n; ++i) {
            m.at(i, i) += lambda[i];
        }
        return invert_unit_upper(unit_upper_factor(m));
    };

    Matrix r = factor_inverse();

    auto max_violation = [&](const Matrix & rr) {
        double worst = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i <= j; ++i) {
                s += rr.at(i, j) * rr.at(i, j);
            }
            worst = std::max(worst, s - 1.0 - c);
        }
        return worst;
    };

    ConstrainedFactor best;
    best.c = c;
    best.objective = std::numeric_limits<double>::infinity();

    auto consider = [&](const Matrix & rr) {
        const double viol = max_violation(rr);
        if (viol <= tol) {
            const double obj = objective_of(h, rr);
            if (obj < best.objective) {
                best.r = rr;
                best.objective = obj;
                best.residual = viol;
            }
        }
        return viol;
    };

    double prev_obj = std::numeric_limits<double>::infinity();
    int    sweep = 0;
    for (; sweep < max_iters; ++sweep) {
        const double viol = consider(r);
        const double obj = objective_of(h, r);
        const bool   feasible = viol <= tol;
        const bool   settled = std::fabs(prev_obj - obj) <= 1e-10 * std::max(1.0, std::fabs(obj));
        if (feasible && settled) {
            break;
        }
        prev_obj = obj;

        // coordinate pass: push each violated column's multiplier to the
        // complementary-slackness point by bisection
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i <= j; ++i) {
                s += r.at(i, j) * r.at(i, j);
            }
            const double excess = s - 1.0 - c;
            if (excess <= tol && lambda[j] == 0.0) {
                continue;
            }
            double lo = 0.0;
            double hi = std::max(1.0, 2.0 * lambda[j]);
            lambda[j] = hi;
            int guard = 0;
            while (column_norm2_excess(h, lambda, j, c, x) > 0.0) {
                hi *= 4.0;
                lambda[j] = hi;
                if (++guard > 60) {
                    break;
                }
            }
            for (int it = 0; it < 48; ++it) {
                const double mid = 0.5 * (lo + hi);
                lambda[j] = mid;
                if (column_norm2_excess(h, lambda, j, c, x) > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lambda[j] = hi;
            r = factor_inverse();
        }
    }

    // feasibility polish: shrink the strictly-upper part of any column still
    // over the cap, then keep whichever feasible candidate scored best
    Matrix polished = r;
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < j; ++i) {
            s += polished.at(i, j) * polished.at(i, j);
        }
        if (s > c && s > 0.0) {
            const double scale = std::sqrt(c / s);
            for (std::size_t i = 0; i < j; ++i) {
                polished.at(i, j) *= scale;
            }
        }
    }
    consider(polished);

    if (!std::isfinite(best.objective)) {
        throw NumericalError("solve_constrained: no feasible iterate found");
    }
    best.solver_iters = sweep;
    return best;
}

ClampSafeResult quantize_clamp_safe(const Matrix & w, const Matrix & h, int bits, double delta,
                                    uint64_t seed, RangeNorm norm) {
    if (bits < 2 || bits > 16) {
        throw DataError("quantize_clamp_safe: bits must lie in [2,16]");
    }
    if (!(delta > 0.0) || !(delta < 1.0)) {
        throw DataError("quantize_clamp_safe: delta must lie in (0,1)");
    }
    if (h.rows != w.cols || h.cols != w.cols) {
        throw DataError("quantize_clamp_safe: H must be n x n for m x n weights");
    }
    require_finite(w, "quantize_clamp_safe weights");
    require_symmetric(h, "quantize_clamp_safe hessian");

    const std::size_t m = w.rows;
    const std::size_t n = w.cols;
    const double      mn = static_cast<double>(m) * static_cast<double>(n);
    const double      log_term = std::log(4.0 * mn / delta);
    const double      c = 2.0 / log_term;

    const auto [u, v] = sample_transform_pair(seed, m, n);
    Matrix w_rot = kron_apply(u, kron_apply(v, w, Side::Right, true), Side::Left, false);
    Matrix h_rot = kron_apply(v, kron_apply(v, h, Side::Right, true), Side::Left, false);

    double t = 0.0;
    if (norm == RangeNorm::Frobenius) {
        t = frob_norm(w) * std::sqrt(2.0 * log_term / mn);
    } else {
        t = max_abs(w_rot);
    }
    if (!(t > 0.0)) {
        throw DataError("quantize_clamp_safe: weights are identically zero");
    }

    const double span = static_cast<double>((1u << bits) - 3);
    ClampSafeStats stats;
    for (double & x : w_rot.data) {
        x = 0.5 * span * (x / t + 1.0) + 1.0;
        if (x < 1.0 || x > span + 1.0) {
            ++stats.scale_out_of_range;
        }
    }

    ConstrainedFactor factor = solve_constrained(h_rot, c);
    Matrix            u_fb = invert_unit_upper(factor.r);
    for (std::size_t i = 0; i < n; ++i) {
        u_fb.at(i, i) = 0.0;  // R^-1 - I
    }

    RoundingConfig cfg;
    cfg.bits = bits;
    cfg.subroutine = Subroutine::Stochastic;
    cfg.seed = seed;
    cfg.clamp_to_grid = true;

    RoundingTrace trace;
    const Matrix  rounded = round_with_linear_feedback(w_rot, u_fb, cfg, &trace);

    ClampSafeResult res;
    res.stats = stats;
    res.stats.pre_round_out_of_range = trace.pre_round_out_of_range;
    res.stats.clamp_fires = trace.clamp_fires;
    res.stats.c = c;
    res.stats.objective = factor.objective;
    res.stats.solver_iters = factor.solver_iters;
    res.stats.scale = t;

    res.layer.rows = m;
    res.layer.cols = n;
    res.layer.bits = bits;
    res.layer.codes.resize(m * n);
    for (std::size_t i = 0; i < rounded.data.size(); ++i) {
        res.layer.codes[i] = static_cast<uint16_t>(rounded.data[i]);
    }

    IncoherenceMeta & meta = res.layer.meta;
    meta.seed = seed;
    meta.bits = bits;
    meta.alpha = 0.0;
    meta.rho = 0.0;
    meta.scale = t;
    meta.map = AffineMap::ClampSafe;
    meta.incoherence_enabled = true;
    meta.u_shapes = {static_cast<uint32_t>(u.left.rows), static_cast<uint32_t>(u.right.rows)};
    meta.v_shapes = {static_cast<uint32_t>(v.left.rows), static_cast<uint32_t>(v.right.rows)};
    meta.d_tilde.assign(n, 1.0);
    meta.row_perm.resize(m);
    meta.col_perm.resize(n);
    for (std::size_t i = 0; i < m; ++i) {
        meta.row_perm[i] = static_cast<uint32_t>(i);
    }
    for (std::size_t j = 0; j < n; ++j) {
        meta.col_perm[j] = static_cast<uint32_t>(j);
    }

    res.w_hat = postprocess(rounded, meta);
    res.stats.proxy_loss = proxy_loss(w, res.w_hat, h);
    return res;
}

}  // namespace quip
