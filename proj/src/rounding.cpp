#include "quip/rounding.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <thread>
#include <vector>

namespace quip {

namespace {

void check_bits(int bits) {
    if (bits < 2 || bits > 16) {
        throw DataError("bits must lie in [2,16]");
    }
}

double grid_max(int bits) { return static_cast<double>((1u << bits) - 1); }

// Round half away from zero, no clamp.
double round_away(double x) { return std::floor(std::fabs(x) + 0.5) * (x < 0.0 ? -1.0 : 1.0); }

// Stochastic rounding to the adjacent integers of x, no clamp.
double stoch_away(double x, Rng & rng) {
    const double f    = std::floor(x);
    const double frac = x - f;
    if (frac == 0.0) {
        return f;
    }
    return f + (rng.next_unit() < frac ? 1.0 : 0.0);
}

struct KernelArgs {
    const Matrix & base;       // per-column rounding targets (V in the greedy form, W otherwise)
    const Matrix & residual;   // residual source: feedback uses residual - w_hat
    const Matrix & u;          // strictly upper feedback, n x n
    const RoundingConfig & cfg;
    Matrix *       out;
    Matrix *       eta;        // may be null
    long long *    clamp_fires;
    long long *    out_of_range;
};

// One row of the recurrence w_hat_k = Q(base_k + (residual - w_hat) U_k).
// Feedback is accumulated by error propagation along row k of U, which visits
// the same additions as the column-dot form in the same order.
void kernel_row(const KernelArgs & a, std::size_t r, std::vector<double> & v) {
    const std::size_t n  = a.base.cols;
    const double      hi = grid_max(a.cfg.bits);
    const bool        stoch = a.cfg.subroutine == Subroutine::Stochastic;
    Rng               rng = Rng(a.cfg.seed, 0).derive(r);

    std::memcpy(v.data(), a.base.row(r), n * sizeof(double));
    const double * wr   = a.residual.row(r);
    double *       outr = a.out->row(r);
    double *       etar = a.eta ? a.eta->row(r) : nullptr;

    for (std::size_t k = 0; k < n; ++k) {
        const double val = v[k];
        const double q   = stoch ? stoch_away(val, rng) : round_away(val);
        double       res = q;
        if (a.cfg.clamp_to_grid) {
            res = std::clamp(q, 0.0, hi);
        }
        if (q < 0.0 || q > hi) {
            ++*a.out_of_range;
            if (a.cfg.clamp_to_grid) {
                ++*a.clamp_fires;
            }
        }
        outr[k] = res;
        if (etar) {
            etar[k] = q - val;
        }
        const double fb = wr[k] - res;
        if (fb != 0.0 && k + 1 < n) {
            const double * uk = a.u.row(k);
            for (std::size_t j = k + 1; j < n; ++j) {
                v[j] += fb * uk[j];
            }
        }
    }
}

Matrix feedback_kernel(const Matrix & base, const Matrix & residual, const Matrix & u,
                       const RoundingConfig & cfg, RoundingTrace * trace) {
    check_bits(cfg.bits);
    if (!base.same_shape(residual)) {
        throw DataError("rounding kernel: base/residual shape mismatch");
    }
    if (u.rows != base.cols || u.cols != base.cols) {
        throw DataError("rounding kernel: feedback matrix must be n x n");
    }
    const std::size_t m = base.rows;
    const std::size_t n = base.cols;

    Matrix out(m, n);
    if (trace) {
        trace->eta = Matrix(m, n);
        trace->clamp_fires = 0;
        trace->pre_round_out_of_range = 0;
    }

    const int nthreads = std::max(1, cfg.threads);
    if (nthreads == 1 || m < 2) {
        long long  fires = 0, oor = 0;
        KernelArgs args{base, residual, u, cfg, &out, trace ? &trace->eta : nullptr, &fires, &oor};
        std::vector<double> v(n);
        for (std::size_t r = 0; r < m; ++r) {
            kernel_row(args, r, v);
        }
        if (trace) {
            trace->clamp_fires = fires;
            trace->pre_round_out_of_range = oor;
        }
        return out;
    }

    // Rows are independent and carry per-row RNG streams, so any partition
    // yields bit-identical output.
    const int               workers = static_cast<int>(std::min<std::size_t>(nthreads, m));
    std::vector<long long>  fires(workers, 0), oors(workers, 0);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&, t]() {
            KernelArgs args{base, residual, u, cfg, &out, trace ? &trace->eta : nullptr, &fires[t], &oors[t]};
            std::vector<double> v(n);
            for (std::size_t r = t; r < m; r += workers) {
                kernel_row(args, r, v);
            }
        });
    }
    for (auto & th : pool) {
        th.join();
    }
    if (trace) {
        for (int t = 0; t < workers; ++t) {
            trace->clamp_fires += fires[t];
            trace->pre_round_out_of_range += oors[t];
        }
    }
    return out;
}

// Strictly-upper check used by the public entry point.
void require_strictly_upper(const Matrix & u) {
    for (std::size_t i = 0; i < u.rows; ++i) {
        for (std::size_t j = 0; j <= i && j < u.cols; ++j) {
            if (u.at(i, j) != 0.0) {
                throw DataError("feedback matrix must be strictly upper triangular");
            }
        }
    }
}

// Lower Cholesky with zero-pivot tolerance: M = L L^T, rows of L zeroed where
// the pivot collapses.
Matrix cholesky_lower(const Matrix & m) {
    const std::size_t n = m.rows;
    Matrix            l(n, n);
    const double      tol = 1e-12 * trace(m) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = m.at(i, j);
            for (std::size_t k = 0; k < j; ++k) {
                acc -= l.at(i, k) * l.at(j, k);
            }
            if (i == j) {
                l.at(i, i) = acc > tol ? std::sqrt(acc) : 0.0;
            } else {
                l.at(i, j) = l.at(j, j) > 0.0 ? acc / l.at(j, j) : 0.0;
            }
        }
    }
    return l;
}

}  // namespace

double q_near(double x, int bits) {
    check_bits(bits);
    return std::clamp(round_away(x), 0.0, grid_max(bits));
}

double q_stoch(double x, int bits, Rng & rng) {
    check_bits(bits);
    return stoch_away(std::clamp(x, 0.0, grid_max(bits)), rng);
}

Matrix round_with_linear_feedback(const Matrix & w, const Matrix & u, const RoundingConfig & cfg,
                                  RoundingTrace * trace) {
    require_strictly_upper(u);
    return feedback_kernel(w, w, u, cfg, trace);
}

Matrix ldlq(const Matrix & w, const Matrix & h, const RoundingConfig & cfg, RoundingTrace * trace) {
    if (h.rows != w.cols || h.cols != w.cols) {
        throw DataError("ldlq: H must be n x n for m x n weights");
    }
    const LdlFactors f = ldl_decompose(h);
    return feedback_kernel(w, w, f.u_strict, cfg, trace);
}

Matrix optq_reference(const Matrix & w, const Matrix & h, const RoundingConfig & cfg) {
    check_bits(cfg.bits);
    if (h.rows != w.cols || h.cols != w.cols) {
        throw DataError("optq_reference: H must be n x n for m x n weights");
    }
    const std::size_t n = w.cols;
    const std::size_t m = w.rows;

    // pinv(H) via eigendecomposition, cutoff 1e-10 * lambda_max
    const EigResult eig = sym_eig(h);
    const double    lmax = eig.lambda.empty() ? 0.0 : std::max(eig.lambda.front(), 0.0);
    const double    cut = 1e-10 * lmax;
    Matrix          hinv(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        if (eig.lambda[k] <= cut) {
            continue;
        }
        const double ilam = 1.0 / eig.lambda[k];
        for (std::size_t i = 0; i < n; ++i) {
            const double scaled = ilam * eig.q.at(i, k);
            if (scaled == 0.0) {
                continue;
            }
            double * hv = hinv.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                hv[j] += scaled * eig.q.at(j, k);
            }
        }
    }

    // upper factor S with pinv(H) = S^T S
    const Matrix s = transpose(cholesky_lower(hinv));

    const double hi = grid_max(cfg.bits);
    const bool   stoch = cfg.subroutine == Subroutine::Stochastic;
    Matrix       out(m, n);
    std::vector<double> work(n);
    for (std::size_t r = 0; r < m; ++r) {
        Rng rng = Rng(cfg.seed, 0).derive(r);
        std::memcpy(work.data(), w.row(r), n * sizeof(double));
        double * outr = out.row(r);
        for (std::size_t t = 0; t < n; ++t) {
            const double val = work[t];
            double       q = stoch ? stoch_away(val, rng) : round_away(val);
            if (cfg.clamp_to_grid) {
                q = std::clamp(q, 0.0, hi);
            }
            outr[t] = q;
            const double stt = s.at(t, t);
            if (stt <= 0.0) {
                continue;
            }
            const double err = (val - q) / stt;
            const double * st = s.row(t);
            for (std::size_t j = t + 1; j < n; ++j) {
                work[j] -= err * st[j];
            }
        }
    }
    return out;
}

Matrix greedy_pass(const Matrix & w, const Matrix & h, const RoundingConfig & cfg, const Matrix & w_init) {
    if (h.rows != w.cols || h.cols != w.cols) {
        throw DataError("greedy_pass: H must be n x n for m x n weights");
    }
    if (!w.same_shape(w_init)) {
        throw DataError("greedy_pass: w_init shape mismatch");
    }
    const std::size_t n = w.cols;
    for (std::size_t j = 0; j < n; ++j) {
        if (h.at(j, j) == 0.0) {
            throw DataError("greedy_pass: zero diagonal entry in H");
        }
    }

    // U = (H o M) diag(H)^-1 (strictly upper mask)
    Matrix u(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            u.at(i, j) = h.at(i, j) / h.at(j, j);
        }
    }

    // V = W - (W_init - W)(H o M^T) diag(H)^-1, skipped when w_init == w
    Matrix base = w;
    if (!(w_init == w)) {
        const std::size_t m = w.rows;
        for (std::size_t r = 0; r < m; ++r) {
            const double * wr = w.row(r);
            const double * ir = w_init.row(r);
            double *       br = base.row(r);
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t i = j + 1; i < n; ++i) {
                    acc += (ir[i] - wr[i]) * h.at(i, j);
                }
                br[j] = wr[j] - acc / h.at(j, j);
            }
        }
    }

    // Coordinate minimization is exact for the quadratic, so the subroutine is
    // always nearest here.
    RoundingConfig near_cfg = cfg;
    near_cfg.subroutine = Subroutine::Nearest;
    return feedback_kernel(base, w, u, near_cfg, nullptr);
}

Matrix greedy(const Matrix & w, const Matrix & h, const RoundingConfig & cfg, const Matrix & w_init, int passes) {
    if (passes < 1) {
        throw DataError("greedy: passes must be >= 1");
    }
    Matrix cur = w_init;
    for (int p = 0; p < passes; ++p) {
        Matrix next = greedy_pass(w, h, cfg, cur);
        if (next == cur) {
            break;
        }
        cur = std::move(next);
    }
    return cur;
}

Matrix ldlq_rg(const Matrix & w, const Matrix & h, const RoundingConfig & cfg, int passes) {
    if (h.rows != w.cols || h.cols != w.cols) {
        throw DataError("ldlq_rg: H must be n x n for m x n weights");
    }
    const std::size_t n = w.cols;

    // stable order by descending diag(H)
    std::vector<uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = static_cast<uint32_t>(i);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](uint32_t a, uint32_t b) { return h.at(a, a) > h.at(b, b); });

    const Matrix wp = apply_col_permutation(w, order);
    Matrix       hp(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            hp.at(i, j) = h.at(order[i], order[j]);
        }
    }

    Matrix qp = ldlq(wp, hp, cfg);
    Matrix q  = apply_col_permutation(qp, invert_permutation(order));
    return greedy(w, h, cfg, q, passes);
}

}  // namespace quip
