#pragma once

#include <cstdint>

#include "quip/layer.hpp"
#include "quip/matrix.hpp"

namespace quip {

struct ConstrainedFactor {
    Matrix r;           // unit upper triangular
    double c = 0.0;
    double objective = 0.0;   // tr(H R^T R)
    int    solver_iters = 0;
    double residual = 0.0;    // max column-norm constraint violation at return
};

// minimize tr(H R^T R) over unit upper triangular R subject to
// e_i^T R^T R e_i <= 1 + c. Coordinate dual ascent with per-column bisection;
// the unconstrained minimizer (c large) is the inverse LDL factor and attains
// tr(D).
ConstrainedFactor solve_constrained(const Matrix & h, double c, double tol = 1e-8, int max_iters = 200);

enum class RangeNorm {
    Frobenius,  // scale from ||W||_F and the incoherence tail bound (default)
    Infinity,   // scale from max|W| after rotation; deterministic in-range input
};

struct ClampSafeStats {
    long long pre_round_out_of_range = 0;  // rounded-but-unclamped values off the grid
    long long clamp_fires = 0;
    long long scale_out_of_range = 0;      // scaled entries outside [1, 2^b-2]
    double    proxy_loss = 0.0;            // against the input H
    double    c = 0.0;
    double    objective = 0.0;
    int       solver_iters = 0;
    double    scale = 0.0;
};

struct ClampSafeResult {
    QuantizedLayer layer;
    Matrix         w_hat;
    ClampSafeStats stats;
};

// Two-factor rotations, the (2^b-3)/2 range map, the constrained factor with
// c = 2 / log(4mn/delta), and stochastic rounding with feedback R^-1 - I.
ClampSafeResult quantize_clamp_safe(const Matrix & w, const Matrix & h, int bits, double delta,
                                    uint64_t seed, RangeNorm norm = RangeNorm::Frobenius);

}  // namespace quip
