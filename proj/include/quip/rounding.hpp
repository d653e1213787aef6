#pragma once

#include <cstdint>

#include "quip/linalg.hpp"
#include "quip/matrix.hpp"

namespace quip {

enum class Subroutine { Nearest, Stochastic };

struct RoundingConfig {
    int        bits = 4;                          // grid {0 .. 2^b-1}, b in [2,16]
    Subroutine subroutine = Subroutine::Nearest;
    uint64_t   seed = 0;                          // stochastic subroutine only
    bool       clamp_to_grid = true;              // false = round to the integer lattice
    int        threads = 1;                       // row-parallel fan-out; output invariant to it
};

// Per-call diagnostics: eta is the pre-clamp rounding error Q(v) - v, and
// clamp_fires counts entries the grid clamp actually changed.
struct RoundingTrace {
    Matrix    eta;
    long long clamp_fires = 0;
    long long pre_round_out_of_range = 0;  // rounded-but-unclamped value left the grid
};

// Nearest grid value; ties round half away from zero before clamping.
double q_near(double x, int bits);

// Unbiased rounding: E[result] = clamp(x, 0, 2^b-1), up-probability frac(x).
double q_stoch(double x, int bits, Rng & rng);

// W_hat = Q(W + (W - W_hat) U), column-sequential with strictly upper U.
Matrix round_with_linear_feedback(const Matrix & w, const Matrix & u, const RoundingConfig & cfg,
                                  RoundingTrace * trace = nullptr);

// Linear feedback taken from the LDL decomposition of H.
Matrix ldlq(const Matrix & w, const Matrix & h, const RoundingConfig & cfg, RoundingTrace * trace = nullptr);

// Independent OPTQ-style implementation (error propagation through the upper
// Cholesky factor of pinv(H)); the equivalence oracle for ldlq.
Matrix optq_reference(const Matrix & w, const Matrix & h, const RoundingConfig & cfg);

// One coordinate-descent pass over the grid in LDLQ order. w_init = w gives
// the stand-alone form; otherwise w_init must already be on the grid.
Matrix greedy_pass(const Matrix & w, const Matrix & h, const RoundingConfig & cfg, const Matrix & w_init);

// Repeated greedy passes; stops early once a pass changes nothing.
Matrix greedy(const Matrix & w, const Matrix & h, const RoundingConfig & cfg, const Matrix & w_init, int passes);

// Columns reordered by descending diag(H), LDLQ, un-reorder, then greedy passes.
Matrix ldlq_rg(const Matrix & w, const Matrix & h, const RoundingConfig & cfg, int passes);

}  // namespace quip
