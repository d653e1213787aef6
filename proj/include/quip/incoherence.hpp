#pragma once

#include <cstdint>
#include <string>

#include "quip/layer.hpp"
#include "quip/linalg.hpp"
#include "quip/matrix.hpp"
#include "quip/rounding.hpp"

namespace quip {

struct PreprocessResult {
    Matrix          w;  // real-valued, in [0, 2^b-1]
    Matrix          h;  // fully processed proxy Hessian
    IncoherenceMeta meta;
    long long       range_clamp_count = 0;  // entries clamped by the [0, 2^b-1] range map
    bool            d_tilde_floored = false;
    double          mu_w_pre_scale = 0.0;   // incoherence of W after transforms, before the range map
};

// Seeded two-factor rotations shared by preprocess, postprocess and the
// clamp-safe path.
std::pair<KroneckerOrthogonal, KroneckerOrthogonal> sample_transform_pair(uint64_t seed, std::size_t m,
                                                                          std::size_t n);

// Damping, diagonal rescaling, seeded permutations, two-factor Kronecker
// rotation, and the incoherence-based range map, in that order.
PreprocessResult preprocess(const Matrix & w, const Matrix & h, int bits, double rho, double alpha,
                            uint64_t seed, bool incoherence_enabled = true);

// Inverse of preprocess for a rounded matrix on the grid.
Matrix postprocess(const Matrix & w_hat, const IncoherenceMeta & meta);

// sqrt(n) * max |Q_ij| over the eigenvector matrix of H.
double mu_hessian(const Matrix & h);

// max |W_ij| * sqrt(mn) / ||W||_F.
double mu_weights(const Matrix & w);

enum class Method { Ldlq, LdlqRg, Greedy, Near, Stoch };

Method      method_from_string(const std::string & s);
const char * method_name(Method m);

struct QuipOptions {
    int        bits = 2;
    double     rho = 2.4;
    double     alpha = 0.01;
    uint64_t   seed = 0;
    Method     method = Method::Ldlq;
    Subroutine subroutine = Subroutine::Nearest;
    bool       incoherence = true;
    int        passes = 10;
    int        threads = 1;
};

struct QuipResult {
    QuantizedLayer layer;
    Matrix         w_hat;                 // de-quantized weights
    double         proxy_loss_damped = 0.0;  // against H + damping
    double         proxy_loss_raw = 0.0;     // against the raw input H
    double         mu_h_processed = 0.0;     // only measured when requested
    double         mu_w_processed = 0.0;
    long long      range_clamp_count = 0;    // preprocess range map
    long long      round_clamp_count = 0;    // grid clamp during rounding
};

// Full pipeline: preprocess -> LDL of processed H -> rounding method ->
// postprocess. measure_mu additionally records incoherence of the processed
// matrices (costs an eigendecomposition).
QuipResult quip(const Matrix & w, const Matrix & h, const QuipOptions & opts, bool measure_mu = false);

// De-quantize a stored layer (dispatches on meta.map).
Matrix dequantize(const QuantizedLayer & layer);

}  // namespace quip
