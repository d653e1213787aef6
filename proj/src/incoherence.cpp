#include "quip/incoherence.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "quip/analysis.hpp"

namespace quip {

namespace {

// Stream ids hanging off the master seed; keeps every consumer of randomness
// on a disjoint stream.
enum Stream : uint64_t {
    kRowPerm = 1,
    kColPerm = 2,
    kLeftTransform = 3,
    kRightTransform = 4,
};

Matrix damped(const Matrix & h, double alpha) {
    Matrix out = h;
    double mean_diag = 0.0;
    for (std::size_t i = 0; i < h.rows; ++i) {
        mean_diag += h.at(i, i);
    }
    mean_diag /= static_cast<double>(h.rows);
    for (std::size_t i = 0; i < h.rows; ++i) {
        out.at(i, i) += alpha * mean_diag;
    }
    return out;
}

}  // namespace

std::pair<KroneckerOrthogonal, KroneckerOrthogonal> sample_transform_pair(uint64_t seed, std::size_t m,
                                                                          std::size_t n) {
    return {sample_kron_orthogonal(m, Rng(seed, kLeftTransform)),
            sample_kron_orthogonal(n, Rng(seed, kRightTransform))};
}

PreprocessResult preprocess(const Matrix & w, const Matrix & h, int bits, double rho, double alpha,
                            uint64_t seed, bool incoherence_enabled) {
    if (bits < 2 || bits > 16) {
        throw DataError("preprocess: bits must lie in [2,16]");
    }
    if (alpha < 0.0) {
        throw DataError("preprocess: alpha must be non-negative");
    }
    if (!(rho > 0.0)) {
        throw DataError("preprocess: rho must be positive");
    }
    if (h.rows != w.cols || h.cols != w.cols) {
        throw DataError("preprocess: H must be n x n for m x n weights");
    }
    require_finite(w, "preprocess weights");
    require_symmetric(h, "preprocess hessian");

    const std::size_t m = w.rows;
    const std::size_t n = w.cols;

    PreprocessResult res;
    res.h = damped(h, alpha);
    res.w = w;

    IncoherenceMeta & meta = res.meta;
    meta.seed = seed;
    meta.bits = bits;
    meta.alpha = alpha;
    meta.rho = rho;
    meta.map = AffineMap::Standard;
    meta.incoherence_enabled = incoherence_enabled;
    meta.d_tilde.assign(n, 1.0);
    meta.row_perm.resize(m);
    meta.col_perm.resize(n);
    for (std::size_t i = 0; i < m; ++i) {
        meta.row_perm[i] = static_cast<uint32_t>(i);
    }
    for (std::size_t j = 0; j < n; ++j) {
        meta.col_perm[j] = static_cast<uint32_t>(j);
    }

    if (incoherence_enabled) {
        // diagonal rescaler (H_jj / ||W_:,j||^2)^(1/4), floored denominator
        for (std::size_t j = 0; j < n; ++j) {
            if (!(res.h.at(j, j) > 0.0)) {
                throw DataError("preprocess: diag(H) must be positive after damping");
            }
            double col2 = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                col2 += res.w.at(i, j) * res.w.at(i, j);
            }
            if (col2 < 1e-8) {
                col2 = 1e-8;
                res.d_tilde_floored = true;
            }
            meta.d_tilde[j] = std::pow(res.h.at(j, j) / col2, 0.25);
        }
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                res.w.at(i, j) *= meta.d_tilde[j];
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                res.h.at(i, j) /= meta.d_tilde[i] * meta.d_tilde[j];
            }
        }

        meta.row_perm = random_permutation(m, Rng(seed, kRowPerm));
        meta.col_perm = random_permutation(n, Rng(seed, kColPerm));
        res.w = apply_col_permutation(apply_row_permutation(res.w, meta.row_perm), meta.col_perm);
        res.h = apply_col_permutation(apply_row_permutation(res.h, meta.col_perm), meta.col_perm);

        const auto [u, v] = sample_transform_pair(seed, m, n);
        meta.u_shapes = {static_cast<uint32_t>(u.left.rows), static_cast<uint32_t>(u.right.rows)};
        meta.v_shapes = {static_cast<uint32_t>(v.left.rows), static_cast<uint32_t>(v.right.rows)};
        res.w = kron_apply(u, kron_apply(v, res.w, Side::Right, true), Side::Left, false);
        res.h = kron_apply(v, kron_apply(v, res.h, Side::Right, true), Side::Left, false);
    } else {
        meta.u_shapes = {0, 0};
        meta.v_shapes = {0, 0};
    }

    res.mu_w_pre_scale = mu_weights(res.w);

    const double wnorm = frob_norm(res.w);
    if (!(wnorm > 0.0)) {
        throw DataError("preprocess: weights are identically zero");
    }
    const double s = rho * wnorm / std::sqrt(static_cast<double>(m) * static_cast<double>(n));
    meta.scale = s;

    const double hi = static_cast<double>((1u << bits) - 1);
    for (double & x : res.w.data) {
        x = 0.5 * (x / s + 1.0) * hi;
        if (x < 0.0) {
            x = 0.0;
            ++res.range_clamp_count;
        } else if (x > hi) {
            x = hi;
            ++res.range_clamp_count;
        }
    }
    return res;
}

Matrix postprocess(const Matrix & w_hat, const IncoherenceMeta & meta) {
    const std::size_t m = w_hat.rows;
    const std::size_t n = w_hat.cols;
    if (meta.d_tilde.size() != n || meta.row_perm.size() != m || meta.col_perm.size() != n) {
        throw DataError("postprocess: meta does not match matrix shape");
    }
    const double hi = static_cast<double>((1u << meta.bits) - 1);

    Matrix w = w_hat;
    if (meta.map == AffineMap::Standard) {
        for (double & x : w.data) {
            x = meta.scale * ((x / hi) * 2.0 - 1.0);
        }
    } else {
        const double span = static_cast<double>((1u << meta.bits) - 3);
        for (double & x : w.data) {
            x = meta.scale * (2.0 * (x - 1.0) / span - 1.0);
        }
    }

    if (meta.incoherence_enabled) {
        const auto [u, v] = sample_transform_pair(meta.seed, m, n);
        if (meta.u_shapes != std::pair<uint32_t, uint32_t>{static_cast<uint32_t>(u.left.rows),
                                                           static_cast<uint32_t>(u.right.rows)} ||
            meta.v_shapes != std::pair<uint32_t, uint32_t>{static_cast<uint32_t>(v.left.rows),
                                                           static_cast<uint32_t>(v.right.rows)}) {
            throw DataError("postprocess: stored Kronecker shapes disagree with the sampler");
        }
        w = kron_apply(v, kron_apply(u, w, Side::Left, true), Side::Right, false);
        w = apply_col_permutation(apply_row_permutation(w, invert_permutation(meta.row_perm)),
                                  invert_permutation(meta.col_perm));
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                w.at(i, j) /= meta.d_tilde[j];
            }
        }
    }
    return w;
}

double mu_hessian(const Matrix & h) {
    const EigResult eig = sym_eig(h);
    return std::sqrt(static_cast<double>(h.rows)) * max_abs(eig.q);
}

double mu_weights(const Matrix & w) {
    const double norm = frob_norm(w);
    if (!(norm > 0.0)) {
        throw DataError("mu_weights: zero matrix");
    }
    return max_abs(w) * std::sqrt(static_cast<double>(w.rows) * static_cast<double>(w.cols)) / norm;
}

Method method_from_string(const std::string & s) {
    if (s == "ldlq") return Method::Ldlq;
    if (s == "ldlq_rg") return Method::LdlqRg;
    if (s == "greedy") return Method::Greedy;
    if (s == "near") return Method::Near;
    if (s == "stoch") return Method::Stoch;
    throw DataError("unknown method: " + s);
}

const char * method_name(Method m) {
    switch (m) {
        case Method::Ldlq: return "ldlq";
        case Method::LdlqRg: return "ldlq_rg";
        case Method::Greedy: return "greedy";
        case Method::Near: return "near";
        case Method::Stoch: return "stoch";
    }
    return "?";
}

QuipResult quip(const Matrix & w, const Matrix & h, const QuipOptions & opts, bool measure_mu) {
    PreprocessResult pre = preprocess(w, h, opts.bits, opts.rho, opts.alpha, opts.seed, opts.incoherence);

    RoundingConfig cfg;
    cfg.bits = opts.bits;
    cfg.subroutine = opts.subroutine;
    cfg.seed = opts.seed;
    cfg.clamp_to_grid = true;
    cfg.threads = opts.threads;

    RoundingTrace trace;
    Matrix        rounded;
    switch (opts.method) {
        case Method::Near: {
            RoundingConfig c = cfg;
            c.subroutine = Subroutine::Nearest;
            rounded = round_with_linear_feedback(pre.w, Matrix(w.cols, w.cols), c, &trace);
            break;
        }
        case Method::Stoch: {
            RoundingConfig c = cfg;
            c.subroutine = Subroutine::Stochastic;
            rounded = round_with_linear_feedback(pre.w, Matrix(w.cols, w.cols), c, &trace);
            break;
        }
        case Method::Ldlq:
            rounded = ldlq(pre.w, pre.h, cfg, &trace);
            break;
        case Method::LdlqRg:
            rounded = ldlq_rg(pre.w, pre.h, cfg, opts.passes);
            break;
        case Method::Greedy:
            rounded = greedy(pre.w, pre.h, cfg, pre.w, opts.passes);
            break;
    }

    QuipResult res;
    res.layer.rows = w.rows;
    res.layer.cols = w.cols;
    res.layer.bits = opts.bits;
    res.layer.meta = pre.meta;
    res.layer.codes.resize(w.rows * w.cols);
    for (std::size_t i = 0; i < rounded.data.size(); ++i) {
        res.layer.codes[i] = static_cast<uint16_t>(rounded.data[i]);
    }

    res.w_hat = postprocess(rounded, pre.meta);
    res.range_clamp_count = pre.range_clamp_count;
    res.round_clamp_count = trace.clamp_fires;
    res.mu_w_processed = pre.mu_w_pre_scale;
    if (measure_mu) {
        res.mu_h_processed = mu_hessian(pre.h);
    }

    Matrix h_damped = h;
    {
        double mean_diag = 0.0;
        for (std::size_t i = 0; i < h.rows; ++i) {
            mean_diag += h.at(i, i);
        }
        mean_diag /= static_cast<double>(h.rows);
        for (std::size_t i = 0; i < h.rows; ++i) {
            h_damped.at(i, i) += opts.alpha * mean_diag;
        }
    }
    res.proxy_loss_damped = proxy_loss(w, res.w_hat, h_damped);
    res.proxy_loss_raw    = proxy_loss(w, res.w_hat, h);
    return res;
}

Matrix dequantize(const QuantizedLayer & layer) {
    return postprocess(layer.codes_as_matrix(), layer.meta);
}

}  // namespace quip
