#include "quip/linalg.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstring>
#include <numeric>

namespace quip {

namespace {

// Unbiased bounded draw via rejection.
uint64_t bounded_u64(Rng & rng, uint64_t n) {
    const uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    for (;;) {
        const uint64_t x = rng.next_u64();
        if (x >= threshold) {
            return x % n;
        }
    }
}

double sign_or_one(double x) { return x < 0.0 ? -1.0 : 1.0; }

}  // namespace

LdlFactors ldl_decompose(const Matrix & h) {
    require_symmetric(h, "ldl_decompose");
    const std::size_t n = h.rows;
    Matrix            a = h;
    LdlFactors        f;
    f.u_strict = Matrix(n, n);
    f.d.assign(n, 0.0);
    const double tol = 1e-12 * trace(h) / static_cast<double>(n);

    std::vector<double> col(n);
    for (std::size_t k = n; k-- > 0;) {
        const double piv = a.at(k, k);
        if (piv <= tol) {
            continue;  // singular pivot: d_k and the U column stay zero
        }
        f.d[k] = piv;
        for (std::size_t i = 0; i < k; ++i) {
            col[i] = a.at(i, k) / piv;
            f.u_strict.at(i, k) = col[i];
        }
        for (std::size_t i = 0; i < k; ++i) {
            const double fi = col[i] * piv;
            double *     ai = a.row(i);
            for (std::size_t j = 0; j < k; ++j) {
                ai[j] -= fi * col[j];
            }
        }
    }
    return f;
}

namespace {

// Householder reduction to tridiagonal form. On return d holds the diagonal,
// e[1..n-1] the subdiagonal, and zt the transposed accumulated transform
// (row k of zt is column k of Q, with A = Q T Q^T).
void tridiagonalize(Matrix a, std::vector<double> & d, std::vector<double> & e, Matrix & zt) {
    const std::size_t n = a.rows;
    d.assign(n, 0.0);
    e.assign(n, 0.0);

    Matrix              vs(n, n);  // row i: Householder vector of step i
    std::vector<double> betas(n, 0.0);
    std::vector<double> v(n), p(n), q(n);

    for (std::size_t i = n; i-- > 1;) {
        const std::size_t m = i;  // active leading block is 0..m-1
        double            total = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            v[k] = a.at(i, k);
            total += v[k] * v[k];
        }
        double off2 = total - v[m - 1] * v[m - 1];
        if (off2 <= 0.0 || total == 0.0) {
            e[i] = v[m - 1];  // already tridiagonal at this step
            continue;
        }
        const double alpha = -sign_or_one(v[m - 1]) * std::sqrt(total);
        e[i] = alpha;
        v[m - 1] -= alpha;
        double vtv = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            vtv += v[k] * v[k];
        }
        const double beta = 2.0 / vtv;
        betas[i] = beta;
        std::memcpy(vs.row(i), v.data(), m * sizeof(double));

        // p = beta * A v over the leading block
        for (std::size_t r = 0; r < m; ++r) {
            const double * ar  = a.row(r);
            double         acc = 0.0;
            for (std::size_t k = 0; k < m; ++k) {
                acc += ar[k] * v[k];
            }
            p[r] = beta * acc;
        }
        double k_scale = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            k_scale += v[r] * p[r];
        }
        k_scale *= 0.5 * beta;
        for (std::size_t r = 0; r < m; ++r) {
            q[r] = p[r] - k_scale * v[r];
        }
        // A <- A - v q^T - q v^T on the leading block
        for (std::size_t r = 0; r < m; ++r) {
            double *     ar = a.row(r);
            const double vr = v[r];
            const double qr = q[r];
            for (std::size_t c = 0; c < m; ++c) {
                ar[c] -= vr * q[c] + qr * v[c];
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = a.at(i, i);
    }

    // zt = (H_{n-1} ... H_1)^T accumulated by left-applying reflectors in
    // descending order to the identity.
    zt = Matrix::identity(n);
    std::vector<double> w(n);
    for (std::size_t i = n; i-- > 1;) {
        if (betas[i] == 0.0) {
            continue;
        }
        const double * vi = vs.row(i);
        const std::size_t m = i;
        std::fill(w.begin(), w.end(), 0.0);
        for (std::size_t r = 0; r < m; ++r) {
            const double   vr = vi[r];
            const double * zr = zt.row(r);
            if (vr == 0.0) {
                continue;
            }
            for (std::size_t c = 0; c < n; ++c) {
                w[c] += vr * zr[c];
            }
        }
        const double beta = betas[i];
        for (std::size_t r = 0; r < m; ++r) {
            const double scale = beta * vi[r];
            double *     zr = zt.row(r);
            for (std::size_t c = 0; c < n; ++c) {
                zr[c] -= scale * w[c];
            }
        }
    }
}

// Implicit-shift QL on the tridiagonal (d, e); rows of zt accumulate the
// rotations. Throws NumericalError past the per-eigenvalue iteration cap.
void ql_implicit(std::vector<double> & d, std::vector<double> & e, Matrix & zt) {
    const std::size_t n = d.size();
    if (n == 0) {
        return;
    }
    for (std::size_t i = 1; i < n; ++i) {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    constexpr int kMaxIter = 50;
    for (std::size_t l = 0; l < n; ++l) {
        int iter = 0;
        for (;;) {
            std::size_t m = l;
            while (m + 1 < n) {
                const double dd = std::fabs(d[m]) + std::fabs(d[m + 1]);
                if (std::fabs(e[m]) <= DBL_EPSILON * dd) {
                    break;
                }
                ++m;
            }
            if (m == l) {
                break;
            }
            if (iter++ == kMaxIter) {
                throw NumericalError("sym_eig: QL iteration cap reached");
            }
            double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            double r = std::hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + (g >= 0.0 ? std::fabs(r) : -std::fabs(r)));
            double s = 1.0;
            double c = 1.0;
            double p = 0.0;
            bool   underflow = false;
            for (std::size_t i = m; i-- > l;) {
                double f = s * e[i];
                const double b = c * e[i];
                r = std::hypot(f, g);
                e[i + 1] = r;
                if (r == 0.0) {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;

                double * zi  = zt.row(i);
                double * zi1 = zt.row(i + 1);
                for (std::size_t k = 0; k < n; ++k) {
                    f = zi1[k];
                    zi1[k] = s * zi[k] + c * f;
                    zi[k] = c * zi[k] - s * f;
                }
            }
            if (underflow) {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
}

}  // namespace

EigResult sym_eig(const Matrix & h) {
    require_symmetric(h, "sym_eig");
    const std::size_t n = h.rows;
    std::vector<double> d, e;
    Matrix              zt;
    tridiagonalize(h, d, e, zt);
    ql_implicit(d, e, zt);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] > d[b]; });

    EigResult res;
    res.lambda.resize(n);
    res.q = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        res.lambda[j] = d[order[j]];
        const double * src = zt.row(order[j]);
        for (std::size_t r = 0; r < n; ++r) {
            res.q.at(r, j) = src[r];
        }
    }
    return res;
}

Matrix psd_sqrt(const Matrix & h) {
    const EigResult eig = sym_eig(h);
    const std::size_t n = h.rows;
    Matrix            out(n, n);
    std::vector<double> root(n);
    for (std::size_t k = 0; k < n; ++k) {
        root[k] = eig.lambda[k] > 0.0 ? std::sqrt(eig.lambda[k]) : 0.0;
    }
    for (std::size_t k = 0; k < n; ++k) {
        if (root[k] == 0.0) {
            continue;
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double scaled = root[k] * eig.q.at(i, k);
            if (scaled == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < n; ++j) {
                out.at(i, j) += scaled * eig.q.at(j, k);
            }
        }
    }
    return out;
}

void validate_psd(const Matrix & h, const char * what) {
    require_symmetric(h, what);
    const EigResult eig = sym_eig(h);
    const double    floor = -1e-8 * trace(h) / static_cast<double>(h.rows);
    for (double lam : eig.lambda) {
        if (lam < floor) {
            throw NumericalError(std::string(what) + ": matrix is not positive semi-definite");
        }
    }
}

Matrix sample_haar_orthogonal(std::size_t p, Rng rng) {
    if (p == 0) {
        throw DataError("sample_haar_orthogonal: p must be >= 1");
    }
    Matrix a(p, p);
    for (double & v : a.data) {
        v = rng.next_gaussian();
    }

    // Householder QR, reflectors stored as (v, beta) pairs.
    Matrix              vs(p, p);
    std::vector<double> betas(p, 0.0);
    std::vector<double> rdiag(p, 0.0);
    std::vector<double> v(p);
    for (std::size_t k = 0; k < p; ++k) {
        double norm2 = 0.0;
        for (std::size_t i = k; i < p; ++i) {
            v[i] = a.at(i, k);
            norm2 += v[i] * v[i];
        }
        const double norm = std::sqrt(norm2);
        if (norm == 0.0) {
            rdiag[k] = 0.0;
            continue;
        }
        const double alpha = -sign_or_one(v[k]) * norm;
        rdiag[k] = alpha;
        v[k] -= alpha;
        double vtv = 0.0;
        for (std::size_t i = k; i < p; ++i) {
            vtv += v[i] * v[i];
        }
        if (vtv == 0.0) {
            continue;
        }
        const double beta = 2.0 / vtv;
        betas[k] = beta;
        for (std::size_t i = k; i < p; ++i) {
            vs.at(k, i) = v[i];  // row k holds the reflector
        }
        // apply (I - beta v v^T) to trailing columns
        for (std::size_t j = k + 1; j < p; ++j) {
            double acc = 0.0;
            for (std::size_t i = k; i < p; ++i) {
                acc += v[i] * a.at(i, j);
            }
            acc *= beta;
            for (std::size_t i = k; i < p; ++i) {
                a.at(i, j) -= acc * v[i];
            }
        }
    }

    // Q = H_0 H_1 ... H_{p-1} I by back-accumulation.
    Matrix              q = Matrix::identity(p);
    std::vector<double> w(p);
    for (std::size_t k = p; k-- > 0;) {
        if (betas[k] == 0.0) {
            continue;
        }
        const double * vk = vs.row(k);
        std::fill(w.begin(), w.end(), 0.0);
        for (std::size_t r = k; r < p; ++r) {
            const double   vr = vk[r];
            const double * qr = q.row(r);
            if (vr == 0.0) {
                continue;
            }
            for (std::size_t c = 0; c < p; ++c) {
                w[c] += vr * qr[c];
            }
        }
        for (std::size_t r = k; r < p; ++r) {
            const double scale = betas[k] * vk[r];
            double *     qr = q.row(r);
            for (std::size_t c = 0; c < p; ++c) {
                qr[c] -= scale * w[c];
            }
        }
    }

    // sign correction: column j flips with sign(R_jj)
    for (std::size_t j = 0; j < p; ++j) {
        if (rdiag[j] < 0.0) {
            for (std::size_t i = 0; i < p; ++i) {
                q.at(i, j) = -q.at(i, j);
            }
        }
    }
    return q;
}

std::pair<std::size_t, std::size_t> balanced_factor_pair(std::size_t n) {
    if (n == 0) {
        throw DataError("balanced_factor_pair: n must be >= 1");
    }
    for (std::size_t p = static_cast<std::size_t>(std::sqrt(static_cast<double>(n))); p >= 1; --p) {
        if (n % p == 0) {
            return {p, n / p};
        }
    }
    return {1, n};
}

KroneckerOrthogonal sample_kron_orthogonal(std::size_t dim, Rng rng) {
    auto [p, q] = balanced_factor_pair(dim);
    if (p == 1 && dim > 32) {
        // prime-ish dimension: single dense Haar factor
        KroneckerOrthogonal k;
        k.left  = sample_haar_orthogonal(dim, rng.derive(0));
        k.right = Matrix::identity(1);
        k.dim   = dim;
        return k;
    }
    KroneckerOrthogonal k;
    k.left  = sample_haar_orthogonal(p, rng.derive(0));
    k.right = sample_haar_orthogonal(q, rng.derive(1));
    k.dim   = dim;
    return k;
}

namespace {

// out = A * Z * B^T for small dense factors; Z is p1 x p2.
void sandwich(const Matrix & a, const Matrix & z, const Matrix & b, Matrix & tmp, Matrix & out,
              bool transpose_a, bool transpose_b) {
    const std::size_t p1 = z.rows;
    const std::size_t p2 = z.cols;
    // tmp = op(A) * Z
    for (std::size_t i = 0; i < p1; ++i) {
        double * ti = tmp.row(i);
        std::fill(ti, ti + p2, 0.0);
        for (std::size_t k = 0; k < p1; ++k) {
            const double aik = transpose_a ? a.at(k, i) : a.at(i, k);
            if (aik == 0.0) {
                continue;
            }
            const double * zk = z.row(k);
            for (std::size_t j = 0; j < p2; ++j) {
                ti[j] += aik * zk[j];
            }
        }
    }
    // out = tmp * op(B)^T
    for (std::size_t i = 0; i < p1; ++i) {
        const double * ti = tmp.row(i);
        double *       oi = out.row(i);
        for (std::size_t j = 0; j < p2; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < p2; ++k) {
                acc += ti[k] * (transpose_b ? b.at(k, j) : b.at(j, k));
            }
            oi[j] = acc;
        }
    }
}

}  // namespace

Matrix kron_apply(const KroneckerOrthogonal & k, const Matrix & x, Side side, bool transpose) {
    const std::size_t p1 = k.left.rows;
    const std::size_t p2 = k.right.rows;
    if (p1 * p2 != k.dim) {
        throw DataError("kron_apply: factor shapes do not multiply to dim");
    }
    const std::size_t need = k.dim;
    if ((side == Side::Left && x.rows != need) || (side == Side::Right && x.cols != need)) {
        throw DataError("kron_apply: dimension mismatch");
    }

    Matrix out(x.rows, x.cols);
    Matrix z(p1, p2), tmp(p1, p2), res(p1, p2);
    if (side == Side::Left) {
        // result column c = (L (x) R) x_c, via reshape to p1 x p2
        for (std::size_t c = 0; c < x.cols; ++c) {
            for (std::size_t i = 0; i < need; ++i) {
                z.data[i] = x.at(i, c);
            }
            sandwich(k.left, z, k.right, tmp, res, transpose, transpose);
            for (std::size_t i = 0; i < need; ++i) {
                out.at(i, c) = res.data[i];
            }
        }
    } else {
        // result row r = x_r (L (x) R) = ((L (x) R)^T x_r^T)^T
        for (std::size_t r = 0; r < x.rows; ++r) {
            std::memcpy(z.data.data(), x.row(r), need * sizeof(double));
            sandwich(k.left, z, k.right, tmp, res, !transpose, !transpose);
            std::memcpy(out.row(r), res.data.data(), need * sizeof(double));
        }
    }
    return out;
}

std::vector<uint32_t> random_permutation(std::size_t n, Rng rng) {
    if (n == 0) {
        throw DataError("random_permutation: n must be >= 1");
    }
    std::vector<uint32_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0u);
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(bounded_u64(rng, i + 1));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

std::vector<uint32_t> invert_permutation(const std::vector<uint32_t> & perm) {
    std::vector<uint32_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        inv[perm[i]] = static_cast<uint32_t>(i);
    }
    return inv;
}

Matrix apply_row_permutation(const Matrix & m, const std::vector<uint32_t> & perm) {
    if (perm.size() != m.rows) {
        throw DataError("apply_row_permutation: length mismatch");
    }
    Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        std::memcpy(out.row(i), m.row(perm[i]), m.cols * sizeof(double));
    }
    return out;
}

Matrix apply_col_permutation(const Matrix & m, const std::vector<uint32_t> & perm) {
    if (perm.size() != m.cols) {
        throw DataError("apply_col_permutation: length mismatch");
    }
    Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double * src = m.row(i);
        double *       dst = out.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) {
            dst[j] = src[perm[j]];
        }
    }
    return out;
}

Matrix generate_lowrank_psd(std::size_t n, std::size_t k, const std::vector<double> & spectrum, uint64_t seed) {
    if (k == 0 || k > n) {
        throw DataError("generate_lowrank_psd: rank must satisfy 1 <= k <= n");
    }
    if (spectrum.size() != k) {
        throw DataError("generate_lowrank_psd: spectrum must hold k entries");
    }
    for (std::size_t i = 0; i < k; ++i) {
        if (!(spectrum[i] > 0.0) || !std::isfinite(spectrum[i])) {
            throw DataError("generate_lowrank_psd: spectrum entries must be positive");
        }
        if (i > 0 && spectrum[i] > spectrum[i - 1]) {
            throw DataError("generate_lowrank_psd: spectrum must be non-increasing");
        }
    }
    const Matrix q = sample_haar_orthogonal(n, Rng(seed, 0));
    Matrix       h(n, n);
    for (std::size_t c = 0; c < k; ++c) {
        const double lam = spectrum[c];
        for (std::size_t i = 0; i < n; ++i) {
            const double scaled = lam * q.at(i, c);
            if (scaled == 0.0) {
                continue;
            }
            double * hi = h.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                hi[j] += scaled * q.at(j, c);
            }
        }
    }
    return h;
}

}  // namespace quip
