#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "quip/matrix.hpp"
#include "quip/rng.hpp"

namespace quip {

// H = (U+I) diag(d) (U+I)^T with U strictly upper triangular and d >= 0.
struct LdlFactors {
    Matrix              u_strict;
    std::vector<double> d;

    double trace_d() const {
        double s = 0.0;
        for (double v : d) {
            s += v;
        }
        return s;
    }
};

// Upper-triangular-convention LDL of a symmetric PSD matrix: elimination runs
// from the last column down to the first. Pivots below 1e-12*tr(H)/n are
// treated as exact zeros (the pivot and its U column are zeroed).
LdlFactors ldl_decompose(const Matrix & h);

struct EigResult {
    Matrix              q;       // columns are eigenvectors
    std::vector<double> lambda;  // descending
};

// Symmetric eigendecomposition: Householder tridiagonalization followed by
// implicit-shift QL. Throws NumericalError if an eigenvalue fails to converge
// within the iteration cap.
EigResult sym_eig(const Matrix & h);

// Q diag(sqrt(max(lambda,0))) Q^T.
Matrix psd_sqrt(const Matrix & h);

// Symmetry plus eigenvalue floor (min lambda >= -1e-8 tr(H)/n).
void validate_psd(const Matrix & h, const char * what);

// Exact Haar sample: QR of an iid Gaussian matrix with the R-diagonal sign
// correction. Deterministic for a fixed generator state.
Matrix sample_haar_orthogonal(std::size_t p, Rng rng);

// Two-factor Kronecker orthogonal transform, dim = left.rows * right.rows.
struct KroneckerOrthogonal {
    Matrix      left;
    Matrix      right;
    std::size_t dim = 0;
};

// Divisor pair (p, q), p*q = n, p <= q, minimizing q - p.
std::pair<std::size_t, std::size_t> balanced_factor_pair(std::size_t n);

// Sample factors for the balanced pair of dim. If the best pair is (1, dim)
// and dim > 32 the left factor is a single dense Haar matrix (shape (dim, 1)).
KroneckerOrthogonal sample_kron_orthogonal(std::size_t dim, Rng rng);

enum class Side { Left, Right };

// side == Left:  (L (x) R) * X   (or its transpose when transpose is set)
// side == Right: X * (L (x) R)
// Cost O(dim * (p1 + p2)) per vector via the reshape trick; never materializes
// the dense Kronecker product.
Matrix kron_apply(const KroneckerOrthogonal & k, const Matrix & x, Side side, bool transpose);

std::vector<uint32_t> random_permutation(std::size_t n, Rng rng);
std::vector<uint32_t> invert_permutation(const std::vector<uint32_t> & perm);
// Row i of the result is row perm[i] of m.
Matrix apply_row_permutation(const Matrix & m, const std::vector<uint32_t> & perm);
// Column j of the result is column perm[j] of m.
Matrix apply_col_permutation(const Matrix & m, const std::vector<uint32_t> & perm);

// H = Q diag(spectrum) Q^T with Haar Q restricted to the first k columns.
// spectrum must hold k positive entries sorted descending.
Matrix generate_lowrank_psd(std::size_t n, std::size_t k, const std::vector<double> & spectrum, uint64_t seed);

}  // namespace quip
