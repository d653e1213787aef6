#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "quip/matrix.hpp"

namespace quip {

// Which affine map takes grid codes back to reals. Standard is the QuIP
// pre/post-processing map; ClampSafe is the (2^b-3)/2 map of the convex-program
// rounding path. Doubles as the QZ file version byte.
enum class AffineMap : uint8_t {
    Standard  = 1,
    ClampSafe = 2,
};

// Everything needed to invert pre-processing.
struct IncoherenceMeta {
    uint64_t seed = 0;
    int      bits = 2;
    double   alpha = 0.0;
    double   rho   = 0.0;  // not persisted in QZ files; 0 = unknown
    double   scale = 1.0;
    std::vector<double> d_tilde;                       // length n, strictly positive
    std::pair<uint32_t, uint32_t> u_shapes{0, 0};      // p1*p2 = m rotation factors
    std::pair<uint32_t, uint32_t> v_shapes{0, 0};      // q1*q2 = n rotation factors
    std::vector<uint32_t> row_perm;                    // length m
    std::vector<uint32_t> col_perm;                    // length n
    bool      incoherence_enabled = false;
    AffineMap map = AffineMap::Standard;
};

// Integer grid matrix in {0 .. 2^b-1} plus the meta that de-quantizes it.
struct QuantizedLayer {
    std::size_t rows = 0;
    std::size_t cols = 0;
    int         bits = 2;
    std::vector<uint16_t> codes;  // row-major, rows*cols entries
    IncoherenceMeta meta;

    uint16_t at(std::size_t i, std::size_t j) const { return codes[i * cols + j]; }

    // Codes as a real-valued matrix (input to postprocess).
    Matrix codes_as_matrix() const {
        Matrix m(rows, cols);
        for (std::size_t i = 0; i < codes.size(); ++i) {
            m.data[i] = static_cast<double>(codes[i]);
        }
        return m;
    }
};

}  // namespace quip
