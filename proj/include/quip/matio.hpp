#pragma once

#include <string>

#include "quip/layer.hpp"
#include "quip/matrix.hpp"

namespace quip {

// QMAT file format (bit-exact, little-endian):
//   magic "QMAT1\0" | u8 version=1 | u8 elem tag=0 (f64 LE) | 17 reserved zero bytes
//   | u64 rows | u64 cols | rows*cols f64 payload, row-major
Matrix read_matrix(const std::string & path);
void   write_matrix(const Matrix & m, const std::string & path);

// QZ file format (bit-exact, little-endian):
//   magic "QUIPZ\0" | u8 version (affine map: 1 standard, 2 clamp-safe) | u8 bits
//   | u64 m | u64 n | f64 scale | f64 alpha | u64 seed
//   | u32 p1 p2 q1 q2 (all zero = incoherence disabled)
//   | u32 row_perm[m] | u32 col_perm[n] | f64 d_tilde[n] | u16 codes[m*n]
QuantizedLayer read_quantized(const std::string & path);
void           write_quantized(const QuantizedLayer & layer, const std::string & path);

// H = X^T X / N for X whose N rows are calibration vectors.
Matrix hessian_from_calibration(const Matrix & x);

}  // namespace quip
