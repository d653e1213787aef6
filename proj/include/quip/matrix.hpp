#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace quip {

// Error taxonomy. Every failure mode in the library maps onto one of these.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string & msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string & msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string & msg) : std::runtime_error(msg) {}
};
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string & msg) : std::runtime_error(msg) {}
};

// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> d);

    double & at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    double * row(std::size_t i) { return data.data() + i * cols; }
    const double * row(std::size_t i) const { return data.data() + i * cols; }

    bool same_shape(const Matrix & o) const { return rows == o.rows && cols == o.cols; }

    static Matrix identity(std::size_t n);
};

bool operator==(const Matrix & a, const Matrix & b);

// C = A * B
Matrix matmul(const Matrix & a, const Matrix & b);
// C = A * B^T
Matrix matmul_nt(const Matrix & a, const Matrix & b);
// C = A^T * B
Matrix matmul_tn(const Matrix & a, const Matrix & b);
Matrix transpose(const Matrix & a);

double frob_norm(const Matrix & a);
double trace(const Matrix & a);
double max_abs(const Matrix & a);

// Throws DataError if any entry is NaN/Inf.
void require_finite(const Matrix & a, const char * what);

// Symmetry invariant: |H_ij - H_ji| <= 1e-12 * max(1, |H_ij|).
bool is_symmetric(const Matrix & h);
void require_symmetric(const Matrix & h, const char * what);

}  // namespace quip
