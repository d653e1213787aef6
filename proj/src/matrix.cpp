#include "quip/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace quip {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != rows * cols) {
        throw DataError("matrix payload length does not match rows*cols");
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m.at(i, i) = 1.0;
    }
    return m;
}

bool operator==(const Matrix & a, const Matrix & b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

Matrix matmul(const Matrix & a, const Matrix & b) {
    if (a.cols != b.rows) {
        throw DataError("matmul: inner dimensions disagree");
    }
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double * ai = a.row(i);
        double *       ci = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double   aik = ai[k];
            const double * bk  = b.row(k);
            if (aik == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < b.cols; ++j) {
                ci[j] += aik * bk[j];
            }
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix & a, const Matrix & b) {
    if (a.cols != b.cols) {
        throw DataError("matmul_nt: inner dimensions disagree");
    }
    Matrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double * ai = a.row(i);
        double *       ci = c.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double * bj  = b.row(j);
            double         acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += ai[k] * bj[k];
            }
            ci[j] = acc;
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix & a, const Matrix & b) {
    if (a.rows != b.rows) {
        throw DataError("matmul_tn: inner dimensions disagree");
    }
    Matrix c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double * ak = a.row(k);
        const double * bk = b.row(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = ak[i];
            if (aki == 0.0) {
                continue;
            }
            double * ci = c.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) {
                ci[j] += aki * bk[j];
            }
        }
    }
    return c;
}

Matrix transpose(const Matrix & a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            t.at(j, i) = a.at(i, j);
        }
    }
    return t;
}

double frob_norm(const Matrix & a) {
    double s = 0.0;
    for (double v : a.data) {
        s += v * v;
    }
    return std::sqrt(s);
}

double trace(const Matrix & a) {
    const std::size_t n = std::min(a.rows, a.cols);
    double            s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s += a.at(i, i);
    }
    return s;
}

double max_abs(const Matrix & a) {
    double m = 0.0;
    for (double v : a.data) {
        m = std::max(m, std::fabs(v));
    }
    return m;
}

void require_finite(const Matrix & a, const char * what) {
    for (double v : a.data) {
        if (!std::isfinite(v)) {
            throw DataError(std::string(what) + ": non-finite entry");
        }
    }
}

bool is_symmetric(const Matrix & h) {
    if (h.rows != h.cols) {
        return false;
    }
    for (std::size_t i = 0; i < h.rows; ++i) {
        for (std::size_t j = i + 1; j < h.cols; ++j) {
            const double d = std::fabs(h.at(i, j) - h.at(j, i));
            if (d > 1e-12 * std::max(1.0, std::fabs(h.at(i, j)))) {
                return false;
            }
        }
    }
    return true;
}

void require_symmetric(const Matrix & h, const char * what) {
    if (!is_symmetric(h)) {
        throw DataError(std::string(what) + ": matrix is not symmetric");
    }
}

}  // namespace quip
