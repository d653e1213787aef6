#include "quip/matio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

namespace quip {

namespace {

constexpr char kQmatMagic[6] = {'Q', 'M', 'A', 'T', '1', '\0'};
constexpr char kQzMagic[6]   = {'Q', 'U', 'I', 'P', 'Z', '\0'};

class ByteWriter {
  public:
    void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(uint16_t v) {
        for (int i = 0; i < 2; ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
        }
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
        }
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
        }
    }
    void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
    void bytes(const char * p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }

    void flush(const std::string & path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open for writing: " + path);
        }
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) {
            throw IoError("write failed: " + path);
        }
    }

  private:
    std::vector<char> buf_;
};

class ByteReader {
  public:
    ByteReader(const std::string & path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw IoError("cannot open for reading: " + path);
        }
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf_[pos_++]);
    }
    uint16_t u16() {
        need(2);
        uint16_t v = 0;
        for (int i = 0; i < 2; ++i) {
            v |= static_cast<uint16_t>(static_cast<uint8_t>(buf_[pos_++])) << (8 * i);
        }
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<uint32_t>(static_cast<uint8_t>(buf_[pos_++])) << (8 * i);
        }
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<uint64_t>(static_cast<uint8_t>(buf_[pos_++])) << (8 * i);
        }
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    void   skip(std::size_t n) {
        need(n);
        pos_ += n;
    }
    bool magic_is(const char (&m)[6]) {
        need(6);
        const bool ok = std::memcmp(buf_.data() + pos_, m, 6) == 0;
        pos_ += 6;
        return ok;
    }
    std::size_t remaining() const { return buf_.size() - pos_; }

  private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) {
            throw FormatError("truncated file");
        }
    }
    std::vector<char> buf_;
    std::size_t       pos_ = 0;
};

std::size_t checked_count(uint64_t rows, uint64_t cols) {
    if (rows == 0 || cols == 0) {
        throw FormatError("zero matrix dimension");
    }
    if (cols > std::numeric_limits<uint64_t>::max() / rows ||
        rows * cols > (static_cast<uint64_t>(1) << 32)) {
        throw FormatError("matrix dimensions out of range");
    }
    return static_cast<std::size_t>(rows * cols);
}

}  // namespace

Matrix read_matrix(const std::string & path) {
    ByteReader r(path);
    if (!r.magic_is(kQmatMagic)) {
        throw FormatError("bad QMAT magic: " + path);
    }
    if (r.u8() != 1) {
        throw FormatError("unsupported QMAT version: " + path);
    }
    if (r.u8() != 0) {
        throw FormatError("unsupported QMAT element type: " + path);
    }
    r.skip(17);
    const uint64_t    rows = r.u64();
    const uint64_t    cols = r.u64();
    const std::size_t count = checked_count(rows, cols);
    if (r.remaining() != 8 * count) {
        throw FormatError("QMAT payload length mismatch: " + path);
    }
    Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    for (std::size_t i = 0; i < count; ++i) {
        m.data[i] = r.f64();
    }
    require_finite(m, "read_matrix");
    return m;
}

void write_matrix(const Matrix & m, const std::string & path) {
    if (m.data.size() != m.rows * m.cols) {
        throw DataError("write_matrix: inconsistent shape");
    }
    require_finite(m, "write_matrix");
    ByteWriter w;
    w.bytes(kQmatMagic, 6);
    w.u8(1);
    w.u8(0);
    for (int i = 0; i < 17; ++i) {
        w.u8(0);
    }
    w.u64(m.rows);
    w.u64(m.cols);
    for (double v : m.data) {
        w.f64(v);
    }
    w.flush(path);
}

QuantizedLayer read_quantized(const std::string & path) {
    ByteReader r(path);
    if (!r.magic_is(kQzMagic)) {
        throw FormatError("bad QZ magic: " + path);
    }
    const uint8_t version = r.u8();
    if (version != 1 && version != 2) {
        throw FormatError("unsupported QZ version: " + path);
    }
    QuantizedLayer layer;
    layer.meta.map = static_cast<AffineMap>(version);
    layer.bits     = r.u8();
    if (layer.bits < 2 || layer.bits > 16) {
        throw FormatError("QZ bits out of range [2,16]: " + path);
    }
    const uint64_t    m = r.u64();
    const uint64_t    n = r.u64();
    const std::size_t count = checked_count(m, n);
    layer.rows = static_cast<std::size_t>(m);
    layer.cols = static_cast<std::size_t>(n);

    layer.meta.bits  = layer.bits;
    layer.meta.scale = r.f64();
    layer.meta.alpha = r.f64();
    layer.meta.seed  = r.u64();
    if (!std::isfinite(layer.meta.scale) || layer.meta.scale <= 0.0) {
        throw FormatError("QZ scale must be positive and finite: " + path);
    }
    if (!std::isfinite(layer.meta.alpha) || layer.meta.alpha < 0.0) {
        throw FormatError("QZ alpha must be non-negative and finite: " + path);
    }

    layer.meta.u_shapes = {r.u32(), r.u32()};
    layer.meta.v_shapes = {r.u32(), r.u32()};
    const auto [p1, p2] = layer.meta.u_shapes;
    const auto [q1, q2] = layer.meta.v_shapes;
    layer.meta.incoherence_enabled = !(p1 == 0 && p2 == 0 && q1 == 0 && q2 == 0);
    if (layer.meta.incoherence_enabled) {
        if (static_cast<uint64_t>(p1) * p2 != m || static_cast<uint64_t>(q1) * q2 != n) {
            throw FormatError("QZ Kronecker shapes do not factor the layer dimensions: " + path);
        }
    }

    auto read_perm = [&](std::size_t len) {
        std::vector<uint32_t> perm(len);
        std::vector<bool>     seen(len, false);
        for (std::size_t i = 0; i < len; ++i) {
            perm[i] = r.u32();
            if (perm[i] >= len || seen[perm[i]]) {
                throw FormatError("QZ permutation is not a bijection: " + path);
            }
            seen[perm[i]] = true;
        }
        return perm;
    };
    layer.meta.row_perm = read_perm(layer.rows);
    layer.meta.col_perm = read_perm(layer.cols);

    layer.meta.d_tilde.resize(layer.cols);
    for (std::size_t j = 0; j < layer.cols; ++j) {
        layer.meta.d_tilde[j] = r.f64();
        if (!std::isfinite(layer.meta.d_tilde[j]) || layer.meta.d_tilde[j] <= 0.0) {
            throw FormatError("QZ diagonal rescaler must be strictly positive: " + path);
        }
    }

    if (r.remaining() != 2 * count) {
        throw FormatError("QZ code payload length mismatch: " + path);
    }
    const uint32_t max_code = (1u << layer.bits) - 1;
    layer.codes.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        layer.codes[i] = r.u16();
        if (layer.codes[i] > max_code) {
            throw FormatError("QZ code exceeds 2^b-1: " + path);
        }
    }
    layer.meta.rho = 0.0;
    return layer;
}

void write_quantized(const QuantizedLayer & layer, const std::string & path) {
    const std::size_t count = layer.rows * layer.cols;
    if (layer.codes.size() != count || layer.meta.row_perm.size() != layer.rows ||
        layer.meta.col_perm.size() != layer.cols || layer.meta.d_tilde.size() != layer.cols) {
        throw DataError("write_quantized: inconsistent layer");
    }
    if (layer.bits < 2 || layer.bits > 16) {
        throw DataError("write_quantized: bits out of range [2,16]");
    }
    const uint32_t max_code = (1u << layer.bits) - 1;
    for (uint16_t c : layer.codes) {
        if (c > max_code) {
            throw DataError("write_quantized: code exceeds 2^b-1");
        }
    }
    ByteWriter w;
    w.bytes(kQzMagic, 6);
    w.u8(static_cast<uint8_t>(layer.meta.map));
    w.u8(static_cast<uint8_t>(layer.bits));
    w.u64(layer.rows);
    w.u64(layer.cols);
    w.f64(layer.meta.scale);
    w.f64(layer.meta.alpha);
    w.u64(layer.meta.seed);
    if (layer.meta.incoherence_enabled) {
        w.u32(layer.meta.u_shapes.first);
        w.u32(layer.meta.u_shapes.second);
        w.u32(layer.meta.v_shapes.first);
        w.u32(layer.meta.v_shapes.second);
    } else {
        for (int i = 0; i < 4; ++i) {
            w.u32(0);
        }
    }
    for (uint32_t v : layer.meta.row_perm) {
        w.u32(v);
    }
    for (uint32_t v : layer.meta.col_perm) {
        w.u32(v);
    }
    for (double v : layer.meta.d_tilde) {
        w.f64(v);
    }
    for (uint16_t c : layer.codes) {
        w.u16(c);
    }
    w.flush(path);
}

Matrix hessian_from_calibration(const Matrix & x) {
    if (x.rows == 0) {
        throw DataError("hessian_from_calibration: no calibration rows");
    }
    require_finite(x, "hessian_from_calibration");
    // X^T X accumulates (i,j) and (j,i) through identical products, so the
    // result is exactly symmetric.
    Matrix h = matmul_tn(x, x);
    const double inv_n = 1.0 / static_cast<double>(x.rows);
    for (double & v : h.data) {
        v *= inv_n;
    }
    return h;
}

}  // namespace quip
