#include "comel/matrix.hpp"

#include <cstdio>
#include <cstring>

namespace comel {

std::atomic<std::uint64_t>& allocation_counter() {
    static std::atomic<std::uint64_t> counter{0};
    return counter;
}

Matrix::Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dimension");
    allocation_counter().fetch_add(data.size(), std::memory_order_relaxed);
}

Matrix::Matrix(int r, int c, std::initializer_list<double> values) : Matrix(r, c) {
    if (values.size() != data.size()) throw std::invalid_argument("Matrix: initializer size mismatch");
    std::copy(values.begin(), values.end(), data.begin());
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

Matrix Matrix::row_vector(std::initializer_list<double> values) {
    Matrix m(1, static_cast<int>(values.size()));
    std::copy(values.begin(), values.end(), m.data.begin());
    return m;
}

Matrix Matrix::filled(int r, int c, double v) {
    Matrix m(r, c);
    std::fill(m.data.begin(), m.data.end(), v);
    return m;
}

bool Matrix::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    Matrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        double* ci = c.row_ptr(i);
        const double* ai = a.row_ptr(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = b.row_ptr(k);
            for (int j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dimensions differ");
    Matrix c(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* ai = a.row_ptr(i);
        double* ci = c.row_ptr(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* bj = b.row_ptr(j);
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) s += ai[k] * bj[k];
            ci[j] = s;
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dimensions differ");
    Matrix c(a.cols, b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const double* ak = a.row_ptr(k);
        const double* bk = b.row_ptr(k);
        for (int i = 0; i < a.cols; ++i) {
            const double aki = ak[i];
            if (aki == 0.0) continue;
            double* ci = c.row_ptr(i);
            for (int j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
    Matrix c(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) c.data[i] = a.data[i] + b.data[i];
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("sub: shape mismatch");
    Matrix c(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) c.data[i] = a.data[i] - b.data[i];
    return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("hadamard: shape mismatch");
    Matrix c(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) c.data[i] = a.data[i] * b.data[i];
    return c;
}

Matrix scale(const Matrix& a, double s) {
    Matrix c(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) c.data[i] = a.data[i] * s;
    return c;
}

Matrix col_sums(const Matrix& a) {
    Matrix c(1, a.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* ai = a.row_ptr(i);
        for (int j = 0; j < a.cols; ++j) c.data[j] += ai[j];
    }
    return c;
}

double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

double dot_all(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("dot_all: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

void require_shape(const Matrix& m, int r, int c, const std::string& what) {
    if (m.rows != r || m.cols != c)
        throw std::invalid_argument(what + ": expected " + std::to_string(r) + "x" + std::to_string(c) +
                                    ", got " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
}

void require_finite(const Matrix& m, const std::string& what) {
    if (!m.all_finite()) throw std::invalid_argument(what + ": non-finite entries");
}

namespace {
constexpr char kMagic[4] = {'C', 'M', 'L', 'M'};

struct FileCloser {
    std::FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};
}  // namespace

void write_cmlm(const std::string& path, const Matrix& m) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("write_cmlm: cannot open " + path);
    FileCloser closer{f};
    std::uint32_t r = static_cast<std::uint32_t>(m.rows);
    std::uint32_t c = static_cast<std::uint32_t>(m.cols);
    if (std::fwrite(kMagic, 1, 4, f) != 4 || std::fwrite(&r, 4, 1, f) != 1 ||
        std::fwrite(&c, 4, 1, f) != 1 ||
        std::fwrite(m.data.data(), 8, m.data.size(), f) != m.data.size())
        throw std::runtime_error("write_cmlm: short write to " + path);
}

Matrix read_cmlm(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("read_cmlm: cannot open " + path);
    FileCloser closer{f};
    char magic[4];
    std::uint32_t r = 0, c = 0;
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("read_cmlm: bad magic in " + path);
    if (std::fread(&r, 4, 1, f) != 1 || std::fread(&c, 4, 1, f) != 1)
        throw std::runtime_error("read_cmlm: truncated header in " + path);
    Matrix m(static_cast<int>(r), static_cast<int>(c));
    if (std::fread(m.data.data(), 8, m.data.size(), f) != m.data.size())
        throw std::runtime_error("read_cmlm: truncated payload in " + path);
    return m;
}

}  // namespace comel
