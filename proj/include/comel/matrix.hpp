#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace comel {

// Doubles allocated through Matrix since process start. Used by the
// attention memory-accounting tests; cost is one relaxed atomic add per
// allocation.
std::atomic<std::uint64_t>& allocation_counter();

// Dense row-major matrix of doubles. Vectors are 1xN or Nx1 matrices.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c);
    Matrix(int r, int c, std::initializer_list<double> values);

    static Matrix zeros(int r, int c) { return Matrix(r, c); }
    static Matrix identity(int n);
    static Matrix row_vector(std::initializer_list<double> values);
    static Matrix filled(int r, int c, double v);

    double& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
    double* row_ptr(int i) { return data.data() + static_cast<size_t>(i) * cols; }
    const double* row_ptr(int i) const { return data.data() + static_cast<size_t>(i) * cols; }

    size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool all_finite() const;
};

Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix col_sums(const Matrix& a);  // 1 x cols
double frobenius_norm(const Matrix& a);
double dot_all(const Matrix& a, const Matrix& b);
double max_abs_diff(const Matrix& a, const Matrix& b);

void require_shape(const Matrix& m, int r, int c, const std::string& what);
void require_finite(const Matrix& m, const std::string& what);

// Binary matrix container: magic "CMLM", u32 rows, u32 cols, then
// rows*cols little-endian f64 values.
void write_cmlm(const std::string& path, const Matrix& m);
Matrix read_cmlm(const std::string& path);

}  // namespace comel
