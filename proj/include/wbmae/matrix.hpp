#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "wbmae/errors.hpp"
#include "wbmae/rng.hpp"

namespace wbmae {

// Dense row-major double matrix. Everything downstream (rates, attention,
// training) works on this one type; vectors are n x 1.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(std::size_t(r) * std::size_t(c), 0.0) {}

    double& operator()(int i, int j) { return data[std::size_t(i) * cols + j]; }
    double operator()(int i, int j) const { return data[std::size_t(i) * cols + j]; }

    std::size_t size() const { return data.size(); }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

inline void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

inline bool same_shape(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

// C = A * B, ikj order so the inner loop streams rows of B and C
inline Matrix multiply(const Matrix& a, const Matrix& b) {
    require(a.cols == b.rows, "multiply: inner dimensions differ");
    Matrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        double* ci = &c.data[std::size_t(i) * c.cols];
        for (int l = 0; l < a.cols; ++l) {
            double av = a(i, l);
            if (av == 0.0) continue;
            const double* bl = &b.data[std::size_t(l) * b.cols];
            for (int j = 0; j < b.cols; ++j) ci[j] += av * bl[j];
        }
    }
    return c;
}

// C = A^T * B without materializing A^T
inline Matrix multiply_At_B(const Matrix& a, const Matrix& b) {
    require(a.rows == b.rows, "multiply_At_B: row counts differ");
    Matrix c(a.cols, b.cols);
    for (int l = 0; l < a.rows; ++l) {
        const double* al = &a.data[std::size_t(l) * a.cols];
        const double* bl = &b.data[std::size_t(l) * b.cols];
        for (int i = 0; i < a.cols; ++i) {
            double av = al[i];
            if (av == 0.0) continue;
            double* ci = &c.data[std::size_t(i) * c.cols];
            for (int j = 0; j < b.cols; ++j) ci[j] += av * bl[j];
        }
    }
    return c;
}

// C = A * B^T; inner loop is a dot product of two contiguous rows
inline Matrix multiply_A_Bt(const Matrix& a, const Matrix& b) {
    require(a.cols == b.cols, "multiply_A_Bt: column counts differ");
    Matrix c(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* ai = &a.data[std::size_t(i) * a.cols];
        for (int j = 0; j < b.rows; ++j) {
            const double* bj = &b.data[std::size_t(j) * b.cols];
            double s = 0.0;
            for (int l = 0; l < a.cols; ++l) s += ai[l] * bj[l];
            c(i, j) = s;
        }
    }
    return c;
}

inline Matrix operator*(const Matrix& a, const Matrix& b) { return multiply(a, b); }

inline Matrix operator+(const Matrix& a, const Matrix& b) {
    require(same_shape(a, b), "operator+: shapes differ");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
    return c;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
    require(same_shape(a, b), "operator-: shapes differ");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

inline Matrix operator*(double k, const Matrix& a) {
    Matrix c = a;
    for (double& v : c.data) v *= k;
    return c;
}

inline Matrix& operator+=(Matrix& a, const Matrix& b) {
    require(same_shape(a, b), "operator+=: shapes differ");
    for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
    return a;
}

inline Matrix& operator-=(Matrix& a, const Matrix& b) {
    require(same_shape(a, b), "operator-=: shapes differ");
    for (std::size_t i = 0; i < a.size(); ++i) a.data[i] -= b.data[i];
    return a;
}

inline void axpy(double k, const Matrix& x, Matrix& y) { // y += k * x
    require(same_shape(x, y), "axpy: shapes differ");
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] += k * x.data[i];
}

inline double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

inline double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::abs(v));
    return m;
}

inline double dot(const Matrix& a, const Matrix& b) {
    require(same_shape(a, b), "dot: shapes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline bool all_finite(const Matrix& a) {
    for (double v : a.data)
        if (!std::isfinite(v)) return false;
    return true;
}

inline Matrix get_column(const Matrix& a, int j) {
    Matrix c(a.rows, 1);
    for (int i = 0; i < a.rows; ++i) c(i, 0) = a(i, j);
    return c;
}

inline void set_column(Matrix& a, int j, const Matrix& c) {
    require(c.rows == a.rows && c.cols == 1, "set_column: shape mismatch");
    for (int i = 0; i < a.rows; ++i) a(i, j) = c(i, 0);
}

// rows [r0, r1) as a new matrix
inline Matrix row_block(const Matrix& a, int r0, int r1) {
    require(0 <= r0 && r0 <= r1 && r1 <= a.rows, "row_block: bad range");
    Matrix b(r1 - r0, a.cols);
    for (int i = r0; i < r1; ++i)
        for (int j = 0; j < a.cols; ++j) b(i - r0, j) = a(i, j);
    return b;
}

// columns [c0, c1) as a new matrix
inline Matrix col_block(const Matrix& a, int c0, int c1) {
    require(0 <= c0 && c0 <= c1 && c1 <= a.cols, "col_block: bad range");
    Matrix b(a.rows, c1 - c0);
    for (int i = 0; i < a.rows; ++i)
        for (int j = c0; j < c1; ++j) b(i, j - c0) = a(i, j);
    return b;
}

inline Matrix gaussian_matrix(int r, int c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.normal() * scale;
    return m;
}

} // namespace wbmae
