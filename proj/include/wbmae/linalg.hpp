#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "wbmae/errors.hpp"
#include "wbmae/matrix.hpp"
#include "wbmae/rng.hpp"

namespace wbmae {

// Lower-triangular L with L L^T = M. Pivots must stay strictly positive.
inline Matrix cholesky(const Matrix& m) {
    require(m.rows == m.cols, "cholesky: matrix not square");
    int n = m.rows;
    Matrix l(n, n);
    for (int j = 0; j < n; ++j) {
        double diag = m(j, j);
        for (int k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0)) throw NotPositiveDefinite("cholesky: pivot <= 0 at index " + std::to_string(j));
        double ljj = std::sqrt(diag);
        l(j, j) = ljj;
        for (int i = j + 1; i < n; ++i) {
            double s = m(i, j);
            for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

// Solves L L^T X = B given the Cholesky factor L.
inline Matrix cholesky_solve(const Matrix& l, const Matrix& b) {
    require(l.rows == l.cols, "cholesky_solve: factor not square");
    require(l.rows == b.rows, "cholesky_solve: rhs rows differ");
    int n = l.rows;
    Matrix x = b;
    for (int c = 0; c < b.cols; ++c) {
        for (int i = 0; i < n; ++i) { // forward: L y = b
            double s = x(i, c);
            for (int k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
            x(i, c) = s / l(i, i);
        }
        for (int i = n - 1; i >= 0; --i) { // backward: L^T x = y
            double s = x(i, c);
            for (int k = i + 1; k < n; ++k) s -= l(k, i) * x(k, c);
            x(i, c) = s / l(i, i);
        }
    }
    return x;
}

// log det of a symmetric positive-definite matrix via Cholesky.
// Symmetry is checked to an absolute 1e-10 so silent garbage never reaches
// the factorization; asymmetric or indefinite input throws.
inline double logdet_psd(const Matrix& m) {
    require(m.rows == m.cols, "logdet_psd: matrix not square");
    for (int i = 0; i < m.rows; ++i)
        for (int j = i + 1; j < m.cols; ++j)
            if (std::abs(m(i, j) - m(j, i)) > 1e-10)
                throw NotPositiveDefinite("logdet_psd: input not symmetric");
    Matrix l = cholesky(m);
    double s = 0.0;
    for (int i = 0; i < m.rows; ++i) s += std::log(l(i, i));
    return 2.0 * s;
}

// Largest singular value via power iteration on M^T M. The start vector is
// all-ones (deterministic); if that lands in the null space while M != 0 the
// iterate is nudged along a basis axis, still deterministically.
inline double operator_norm(const Matrix& m, double tol = 1e-10, int max_iter = 10000) {
    if (m.rows == 0 || m.cols == 0) return 0.0;
    int n = m.cols;
    std::vector<double> v(n, 1.0 / std::sqrt(double(n)));
    std::vector<double> mv(m.rows, 0.0), w(n, 0.0);
    double sigma = 0.0;
    int bump = 0;
    for (int it = 0; it < max_iter; ++it) {
        for (int i = 0; i < m.rows; ++i) {
            const double* mi = &m.data[std::size_t(i) * n];
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += mi[j] * v[j];
            mv[i] = s;
        }
        double nmv = 0.0;
        for (double x : mv) nmv += x * x;
        nmv = std::sqrt(nmv);
        if (nmv == 0.0) {
            if (bump >= n) return 0.0; // exhausted every axis: M v = 0 for a basis
            std::fill(v.begin(), v.end(), 0.0);
            v[bump++] = 1.0;
            continue;
        }
        std::fill(w.begin(), w.end(), 0.0);
        for (int i = 0; i < m.rows; ++i) {
            const double* mi = &m.data[std::size_t(i) * n];
            double s = mv[i];
            for (int j = 0; j < n; ++j) w[j] += mi[j] * s;
        }
        double nw = 0.0;
        for (double x : w) nw += x * x;
        nw = std::sqrt(nw);
        if (nw == 0.0) return nmv;
        for (int j = 0; j < n; ++j) v[j] = w[j] / nw;
        double prev = sigma;
        sigma = nmv;
        if (it > 0 && std::abs(sigma - prev) <= tol * std::max(sigma, 1e-300)) break;
    }
    // one more multiply so the reported value matches the final vector
    double s2 = 0.0;
    for (int i = 0; i < m.rows; ++i) {
        const double* mi = &m.data[std::size_t(i) * n];
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += mi[j] * v[j];
        s2 += s * s;
    }
    return std::sqrt(s2);
}

// Column-wise softmax with max subtraction; every output column sums to 1.
inline Matrix softmax_columns(const Matrix& g) {
    Matrix a(g.rows, g.cols);
    for (int j = 0; j < g.cols; ++j) {
        double mx = -HUGE_VAL;
        for (int i = 0; i < g.rows; ++i) mx = std::max(mx, g(i, j));
        double z = 0.0;
        for (int i = 0; i < g.rows; ++i) {
            double e = std::exp(g(i, j) - mx);
            a(i, j) = e;
            z += e;
        }
        for (int i = 0; i < g.rows; ++i) a(i, j) /= z;
    }
    return a;
}

// Per-token layer norm over the feature axis: each column is standardized
// (mean 0, population variance 1, eps inside the root) then scaled/shifted.
inline Matrix layer_norm_columns(const Matrix& z, const Matrix& gamma, const Matrix& beta, double eps) {
    require(gamma.rows == z.rows && gamma.cols == 1, "layer_norm: gamma shape");
    require(beta.rows == z.rows && beta.cols == 1, "layer_norm: beta shape");
    int d = z.rows;
    Matrix out(d, z.cols);
    for (int j = 0; j < z.cols; ++j) {
        double mu = 0.0;
        for (int i = 0; i < d; ++i) mu += z(i, j);
        mu /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) {
            double c = z(i, j) - mu;
            var += c * c;
        }
        var /= d;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int i = 0; i < d; ++i) out(i, j) = gamma(i, 0) * ((z(i, j) - mu) * inv) + beta(i, 0);
    }
    return out;
}

inline Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps) {
    require(x.cols == 1, "layer_norm: expected a column vector");
    return layer_norm_columns(x, gamma, beta, eps);
}

// Householder QR; returns Q (m x n, orthonormal columns) with the convention
// diag(R) >= 0 so the factorization is unique for full-rank input.
inline Matrix qr_orthonormal(const Matrix& a) {
    int m = a.rows, n = a.cols;
    require(m >= n, "qr_orthonormal: need rows >= cols");
    Matrix r = a;
    std::vector<std::vector<double>> hh; // householder vectors, longest first
    hh.reserve(n);
    for (int k = 0; k < n; ++k) {
        double nrm = 0.0;
        for (int i = k; i < m; ++i) nrm += r(i, k) * r(i, k);
        nrm = std::sqrt(nrm);
        std::vector<double> v(m - k, 0.0);
        if (nrm > 0.0) {
            double alpha = r(k, k) >= 0.0 ? -nrm : nrm;
            for (int i = k; i < m; ++i) v[i - k] = r(i, k);
            v[0] -= alpha;
            double vn = 0.0;
            for (double x : v) vn += x * x;
            vn = std::sqrt(vn);
            if (vn > 0.0)
                for (double& x : v) x /= vn;
            for (int j = k; j < n; ++j) { // apply H = I - 2 v v^T to trailing block
                double s = 0.0;
                for (int i = k; i < m; ++i) s += v[i - k] * r(i, j);
                s *= 2.0;
                for (int i = k; i < m; ++i) r(i, j) -= s * v[i - k];
            }
        }
        hh.push_back(std::move(v));
    }
    Matrix q(m, n); // accumulate Q = H_0 ... H_{n-1} applied to [I_n; 0]
    for (int j = 0; j < n; ++j) q(j, j) = 1.0;
    for (int k = n - 1; k >= 0; --k) {
        const std::vector<double>& v = hh[k];
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int i = k; i < m; ++i) s += v[i - k] * q(i, j);
            s *= 2.0;
            for (int i = k; i < m; ++i) q(i, j) -= s * v[i - k];
        }
    }
    for (int j = 0; j < n; ++j) { // flip columns where diag(R) < 0
        if (r(j, j) < 0.0)
            for (int i = 0; i < m; ++i) q(i, j) = -q(i, j);
    }
    return q;
}

// K orthonormal bases U_k in R^{d x p} with pairwise-orthogonal column spans,
// cut from one orthogonal d x d factor.
struct SubspaceFamily {
    int d = 0;
    int p = 0;
    std::vector<Matrix> bases;

    int count() const { return int(bases.size()); }
};

inline SubspaceFamily random_orthonormal_family(int d, int p, int k, Rng& rng) {
    require(d >= 1 && p >= 1 && k >= 1, "random_orthonormal_family: dims must be positive");
    if (std::size_t(k) * std::size_t(p) > std::size_t(d))
        throw DimensionError("random_orthonormal_family: K*p exceeds ambient dimension d");
    Matrix g = gaussian_matrix(d, d, rng);
    Matrix q = qr_orthonormal(g);
    SubspaceFamily fam;
    fam.d = d;
    fam.p = p;
    fam.bases.reserve(k);
    for (int i = 0; i < k; ++i) fam.bases.push_back(col_block(q, i * p, (i + 1) * p));
    return fam;
}

} // namespace wbmae
