#pragma once

#include <cmath>

#include "wbmae/linalg.hpp"
#include "wbmae/matrix.hpp"

namespace wbmae {

// Entries with |z| <= this count as zero for the l0 terms. Doubles almost
// never land exactly on 0 after arithmetic, so the count needs a tolerance;
// 1e-8 sits far below any post-ReLU activation scale seen here and far above
// accumulated rounding noise.
inline constexpr double kZeroTol = 1e-8;

// Quantization geometry for the rate objectives. alpha scales the Gram in
// the ambient rate, beta the per-subspace Grams; both follow from packing
// N tokens into eps-balls.
struct RateParams {
    int d = 0;       // ambient dimension
    int p = 0;       // per-subspace dimension
    int N = 0;       // token count
    double epsilon = 0.5;
    double lambda = 0.5; // l0 weight in the sparse rate reduction

    double alpha() const { return double(d) / (double(N) * epsilon * epsilon); }
    double beta() const { return double(p) / (double(N) * epsilon * epsilon); }
};

inline void check_rate_dims(const Matrix& z, const RateParams& params) {
    require(params.d > 0 && params.N > 0 && params.epsilon > 0.0, "rate: bad params");
    require(z.rows == params.d, "rate: Z row count != params.d");
    require(z.cols == params.N, "rate: Z column count != params.N");
}

// R(Z) = 1/2 log det(I_N + alpha Z^T Z)
inline double coding_rate(const Matrix& z, const RateParams& params) {
    check_rate_dims(z, params);
    Matrix g = multiply_At_B(z, z);
    double a = params.alpha();
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= a;
    for (int i = 0; i < g.rows; ++i) g(i, i) += 1.0;
    return 0.5 * logdet_psd(g);
}

// R^c(Z | U) = 1/2 sum_k log det(I_N + beta (U_k^T Z)^T (U_k^T Z))
inline double coding_rate_conditional(const Matrix& z, const SubspaceFamily& fam, const RateParams& params) {
    check_rate_dims(z, params);
    require(fam.d == z.rows, "coding_rate_conditional: family dimension != Z rows");
    require(fam.count() >= 1, "coding_rate_conditional: empty family");
    double b = params.beta();
    double total = 0.0;
    for (const Matrix& u : fam.bases) {
        Matrix w = multiply_At_B(u, z);
        Matrix g = multiply_At_B(w, w);
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= b;
        for (int i = 0; i < g.rows; ++i) g(i, i) += 1.0;
        total += 0.5 * logdet_psd(g);
    }
    return total;
}

inline long sparsity_count(const Matrix& z, double zero_tol = kZeroTol) {
    long n = 0;
    for (double v : z.data)
        if (std::abs(v) > zero_tol) ++n;
    return n;
}

// fraction of entries that are nonzero, in [0, 1]
inline double sparsity_measure(const Matrix& z, double zero_tol = kZeroTol) {
    if (z.size() == 0) return 0.0;
    return double(sparsity_count(z, zero_tol)) / double(z.size());
}

// R(Z) - R^c(Z | U) - lambda * ||Z||_0
inline double sparse_rate_reduction(const Matrix& z, const SubspaceFamily& fam, const RateParams& params,
                                    double zero_tol = kZeroTol) {
    return coding_rate(z, params) - coding_rate_conditional(z, fam, params)
         - params.lambda * double(sparsity_count(z, zero_tol));
}

// grad_Z R^c = sum_k U_k U_k^T Z (beta^{-1} I + (U_k^T Z)^T U_k^T Z)^{-1}.
// Each N x N inverse is applied through a Cholesky solve in the Gram domain,
// never formed explicitly.
inline Matrix grad_rc(const Matrix& z, const SubspaceFamily& fam, const RateParams& params) {
    check_rate_dims(z, params);
    require(fam.d == z.rows, "grad_rc: family dimension != Z rows");
    double binv = 1.0 / params.beta();
    Matrix grad(z.rows, z.cols);
    for (const Matrix& u : fam.bases) {
        Matrix w = multiply_At_B(u, z);       // p x N
        Matrix s = multiply_At_B(w, w);       // N x N
        for (int i = 0; i < s.rows; ++i) s(i, i) += binv;
        Matrix l = cholesky(s);
        Matrix m = cholesky_solve(l, transpose(w)); // N x p, equals S^{-1} w^T
        grad += multiply_A_Bt(u, m);          // U_k (w S^{-1})
    }
    return grad;
}

} // namespace wbmae
