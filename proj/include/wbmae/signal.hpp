#pragma once

#include <numeric>
#include <vector>

#include "wbmae/linalg.hpp"
#include "wbmae/matrix.hpp"
#include "wbmae/rate.hpp"
#include "wbmae/rng.hpp"

namespace wbmae {

// Token model: z_i = U_{s_i} alpha_i + delta_i with s_i uniform over K
// subspaces, alpha_i ~ N(0, I_p / p), delta_i ~ N(0, sigma^2/d I_d).
struct SignalConfig {
    int d = 0;
    int p = 0;
    int K = 0;
    int N = 0;
    double sigma = 0.0;
    RateParams params;
};

inline SignalConfig make_signal_config(int d, int p, int k, int n, double sigma, double epsilon,
                                       double lambda = 0.5) {
    require(d >= 1 && p >= 1 && k >= 1 && n >= 1, "signal config: dims must be positive");
    require(std::size_t(k) * std::size_t(p) <= std::size_t(d), "signal config: K*p exceeds d");
    require(sigma >= 0.0 && epsilon > 0.0, "signal config: sigma >= 0, epsilon > 0 required");
    SignalConfig cfg;
    cfg.d = d;
    cfg.p = p;
    cfg.K = k;
    cfg.N = n;
    cfg.sigma = sigma;
    cfg.params = RateParams{d, p, n, epsilon, lambda};
    return cfg;
}

// One draw, kept in both the observed token order and the class-blocked
// order. perm maps observed index i to its blocked position, so
// X_nat[:, i] = blocked[:, perm[i]] and inv_perm undoes it.
struct SignalSample {
    SignalConfig cfg;
    SubspaceFamily family;
    Matrix Z;                        // d x N observed tokens
    Matrix X_nat;                    // noiseless part
    Matrix Delta;                    // noise part, Z = X_nat + Delta exactly
    std::vector<int> assign;         // s_i in [0, K)
    std::vector<int> counts;         // per-class token counts K_k
    std::vector<Matrix> coeff_blocks; // A_k, p x K_k, columns in ascending token index
    std::vector<int> perm;           // observed -> blocked position
    std::vector<int> inv_perm;       // blocked position -> observed
};

// Draw order is pinned (assignments, then coefficients, then noise) and the
// noise uses sigma only as a scale on standard normals, so two samples from
// the same seed at different sigma share every underlying draw. The theory
// sweeps rely on that pairing.
inline SignalSample sample_tokens(const SignalConfig& cfg, const SubspaceFamily& family, Rng& rng) {
    require(family.d == cfg.d && family.p == cfg.p && family.count() == cfg.K,
            "sample_tokens: family does not match config");
    SignalSample s;
    s.cfg = cfg;
    s.family = family;
    s.assign.resize(cfg.N);
    for (int i = 0; i < cfg.N; ++i) s.assign[i] = int(rng.uniform_int(cfg.K));
    Matrix alpha(cfg.p, cfg.N);
    double cscale = 1.0 / std::sqrt(double(cfg.p));
    for (int i = 0; i < cfg.N; ++i)
        for (int r = 0; r < cfg.p; ++r) alpha(r, i) = rng.normal() * cscale;
    double nscale = cfg.sigma / std::sqrt(double(cfg.d));
    s.Delta = Matrix(cfg.d, cfg.N);
    for (int i = 0; i < cfg.N; ++i)
        for (int r = 0; r < cfg.d; ++r) s.Delta(r, i) = rng.normal() * nscale;

    s.X_nat = Matrix(cfg.d, cfg.N);
    for (int i = 0; i < cfg.N; ++i) {
        const Matrix& u = family.bases[s.assign[i]];
        for (int r = 0; r < cfg.d; ++r) {
            double acc = 0.0;
            for (int c = 0; c < cfg.p; ++c) acc += u(r, c) * alpha(c, i);
            s.X_nat(r, i) = acc;
        }
    }
    s.Z = s.X_nat + s.Delta;

    s.counts.assign(cfg.K, 0);
    for (int v : s.assign) ++s.counts[v];
    s.inv_perm.reserve(cfg.N);
    for (int k = 0; k < cfg.K; ++k)
        for (int i = 0; i < cfg.N; ++i)
            if (s.assign[i] == k) s.inv_perm.push_back(i);
    s.perm.resize(cfg.N);
    for (int pos = 0; pos < cfg.N; ++pos) s.perm[s.inv_perm[pos]] = pos;

    s.coeff_blocks.reserve(cfg.K);
    int off = 0;
    for (int k = 0; k < cfg.K; ++k) {
        Matrix a(cfg.p, s.counts[k]);
        for (int c = 0; c < s.counts[k]; ++c) {
            int i = s.inv_perm[off + c];
            for (int r = 0; r < cfg.p; ++r) a(r, c) = alpha(r, i);
        }
        s.coeff_blocks.push_back(std::move(a));
        off += s.counts[k];
    }
    return s;
}

namespace detail {

// Per-class pieces of P_k = sum_{k' != k} U_{k'} (I - A_{k'} S_{k'}^{-1} A_{k'}^T) U_{k'}^T
// with S_{k'} = beta^{-1} I + A_{k'}^T A_{k'}; the Cholesky factors are shared
// across blocks.
struct ProjectionPieces {
    std::vector<Matrix> chol; // factor of S_k, possibly 0x0 when class k is empty
};

inline ProjectionPieces projection_pieces(const SignalSample& s, double beta) {
    ProjectionPieces pp;
    pp.chol.reserve(s.cfg.K);
    for (int k = 0; k < s.cfg.K; ++k) {
        const Matrix& a = s.coeff_blocks[k];
        if (a.cols == 0) {
            pp.chol.emplace_back();
            continue;
        }
        Matrix g = multiply_At_B(a, a);
        for (int i = 0; i < g.rows; ++i) g(i, i) += 1.0 / beta;
        pp.chol.push_back(cholesky(g));
    }
    return pp;
}

// (I - A_k S_k^{-1} A_k^T) applied inside subspace k', then lifted by U_{k'}
inline Matrix apply_single_projection(const SignalSample& s, const ProjectionPieces& pp, int kp,
                                      const Matrix& cols) {
    const Matrix& u = s.family.bases[kp];
    const Matrix& a = s.coeff_blocks[kp];
    Matrix v = multiply_At_B(u, cols); // p x m
    if (a.cols > 0) {
        Matrix av = multiply_At_B(a, v);               // K_k x m
        Matrix sv = cholesky_solve(pp.chol[kp], av);   // S^{-1} A^T v
        v -= multiply(a, sv);
    }
    return multiply(u, v);
}

} // namespace detail

// Applies the blockwise nominal projection: M is taken in observed token
// order, permuted into class blocks, block k is hit with P_k, and the result
// is permuted back. Classes with zero tokens contribute an empty block.
inline Matrix nominal_projection_apply(const SignalSample& s, const Matrix& m) {
    require(m.rows == s.cfg.d && m.cols == s.cfg.N, "nominal_projection_apply: shape mismatch");
    double beta = s.cfg.params.beta();
    detail::ProjectionPieces pp = detail::projection_pieces(s, beta);
    Matrix blocked(m.rows, m.cols);
    for (int pos = 0; pos < s.cfg.N; ++pos)
        for (int r = 0; r < m.rows; ++r) blocked(r, pos) = m(r, s.inv_perm[pos]);
    Matrix out_blocked(m.rows, m.cols);
    int off = 0;
    for (int k = 0; k < s.cfg.K; ++k) {
        int n_k = s.counts[k];
        if (n_k == 0) continue;
        Matrix block = col_block(blocked, off, off + n_k);
        Matrix acc(m.rows, n_k);
        for (int kp = 0; kp < s.cfg.K; ++kp) {
            if (kp == k) continue;
            acc += detail::apply_single_projection(s, pp, kp, block);
        }
        for (int c = 0; c < n_k; ++c)
            for (int r = 0; r < m.rows; ++r) out_blocked(r, off + c) = acc(r, c);
        off += n_k;
    }
    Matrix out(m.rows, m.cols);
    for (int pos = 0; pos < s.cfg.N; ++pos)
        for (int r = 0; r < m.rows; ++r) out(r, s.inv_perm[pos]) = out_blocked(r, pos);
    return out;
}

// P_k as an explicit d x d matrix, for direct comparison against its
// large-beta orthogonal-projection limit.
inline Matrix nominal_projection_matrix(const SignalSample& s, int k) {
    require(0 <= k && k < s.cfg.K, "nominal_projection_matrix: bad class index");
    double beta = s.cfg.params.beta();
    detail::ProjectionPieces pp = detail::projection_pieces(s, beta);
    Matrix eye = Matrix::identity(s.cfg.d);
    Matrix out(s.cfg.d, s.cfg.d);
    for (int kp = 0; kp < s.cfg.K; ++kp) {
        if (kp == k) continue;
        out += detail::apply_single_projection(s, pp, kp, eye);
    }
    return out;
}

// One gradient-descent step on the conditional rate: Z - eta grad R^c(Z | U)
inline Matrix compression_step(const SignalSample& s, double eta) {
    Matrix g = grad_rc(s.Z, s.family, s.cfg.params);
    Matrix out = s.Z;
    axpy(-eta, g, out);
    return out;
}

} // namespace wbmae
