#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "wbmae/net.hpp"
#include "wbmae/rate.hpp"

namespace wbmae {

// Subspace family read off a trained attention projection: U_k is the
// transpose of head k's row block of W_qkv.
inline SubspaceFamily family_from_attention(const Matrix& w_qkv, int K) {
    require(w_qkv.rows == w_qkv.cols, "family_from_attention: W_qkv must be square");
    require(K >= 1 && w_qkv.rows % K == 0, "family_from_attention: K must divide d");
    int d = w_qkv.rows, p = d / K;
    SubspaceFamily fam;
    fam.d = d;
    fam.p = p;
    for (int k = 0; k < K; ++k) fam.bases.push_back(transpose(row_block(w_qkv, k * p, (k + 1) * p)));
    return fam;
}

struct LayerCurves {
    std::vector<double> compression; // conditional coding rate of Z^{l+1/2} against layer l's heads
    std::vector<double> sparsity;    // zero fraction of Z^{l+1}
};

// Per-layer statistics averaged over a batch of traces. The class token is
// excluded; rates use the layer's own attention subspaces.
inline LayerCurves layerwise_curves(const std::vector<Trace>& traces, const ModelParams& params,
                                    const ModelConfig& cfg, double rate_epsilon = 0.5) {
    require(!traces.empty(), "layerwise_curves: no traces");
    LayerCurves out;
    out.compression.assign(std::size_t(cfg.L), 0.0);
    out.sparsity.assign(std::size_t(cfg.L), 0.0);
    RateParams rp{cfg.d, cfg.p(), cfg.N, rate_epsilon, cfg.lambda};
    for (int l = 0; l < cfg.L; ++l) {
        SubspaceFamily fam = family_from_attention(params.enc[std::size_t(l)].attn.W_qkv, cfg.K);
        double rc = 0.0, sp = 0.0;
        for (const Trace& t : traces) {
            require(int(t.z_half.size()) == cfg.L && int(t.z_out.size()) == cfg.L,
                    "layerwise_curves: trace depth disagrees with the config");
            Matrix zh = col_block(t.z_half[std::size_t(l)], 1, cfg.N + 1);
            Matrix zo = col_block(t.z_out[std::size_t(l)], 1, cfg.N + 1);
            rc += coding_rate_conditional(zh, fam, rp);
            sp += sparsity_measure(zo, kZeroTol);
        }
        out.compression[std::size_t(l)] = rc / double(traces.size());
        out.sparsity[std::size_t(l)] = sp / double(traces.size());
    }
    return out;
}

// Attention weights of image tokens against the class token for one head:
// softmax over i of <w_k[:, i+1], w_k[:, 0]>.
inline std::vector<double> attention_map(const Matrix& z, const AttentionParams& ap, int head, int K) {
    int d = z.rows;
    require(ap.W_qkv.rows == d && ap.W_qkv.cols == d, "attention_map: W_qkv must be d x d");
    require(K >= 1 && d % K == 0 && head >= 0 && head < K, "attention_map: bad head index");
    require(z.cols >= 2, "attention_map: need the class token plus at least one image token");
    int p = d / K;
    Matrix wk = multiply(row_block(ap.W_qkv, head * p, (head + 1) * p), z);
    int n = z.cols - 1;
    std::vector<double> scores(static_cast<std::size_t>(n));
    double mx = -1e300;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int r = 0; r < p; ++r) s += wk(r, i + 1) * wk(r, 0);
        scores[std::size_t(i)] = s;
        mx = std::max(mx, s);
    }
    double zsum = 0.0;
    for (double& s : scores) {
        s = std::exp(s - mx);
        zsum += s;
    }
    for (double& s : scores) s /= zsum;
    return scores;
}

namespace detail {

// Dominant eigenvector of a symmetric PSD matrix by power iteration.
// Deterministic all-ones start with the same basis-bump fallback used for
// operator norms.
inline std::vector<double> top_eigenvector(const Matrix& m, int iters = 2000, double tol = 1e-12) {
    int d = m.rows;
    std::vector<double> v(std::size_t(d), 1.0 / std::sqrt(double(d)));
    std::vector<double> next(static_cast<std::size_t>(d));
    double prev = 0.0;
    for (int it = 0; it < iters; ++it) {
        for (int i = 0; i < d; ++i) {
            double s = 0.0;
            for (int j = 0; j < d; ++j) s += m(i, j) * v[std::size_t(j)];
            next[std::size_t(i)] = s;
        }
        double norm = 0.0;
        for (double x : next) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) {
            std::fill(v.begin(), v.end(), 0.0);
            v[std::size_t(it % d)] = 1.0;
            continue;
        }
        for (int i = 0; i < d; ++i) v[std::size_t(i)] = next[std::size_t(i)] / norm;
        if (std::abs(norm - prev) <= tol * std::max(1.0, norm)) break;
        prev = norm;
    }
    return v;
}

} // namespace detail

// Foreground/background split plus an RGB embedding of token identity.
// Tokens are mapped through the attention projection (the stacked per-head
// coordinates); the top principal direction of the uncentered second moment
// separates foreground (large |projection|) from background. Survivors are
// colored by their coordinates along the top three principal directions of
// the foreground-only second moment, min-max normalized per channel.
struct TokenViz {
    int grid_h = 0, grid_w = 0;
    std::vector<std::array<double, 3>> rgb; // per token, raster order; background is black
    std::vector<bool> foreground;
};

inline std::vector<TokenViz> pca_token_visualization(const std::vector<Matrix>& token_batches,
                                                     const AttentionParams& ap, int grid_h, int grid_w,
                                                     double threshold_percentile = 60.0) {
    require(!token_batches.empty(), "pca viz: no token batches");
    require(grid_h >= 1 && grid_w >= 1, "pca viz: bad grid");
    int d = ap.W_qkv.rows;
    int n = grid_h * grid_w;

    std::vector<Matrix> projected; // d x N per image, class token stripped
    for (const Matrix& z : token_batches) {
        require(z.rows == d && z.cols == n + 1, "pca viz: token batch must be d x (N+1)");
        projected.push_back(multiply(ap.W_qkv, col_block(z, 1, n + 1)));
    }

    Matrix second(d, d);
    for (const Matrix& w : projected)
        for (int j = 0; j < n; ++j)
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b) second(a, b) += w(a, j) * w(b, j);
    std::vector<double> u0 = detail::top_eigenvector(second);

    std::vector<double> mags;
    std::vector<std::vector<double>> proj0(projected.size());
    for (std::size_t im = 0; im < projected.size(); ++im) {
        proj0[im].assign(std::size_t(n), 0.0);
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int a = 0; a < d; ++a) s += u0[std::size_t(a)] * projected[im](a, j);
            proj0[im][std::size_t(j)] = s;
            mags.push_back(std::abs(s));
        }
    }
    std::sort(mags.begin(), mags.end());
    std::size_t cut = std::size_t(std::ceil(threshold_percentile / 100.0 * double(mags.size())));
    cut = std::min(std::max<std::size_t>(cut, 1), mags.size());
    double threshold = mags[cut - 1];

    Matrix fg_second(d, d);
    std::size_t fg_count = 0;
    for (std::size_t im = 0; im < projected.size(); ++im)
        for (int j = 0; j < n; ++j)
            if (std::abs(proj0[im][std::size_t(j)]) >= threshold) {
                ++fg_count;
                for (int a = 0; a < d; ++a)
                    for (int b = 0; b < d; ++b) fg_second(a, b) += projected[im](a, j) * projected[im](b, j);
            }

    std::array<std::vector<double>, 3> dirs;
    if (fg_count > 0) {
        Matrix work = fg_second;
        for (int c = 0; c < 3; ++c) {
            dirs[std::size_t(c)] = detail::top_eigenvector(work);
            const std::vector<double>& u = dirs[std::size_t(c)];
            double lam = 0.0;
            for (int a = 0; a < d; ++a) {
                double s = 0.0;
                for (int b = 0; b < d; ++b) s += work(a, b) * u[std::size_t(b)];
                lam += u[std::size_t(a)] * s;
            }
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b) work(a, b) -= lam * u[std::size_t(a)] * u[std::size_t(b)];
        }
    }

    std::array<double, 3> lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
    std::vector<std::vector<std::array<double, 3>>> coords(projected.size());
    for (std::size_t im = 0; im < projected.size(); ++im) {
        coords[im].assign(std::size_t(n), {0.0, 0.0, 0.0});
        for (int j = 0; j < n; ++j) {
            if (std::abs(proj0[im][std::size_t(j)]) < threshold || fg_count == 0) continue;
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int a = 0; a < d; ++a) s += dirs[std::size_t(c)][std::size_t(a)] * projected[im](a, j);
                coords[im][std::size_t(j)][std::size_t(c)] = s;
                lo[std::size_t(c)] = std::min(lo[std::size_t(c)], s);
                hi[std::size_t(c)] = std::max(hi[std::size_t(c)], s);
            }
        }
    }

    std::vector<TokenViz> out(projected.size());
    for (std::size_t im = 0; im < projected.size(); ++im) {
        TokenViz& tv = out[im];
        tv.grid_h = grid_h;
        tv.grid_w = grid_w;
        tv.rgb.assign(std::size_t(n), {0.0, 0.0, 0.0});
        tv.foreground.assign(std::size_t(n), false);
        for (int j = 0; j < n; ++j) {
            bool fg = fg_count > 0 && std::abs(proj0[im][std::size_t(j)]) >= threshold;
            tv.foreground[std::size_t(j)] = fg;
            if (!fg) continue;
            for (int c = 0; c < 3; ++c) {
                double span = hi[std::size_t(c)] - lo[std::size_t(c)];
                double v = coords[im][std::size_t(j)][std::size_t(c)];
                tv.rgb[std::size_t(j)][std::size_t(c)] = span > 0.0 ? (v - lo[std::size_t(c)]) / span : 0.5;
            }
        }
    }
    return out;
}

} // namespace wbmae
