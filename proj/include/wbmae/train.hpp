#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "wbmae/net.hpp"

namespace wbmae {

// ---------------------------------------------------------------------------
// masking

// Which token columns of the D x N patch matrix are zeroed before encoding.
struct MaskSpec {
    int n_tokens = 0;
    std::vector<int> masked; // strictly increasing column indices
};

// round(mu N) columns, chosen uniformly without replacement.
inline MaskSpec make_mask(double mu, int n_tokens, std::uint64_t seed) {
    if (!(mu >= 0.0 && mu <= 1.0)) throw MaskError("mask ratio must lie in [0, 1]");
    if (n_tokens < 1) throw MaskError("mask needs at least one token");
    int count = int(std::lround(mu * n_tokens));
    std::vector<int> idx(static_cast<std::size_t>(n_tokens));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        int j = i + int(rng.uniform_int(std::uint64_t(n_tokens - i)));
        std::swap(idx[std::size_t(i)], idx[std::size_t(j)]);
    }
    MaskSpec spec;
    spec.n_tokens = n_tokens;
    spec.masked.assign(idx.begin(), idx.begin() + count);
    std::sort(spec.masked.begin(), spec.masked.end());
    return spec;
}

inline Matrix mask_tokens(const Matrix& x, const MaskSpec& spec) {
    if (x.cols != spec.n_tokens) throw MaskError("mask built for a different token count");
    Matrix out = x;
    for (int j : spec.masked) {
        if (j < 0 || j >= x.cols) throw MaskError("mask index out of range");
        for (int i = 0; i < x.rows; ++i) out(i, j) = 0.0;
    }
    return out;
}

// Mean squared error over masked columns only, averaged over their entries.
inline double mae_loss(const Matrix& x_hat, const Matrix& x, const MaskSpec& spec) {
    require(x_hat.rows == x.rows && x_hat.cols == x.cols, "mae_loss: shape mismatch");
    if (x.cols != spec.n_tokens) throw MaskError("mask built for a different token count");
    if (spec.masked.empty()) return 0.0;
    double acc = 0.0;
    for (int j : spec.masked)
        for (int i = 0; i < x.rows; ++i) {
            double e = x_hat(i, j) - x(i, j);
            acc += e * e;
        }
    return acc / (double(x.rows) * double(spec.masked.size()));
}

inline Matrix mae_loss_backward(const Matrix& x_hat, const Matrix& x, const MaskSpec& spec) {
    require(x_hat.rows == x.rows && x_hat.cols == x.cols, "mae_loss: shape mismatch");
    Matrix g(x.rows, x.cols);
    if (spec.masked.empty()) return g;
    double scale = 2.0 / (double(x.rows) * double(spec.masked.size()));
    for (int j : spec.masked)
        for (int i = 0; i < x.rows; ++i) g(i, j) = scale * (x_hat(i, j) - x(i, j));
    return g;
}

// ---------------------------------------------------------------------------
// backward blocks; each mirrors one forward block and accumulates into the
// matching gradient tensors

inline Matrix layer_norm_backward(const Matrix& dout, const LayerNormParams& ln, const LnCache& c,
                                  Matrix& dgamma, Matrix& dbeta) {
    int d = dout.rows, m = dout.cols;
    Matrix din(d, m);
    for (int j = 0; j < m; ++j) {
        double m1 = 0.0, m2 = 0.0;
        for (int i = 0; i < d; ++i) {
            double dxh = dout(i, j) * ln.gamma(i, 0);
            m1 += dxh;
            m2 += dxh * c.xhat(i, j);
            dgamma(i, 0) += dout(i, j) * c.xhat(i, j);
            dbeta(i, 0) += dout(i, j);
        }
        m1 /= d;
        m2 /= d;
        double inv = c.inv_sd[std::size_t(j)];
        for (int i = 0; i < d; ++i) {
            double dxh = dout(i, j) * ln.gamma(i, 0);
            din(i, j) = inv * (dxh - m1 - c.xhat(i, j) * m2);
        }
    }
    return din;
}

// d/dG of softmax_columns applied column-wise: dG[:,j] = A[:,j] .* (dA[:,j] - <dA[:,j], A[:,j]>)
inline Matrix softmax_columns_backward(const Matrix& da, const Matrix& a) {
    Matrix dg(a.rows, a.cols);
    for (int j = 0; j < a.cols; ++j) {
        double dot = 0.0;
        for (int i = 0; i < a.rows; ++i) dot += da(i, j) * a(i, j);
        for (int i = 0; i < a.rows; ++i) dg(i, j) = a(i, j) * (da(i, j) - dot);
    }
    return dg;
}

// Network-mode attention backward. The head Gram feeds the softmax, so each
// head projection receives both the value path (dh A^T) and the similarity
// path (w (dG + dG^T) / sqrt(p)).
inline Matrix mssa_backward(const Matrix& dout, const Matrix& z_in, const AttentionParams& ap, int K,
                            const MssaCache& cache, Matrix& dW_qkv, Matrix& dW_out, Matrix& db_out) {
    int d = z_in.rows, M = z_in.cols;
    int p = d / K;
    Matrix dheads = multiply_At_B(ap.W_out, dout);
    {
        Matrix dwo = multiply_A_Bt(dout, cache.heads);
        dW_out += dwo;
        for (int i = 0; i < d; ++i) {
            double s = 0.0;
            for (int j = 0; j < M; ++j) s += dout(i, j);
            db_out(i, 0) += s;
        }
    }
    double scale = 1.0 / std::sqrt(double(p));
    Matrix dw(d, M);
    for (int k = 0; k < K; ++k) {
        Matrix wk = row_block(cache.w, k * p, (k + 1) * p);
        Matrix dh = row_block(dheads, k * p, (k + 1) * p);
        const Matrix& a = cache.attn[std::size_t(k)];
        Matrix dwk = multiply_A_Bt(dh, a); // h = w A
        Matrix da = multiply_At_B(wk, dh);
        Matrix dg = softmax_columns_backward(da, a);
        // G = scale w^T w, so dw += scale w (dG + dG^T)
        Matrix sym = dg;
        for (int i = 0; i < sym.rows; ++i)
            for (int j = 0; j < sym.cols; ++j) sym(i, j) = dg(i, j) + dg(j, i);
        Matrix via_g = multiply(wk, sym);
        for (int r = 0; r < p; ++r)
            for (int j = 0; j < M; ++j) dw(k * p + r, j) = dwk(r, j) + scale * via_g(r, j);
    }
    dW_qkv += multiply_A_Bt(dw, z_in);
    return multiply_At_B(ap.W_qkv, dw);
}

// dP is the post-ReLU gradient gated by the pre-activation sign.
inline Matrix ista_backward(const Matrix& dout, const Matrix& z_in, const Matrix& d_dict, double eta,
                            const Matrix& preact, Matrix& dD) {
    Matrix dp = dout;
    for (std::size_t i = 0; i < dp.size(); ++i)
        if (preact.data[i] <= 0.0) dp.data[i] = 0.0;
    Matrix q = multiply(d_dict, z_in);
    q -= z_in; // forward intermediate D Z - Z, recomputed
    // P = Z - eta D^T Q - eta lambda with Q = (D - I) Z
    Matrix dq = multiply(d_dict, dp);
    for (double& v : dq.data) v *= -eta; // dL/dQ = -eta D dP
    Matrix dz = dp;
    Matrix dz_via_q = multiply_At_B(d_dict, dq);
    dz_via_q -= dq; // (D - I)^T dQ
    dz += dz_via_q;
    Matrix dd_first = multiply_A_Bt(q, dp); // from D^T in P
    for (double& v : dd_first.data) v *= -eta;
    dD += dd_first;
    dD += multiply_A_Bt(dq, z_in); // from D inside Q
    return dz;
}

inline Matrix encoder_layer_backward(const Matrix& dout, const EncoderLayerParams& layer, const ModelConfig& cfg,
                                     const EncoderCache& c, EncoderLayerParams& g) {
    Matrix dln2 = ista_backward(dout, c.ln2_out, layer.D_dict, cfg.eta, c.preact, g.D_dict);
    Matrix dz_half = layer_norm_backward(dln2, layer.ln2, c.ln2c, g.ln2.gamma, g.ln2.beta);
    Matrix dln1 = mssa_backward(dz_half, c.ln1_out, layer.attn, cfg.K, c.mssa, g.attn.W_qkv, g.attn.W_out,
                                g.attn.b_out);
    Matrix dz = layer_norm_backward(dln1, layer.ln1, c.ln1c, g.ln1.gamma, g.ln1.beta);
    dz += dz_half; // residual branch around the attention block
    return dz;
}

inline Matrix decoder_layer_backward(const Matrix& dout, const DecoderLayerParams& layer, const ModelConfig& cfg,
                                     const DecoderCache& c, DecoderLayerParams& g) {
    // output = V - MSSA(V)
    Matrix neg = dout;
    for (double& v : neg.data) v = -v;
    Matrix dv = mssa_backward(neg, c.ln2_out, layer.attn, cfg.K, c.mssa, g.attn.W_qkv, g.attn.W_out, g.attn.b_out);
    dv += dout;
    Matrix dy_half = layer_norm_backward(dv, layer.ln2, c.ln2c, g.ln2.gamma, g.ln2.beta);
    g.E_dict += multiply_A_Bt(dy_half, c.ln1_out);
    Matrix dln1 = multiply_At_B(layer.E_dict, dy_half);
    return layer_norm_backward(dln1, layer.ln1, c.ln1c, g.ln1.gamma, g.ln1.beta);
}

inline ModelParams make_grad_buffer(const ModelParams& params) {
    ModelParams g;
    g.W_pre = Matrix(params.W_pre.rows, params.W_pre.cols);
    g.E_pos = Matrix(params.E_pos.rows, params.E_pos.cols);
    g.z_cls = Matrix(params.z_cls.rows, params.z_cls.cols);
    g.enc.resize(params.enc.size());
    for (std::size_t l = 0; l < params.enc.size(); ++l) {
        const EncoderLayerParams& e = params.enc[l];
        EncoderLayerParams& ge = g.enc[l];
        ge.ln1 = {Matrix(e.ln1.gamma.rows, 1), Matrix(e.ln1.beta.rows, 1)};
        ge.attn = {Matrix(e.attn.W_qkv.rows, e.attn.W_qkv.cols), Matrix(e.attn.W_out.rows, e.attn.W_out.cols),
                   Matrix(e.attn.b_out.rows, 1)};
        ge.ln2 = {Matrix(e.ln2.gamma.rows, 1), Matrix(e.ln2.beta.rows, 1)};
        ge.D_dict = Matrix(e.D_dict.rows, e.D_dict.cols);
    }
    g.dec.resize(params.dec.size());
    for (std::size_t l = 0; l < params.dec.size(); ++l) {
        const DecoderLayerParams& d = params.dec[l];
        DecoderLayerParams& gd = g.dec[l];
        gd.ln1 = {Matrix(d.ln1.gamma.rows, 1), Matrix(d.ln1.beta.rows, 1)};
        gd.E_dict = Matrix(d.E_dict.rows, d.E_dict.cols);
        gd.ln2 = {Matrix(d.ln2.gamma.rows, 1), Matrix(d.ln2.beta.rows, 1)};
        gd.attn = {Matrix(d.attn.W_qkv.rows, d.attn.W_qkv.cols), Matrix(d.attn.W_out.rows, d.attn.W_out.cols),
                   Matrix(d.attn.b_out.rows, 1)};
    }
    g.W_post = Matrix(params.W_post.rows, params.W_post.cols);
    g.has_head = params.has_head;
    if (params.has_head) {
        g.head.ln = {Matrix(params.head.ln.gamma.rows, 1), Matrix(params.head.ln.beta.rows, 1)};
        g.head.W_head = Matrix(params.head.W_head.rows, params.head.W_head.cols);
    }
    return g;
}

inline void zero_grads(ModelParams& g) {
    for (auto& [name, t] : tensor_list(g)) std::fill(t->data.begin(), t->data.end(), 0.0);
}

// Forward on the masked input, reconstruction loss against the clean input,
// full reverse sweep. Gradients accumulate into `grads`; returns the loss.
inline double model_loss_backward(const Matrix& x_clean, const MaskSpec& spec, const ModelParams& params,
                                  const ModelConfig& cfg, ModelParams& grads) {
    Matrix x_masked = mask_tokens(x_clean, spec);
    ModelCache cache;
    Matrix x_hat = model_forward(x_masked, params, cfg, nullptr, &cache);
    double loss = mae_loss(x_hat, x_clean, spec);
    Matrix dx_hat = mae_loss_backward(x_hat, x_clean, spec);

    // postprocess: X_hat = W_post Y[:, 1..N]
    const Matrix& y_final = cache.dec.back().output;
    Matrix y_img = col_block(y_final, 1, cfg.N + 1);
    grads.W_post += multiply_A_Bt(dx_hat, y_img);
    Matrix dy_img = multiply_At_B(params.W_post, dx_hat);
    Matrix dy(cfg.d, cfg.N + 1); // class-token column gets no loss signal
    for (int i = 0; i < cfg.d; ++i)
        for (int j = 0; j < cfg.N; ++j) dy(i, j + 1) = dy_img(i, j);

    for (int l = cfg.L - 1; l >= 0; --l)
        dy = decoder_layer_backward(dy, params.dec[std::size_t(l)], cfg, cache.dec[std::size_t(l)],
                                    grads.dec[std::size_t(l)]);
    for (int l = cfg.L - 1; l >= 0; --l)
        dy = encoder_layer_backward(dy, params.enc[std::size_t(l)], cfg, cache.enc[std::size_t(l)],
                                    grads.enc[std::size_t(l)]);

    // preprocess: col 0 = z_cls + E_pos[:,0]; col j+1 = W_pre x_j + E_pos[:,j+1]
    grads.E_pos += dy;
    for (int i = 0; i < cfg.d; ++i) grads.z_cls(i, 0) += dy(i, 0);
    Matrix dproj = col_block(dy, 1, cfg.N + 1);
    grads.W_pre += multiply_A_Bt(dproj, x_masked);
    return loss;
}

// ---------------------------------------------------------------------------
// optimizer

struct TrainHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    double mask_ratio = 0.75;
    int epochs = 1;
    int batch = 16;
    std::uint64_t seed = 0;
};

struct AdamState {
    long t = 0;
    ModelParams m;
    ModelParams v;
};

inline AdamState make_adam_state(const ModelParams& params) {
    AdamState s;
    s.m = make_grad_buffer(params);
    s.v = make_grad_buffer(params);
    return s;
}

// Decoupled weight decay: theta -= lr * (mhat / (sqrt(vhat) + eps) + wd * theta)
inline void adamw_step(ModelParams& params, const ModelParams& grads, AdamState& state, const TrainHyper& h) {
    state.t += 1;
    double bc1 = 1.0 - std::pow(h.beta1, double(state.t));
    double bc2 = 1.0 - std::pow(h.beta2, double(state.t));
    auto ps = tensor_list(params);
    auto gs = tensor_list(const_cast<ModelParams&>(grads));
    auto ms = tensor_list(state.m);
    auto vs = tensor_list(state.v);
    require(ps.size() == gs.size() && ps.size() == ms.size() && ps.size() == vs.size(),
            "adamw: parameter/gradient tensor lists disagree");
    for (std::size_t i = 0; i < ps.size(); ++i) {
        Matrix& th = *ps[i].second;
        const Matrix& g = *gs[i].second;
        Matrix& m = *ms[i].second;
        Matrix& v = *vs[i].second;
        for (std::size_t k = 0; k < th.size(); ++k) {
            m.data[k] = h.beta1 * m.data[k] + (1.0 - h.beta1) * g.data[k];
            v.data[k] = h.beta2 * v.data[k] + (1.0 - h.beta2) * g.data[k] * g.data[k];
            double mhat = m.data[k] / bc1;
            double vhat = v.data[k] / bc2;
            th.data[k] -= h.lr * (mhat / (std::sqrt(vhat) + h.adam_eps) + h.weight_decay * th.data[k]);
        }
    }
}

// ---------------------------------------------------------------------------
// training loop

struct StepRecord {
    int epoch = 0;
    int step = 0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<StepRecord> history;
    double initial_loss = 0.0; // mean loss over the first epoch's batches
    double final_loss = 0.0;   // mean loss over the last epoch's batches
};

// Sample order is reshuffled per epoch and every (epoch, sample) pair gets a
// fresh mask; both streams derive from the seed alone, so runs are replayable.
inline TrainResult train_loop(const std::vector<Matrix>& samples, ModelParams& params, const ModelConfig& cfg,
                              const TrainHyper& h, std::vector<MaskSpec>* eval_masks = nullptr) {
    require(!samples.empty(), "train_loop: empty dataset");
    require(h.epochs >= 1 && h.batch >= 1, "train_loop: bad epochs/batch");
    for (const Matrix& x : samples)
        require(x.rows == cfg.D() && x.cols == cfg.N, "train_loop: sample shape must be D x N");
    const int S = int(samples.size());
    ModelParams grads = make_grad_buffer(params);
    AdamState adam = make_adam_state(params);
    TrainResult res;
    if (eval_masks) eval_masks->clear();
    for (int e = 0; e < h.epochs; ++e) {
        std::vector<int> order(static_cast<std::size_t>(S));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(sub_seed(sub_seed(h.seed, 1), std::uint64_t(e)));
        for (int i = S - 1; i > 0; --i) {
            int j = int(shuffle_rng.uniform_int(std::uint64_t(i + 1)));
            std::swap(order[std::size_t(i)], order[std::size_t(j)]);
        }
        double epoch_loss = 0.0;
        int epoch_batches = 0;
        for (int start = 0; start < S; start += h.batch) {
            int end = std::min(S, start + h.batch);
            zero_grads(grads);
            double batch_loss = 0.0;
            for (int bi = start; bi < end; ++bi) {
                int idx = order[std::size_t(bi)];
                std::uint64_t mask_seed = sub_seed(sub_seed(sub_seed(h.seed, 2), std::uint64_t(e)),
                                                   std::uint64_t(idx));
                MaskSpec spec = make_mask(h.mask_ratio, cfg.N, mask_seed);
                if (eval_masks && e == 0) eval_masks->push_back(spec);
                batch_loss += model_loss_backward(samples[std::size_t(idx)], spec, params, cfg, grads);
            }
            int count = end - start;
            batch_loss /= count;
            double inv = 1.0 / double(count);
            for (auto& [name, t] : tensor_list(grads))
                for (double& vv : t->data) vv *= inv;
            adamw_step(params, grads, adam, h);
            res.history.push_back(StepRecord{e, int(res.history.size()), batch_loss});
            epoch_loss += batch_loss;
            epoch_batches += 1;
        }
        epoch_loss /= epoch_batches;
        if (e == 0) res.initial_loss = epoch_loss;
        if (e == h.epochs - 1) res.final_loss = epoch_loss;
    }
    return res;
}

// ---------------------------------------------------------------------------
// linear probe

// Multinomial logistic regression on standardized features (rows = samples).
// Every fifth sample is held out; returns held-out accuracy. Deterministic
// full-batch gradient descent, zero init.
inline double linear_probe(const Matrix& features, const std::vector<int>& labels, int classes,
                           double l2 = 1e-3, int iters = 500, double lr = 0.5) {
    require(features.rows == int(labels.size()), "linear_probe: one label per feature row");
    require(classes >= 2, "linear_probe: need at least two classes");
    int n = features.rows, d = features.cols;
    std::vector<int> train_idx, held_idx;
    for (int i = 0; i < n; ++i) (i % 5 == 4 ? held_idx : train_idx).push_back(i);
    if (held_idx.empty() || train_idx.empty()) throw DegenerateLabels("linear_probe: split produced an empty side");
    std::set<int> seen;
    for (int i : train_idx) {
        int y = labels[std::size_t(i)];
        require(y >= 0 && y < classes, "linear_probe: label out of range");
        seen.insert(y);
    }
    if (seen.size() < 2) throw DegenerateLabels("linear_probe: fewer than two classes in the training split");

    // standardize each feature column like a layer norm over the sample axis
    Matrix xs(n, d);
    for (int j = 0; j < d; ++j) {
        double mu = 0.0;
        for (int i = 0; i < n; ++i) mu += features(i, j);
        mu /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) {
            double cdev = features(i, j) - mu;
            var += cdev * cdev;
        }
        var /= n;
        double inv = 1.0 / std::sqrt(var + 1e-8);
        for (int i = 0; i < n; ++i) xs(i, j) = (features(i, j) - mu) * inv;
    }

    Matrix w(classes, d);
    std::vector<double> b(std::size_t(classes), 0.0);
    std::vector<double> logits(static_cast<std::size_t>(classes));
    Matrix gw(classes, d);
    std::vector<double> gb(static_cast<std::size_t>(classes));
    const double inv_train = 1.0 / double(train_idx.size());
    for (int it = 0; it < iters; ++it) {
        std::fill(gw.data.begin(), gw.data.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (int i : train_idx) {
            double mx = -1e300;
            for (int c = 0; c < classes; ++c) {
                double s = b[std::size_t(c)];
                for (int j = 0; j < d; ++j) s += w(c, j) * xs(i, j);
                logits[std::size_t(c)] = s;
                mx = std::max(mx, s);
            }
            double zsum = 0.0;
            for (int c = 0; c < classes; ++c) {
                logits[std::size_t(c)] = std::exp(logits[std::size_t(c)] - mx);
                zsum += logits[std::size_t(c)];
            }
            for (int c = 0; c < classes; ++c) {
                double pcls = logits[std::size_t(c)] / zsum;
                double err = pcls - (labels[std::size_t(i)] == c ? 1.0 : 0.0);
                gb[std::size_t(c)] += err;
                for (int j = 0; j < d; ++j) gw(c, j) += err * xs(i, j);
            }
        }
        for (int c = 0; c < classes; ++c) {
            b[std::size_t(c)] -= lr * gb[std::size_t(c)] * inv_train;
            for (int j = 0; j < d; ++j) w(c, j) -= lr * (gw(c, j) * inv_train + l2 * w(c, j));
        }
    }

    int hits = 0;
    for (int i : held_idx) {
        int best = 0;
        double best_s = -1e300;
        for (int c = 0; c < classes; ++c) {
            double s = b[std::size_t(c)];
            for (int j = 0; j < d; ++j) s += w(c, j) * xs(i, j);
            if (s > best_s) {
                best_s = s;
                best = c;
            }
        }
        if (best == labels[std::size_t(i)]) ++hits;
    }
    return double(hits) / double(held_idx.size());
}

} // namespace wbmae
