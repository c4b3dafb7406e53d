#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "wbmae/linalg.hpp"
#include "wbmae/matrix.hpp"
#include "wbmae/rng.hpp"

namespace wbmae {

// Tokens live in columns throughout: a token matrix is d x M with M = N+1
// (column 0 is the class token). Attention heads are row blocks of W_qkv, so
// head k's subspace basis is U_k = (rows [k p, (k+1) p) of W_qkv)^T.
struct ModelConfig {
    int L = 0;        // encoder depth; the decoder mirrors it
    int d = 0;        // token dimension
    int K = 0;        // heads / subspaces, p = d / K
    int N = 0;        // image tokens (class token excluded)
    int patch_h = 0;
    int patch_w = 0;
    int channels = 0;
    double eta = 0.1;    // ISTA step size
    double lambda = 0.5; // ISTA sparsity weight
    double ln_eps = 1e-5;
    int head_classes = 0; // 0: no classification head

    int p() const { return d / K; }
    int D() const { return patch_h * patch_w * channels; }
    int tokens() const { return N + 1; }
};

inline void validate_model_config(const ModelConfig& cfg) {
    require(cfg.L >= 1 && cfg.d >= 1 && cfg.K >= 1 && cfg.N >= 1, "model config: dims must be positive");
    require(cfg.d % cfg.K == 0, "model config: d must be divisible by K");
    require(cfg.patch_h >= 1 && cfg.patch_w >= 1 && cfg.channels >= 1, "model config: bad patch shape");
    require(cfg.eta > 0.0 && cfg.lambda >= 0.0 && cfg.ln_eps > 0.0, "model config: bad scalars");
    require(cfg.head_classes >= 0, "model config: head_classes must be >= 0");
}

inline ModelConfig toy_config() {
    ModelConfig c;
    c.L = 4; c.d = 64; c.K = 8; c.N = 16;
    c.patch_h = 4; c.patch_w = 4; c.channels = 1;
    return c;
}

inline ModelConfig small_config() {
    ModelConfig c;
    c.L = 12; c.d = 576; c.K = 12; c.N = 196;
    c.patch_h = 16; c.patch_w = 16; c.channels = 3;
    return c;
}

inline ModelConfig base_config() {
    ModelConfig c;
    c.L = 12; c.d = 768; c.K = 12; c.N = 196;
    c.patch_h = 16; c.patch_w = 16; c.channels = 3;
    return c;
}

struct LayerNormParams {
    Matrix gamma; // d x 1
    Matrix beta;  // d x 1
};

struct AttentionParams {
    Matrix W_qkv;  // d x d, no bias
    Matrix W_out;  // d x d
    Matrix b_out;  // d x 1
};

struct EncoderLayerParams {
    LayerNormParams ln1;
    AttentionParams attn;
    LayerNormParams ln2;
    Matrix D_dict; // d x d, no bias
};

struct DecoderLayerParams {
    LayerNormParams ln1;
    Matrix E_dict; // d x d linear expansion, no bias
    LayerNormParams ln2;
    AttentionParams attn;
};

struct HeadParams {
    LayerNormParams ln;
    Matrix W_head; // C x d
};

struct ModelParams {
    Matrix W_pre; // d x D
    Matrix E_pos; // d x (N+1), column 0 belongs to the class token
    Matrix z_cls; // d x 1
    std::vector<EncoderLayerParams> enc;
    std::vector<DecoderLayerParams> dec;
    Matrix W_post; // D x d
    bool has_head = false;
    HeadParams head;
};

// Canonical tensor enumeration; checkpoint layout, gradient buffers and the
// optimizer all iterate in exactly this order.
inline std::vector<std::pair<std::string, Matrix*>> tensor_list(ModelParams& p) {
    std::vector<std::pair<std::string, Matrix*>> out;
    out.emplace_back("W_pre", &p.W_pre);
    out.emplace_back("E_pos", &p.E_pos);
    out.emplace_back("z_cls", &p.z_cls);
    for (std::size_t l = 0; l < p.enc.size(); ++l) {
        std::string base = "enc" + std::to_string(l) + ".";
        EncoderLayerParams& e = p.enc[l];
        out.emplace_back(base + "ln1.gamma", &e.ln1.gamma);
        out.emplace_back(base + "ln1.beta", &e.ln1.beta);
        out.emplace_back(base + "W_qkv", &e.attn.W_qkv);
        out.emplace_back(base + "W_out", &e.attn.W_out);
        out.emplace_back(base + "b_out", &e.attn.b_out);
        out.emplace_back(base + "ln2.gamma", &e.ln2.gamma);
        out.emplace_back(base + "ln2.beta", &e.ln2.beta);
        out.emplace_back(base + "D_dict", &e.D_dict);
    }
    for (std::size_t l = 0; l < p.dec.size(); ++l) {
        std::string base = "dec" + std::to_string(l) + ".";
        DecoderLayerParams& d = p.dec[l];
        out.emplace_back(base + "ln1.gamma", &d.ln1.gamma);
        out.emplace_back(base + "ln1.beta", &d.ln1.beta);
        out.emplace_back(base + "E_dict", &d.E_dict);
        out.emplace_back(base + "ln2.gamma", &d.ln2.gamma);
        out.emplace_back(base + "ln2.beta", &d.ln2.beta);
        out.emplace_back(base + "W_qkv", &d.attn.W_qkv);
        out.emplace_back(base + "W_out", &d.attn.W_out);
        out.emplace_back(base + "b_out", &d.attn.b_out);
    }
    out.emplace_back("W_post", &p.W_post);
    if (p.has_head) {
        out.emplace_back("head.ln.gamma", &p.head.ln.gamma);
        out.emplace_back("head.ln.beta", &p.head.ln.beta);
        out.emplace_back("head.W_head", &p.head.W_head);
    }
    return out;
}

inline std::vector<std::pair<std::string, const Matrix*>> tensor_list(const ModelParams& p) {
    auto mut = tensor_list(const_cast<ModelParams&>(p));
    std::vector<std::pair<std::string, const Matrix*>> out;
    out.reserve(mut.size());
    for (auto& [name, ptr] : mut) out.emplace_back(name, ptr);
    return out;
}

inline long count_parameters(const ModelConfig& cfg) {
    validate_model_config(cfg);
    long d = cfg.d, D = cfg.D(), L = cfg.L, N = cfg.N;
    long pre = d * D + d * (N + 1) + d;
    long per_enc = 4 * d + 3 * d * d + d; // two LNs, W_qkv, W_out (+bias), D_dict
    long per_dec = 4 * d + 3 * d * d + d; // two LNs, E_dict, W_qkv, W_out (+bias)
    long post = D * d;
    long head = cfg.head_classes > 0 ? 2 * d + long(cfg.head_classes) * d : 0;
    return pre + L * per_enc + L * per_dec + post + head;
}

// Weight matrices ~ Uniform(+-sqrt(6/fan_in)); LN affines start at identity;
// biases at zero; class token and positional table ~ N(0, 0.02^2). Tensors
// are filled in canonical order, so the draw sequence is seed-determined.
inline ModelParams init_parameters(const ModelConfig& cfg, Rng& rng) {
    validate_model_config(cfg);
    int d = cfg.d, D = cfg.D(), M = cfg.tokens();
    auto uniform_fill = [&rng](Matrix& m, int fan_in) {
        double bound = std::sqrt(6.0 / double(fan_in));
        for (double& v : m.data) v = rng.uniform(-bound, bound);
    };
    auto normal_fill = [&rng](Matrix& m, double sd) {
        for (double& v : m.data) v = rng.normal() * sd;
    };
    auto fresh_ln = [d]() {
        LayerNormParams ln{Matrix(d, 1), Matrix(d, 1)};
        for (double& v : ln.gamma.data) v = 1.0;
        return ln;
    };
    ModelParams p;
    p.W_pre = Matrix(d, D);
    uniform_fill(p.W_pre, D);
    p.E_pos = Matrix(d, M);
    normal_fill(p.E_pos, 0.02);
    p.z_cls = Matrix(d, 1);
    normal_fill(p.z_cls, 0.02);
    p.enc.resize(std::size_t(cfg.L));
    for (EncoderLayerParams& e : p.enc) {
        e.ln1 = fresh_ln();
        e.attn.W_qkv = Matrix(d, d);
        uniform_fill(e.attn.W_qkv, d);
        e.attn.W_out = Matrix(d, d);
        uniform_fill(e.attn.W_out, d);
        e.attn.b_out = Matrix(d, 1);
        e.ln2 = fresh_ln();
        e.D_dict = Matrix(d, d);
        uniform_fill(e.D_dict, d);
    }
    p.dec.resize(std::size_t(cfg.L));
    for (DecoderLayerParams& dd : p.dec) {
        dd.ln1 = fresh_ln();
        dd.E_dict = Matrix(d, d);
        uniform_fill(dd.E_dict, d);
        dd.ln2 = fresh_ln();
        dd.attn.W_qkv = Matrix(d, d);
        uniform_fill(dd.attn.W_qkv, d);
        dd.attn.W_out = Matrix(d, d);
        uniform_fill(dd.attn.W_out, d);
        dd.attn.b_out = Matrix(d, 1);
    }
    p.W_post = Matrix(D, d);
    uniform_fill(p.W_post, d);
    if (cfg.head_classes > 0) {
        p.has_head = true;
        p.head.ln = fresh_ln();
        p.head.W_head = Matrix(cfg.head_classes, d);
        uniform_fill(p.head.W_head, d);
    }
    return p;
}

// ---------------------------------------------------------------------------
// forward blocks

struct LnCache {
    Matrix xhat;                 // standardized input
    std::vector<double> inv_sd;  // per-column 1/sqrt(var + eps)
};

inline Matrix layer_norm_columns_cached(const Matrix& z, const LayerNormParams& ln, double eps, LnCache& cache) {
    int d = z.rows;
    cache.xhat = Matrix(d, z.cols);
    cache.inv_sd.assign(std::size_t(z.cols), 0.0);
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
        cache.inv_sd[std::size_t(j)] = inv;
        for (int i = 0; i < d; ++i) {
            double xh = (z(i, j) - mu) * inv;
            cache.xhat(i, j) = xh;
            out(i, j) = ln.gamma(i, 0) * xh + ln.beta(i, 0);
        }
    }
    return out;
}

enum class MssaMode { network, math };

struct MssaCache {
    Matrix w;                 // W_qkv Z, d x M
    std::vector<Matrix> attn; // per head, M x M, columns stochastic
    Matrix heads;             // concatenated head outputs, d x M
};

// Multi-head subspace self-attention. Query/key/value share one projection;
// per head the similarity matrix of the projected tokens is passed through a
// column-wise softmax and used to average the projections themselves.
//   network: softmax((w_k^T w_k) / sqrt(p)), output W_out [heads] + bias
//   math:    softmax(w_k^T w_k) literally, output beta W_qkv^T [heads]
// The math form is the analytic operator whose residual step approximates one
// gradient iteration on the conditional coding rate.
inline Matrix mssa_forward(const Matrix& z, const AttentionParams& ap, int K, MssaMode mode, double beta = 1.0,
                           MssaCache* cache = nullptr) {
    int d = z.rows, M = z.cols;
    require(ap.W_qkv.rows == d && ap.W_qkv.cols == d, "mssa: W_qkv must be d x d");
    require(K >= 1 && d % K == 0, "mssa: K must divide d");
    int p = d / K;
    Matrix w = multiply(ap.W_qkv, z);
    Matrix heads(d, M);
    MssaCache local;
    MssaCache& c = cache ? *cache : local;
    if (cache) c.attn.clear();
    double scale = mode == MssaMode::network ? 1.0 / std::sqrt(double(p)) : 1.0;
    for (int k = 0; k < K; ++k) {
        Matrix wk = row_block(w, k * p, (k + 1) * p);
        Matrix g = multiply_At_B(wk, wk);
        if (scale != 1.0)
            for (double& v : g.data) v *= scale;
        Matrix a = softmax_columns(g);
        Matrix hk = multiply(wk, a); // column i mixes value tokens with attention column i
        for (int r = 0; r < p; ++r)
            for (int j = 0; j < M; ++j) heads(k * p + r, j) = hk(r, j);
        if (cache) c.attn.push_back(std::move(a));
    }
    if (cache) {
        c.w = std::move(w);
        c.heads = heads;
    }
    if (mode == MssaMode::network) {
        require(ap.W_out.rows == d && ap.W_out.cols == d, "mssa: W_out must be d x d");
        require(ap.b_out.rows == d && ap.b_out.cols == 1, "mssa: b_out must be d x 1");
        Matrix out = multiply(ap.W_out, heads);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < M; ++j) out(i, j) += ap.b_out(i, 0);
        return out;
    }
    Matrix out = multiply_At_B(ap.W_qkv, heads); // [U_1 ... U_K] stacked back
    for (double& v : out.data) v *= beta;
    return out;
}

// Packs an orthonormal family into a W_qkv so the math-mode operator can be
// driven by explicit subspaces. Requires K p = d (complete family).
inline AttentionParams family_to_attention(const SubspaceFamily& fam) {
    require(fam.count() * fam.p == fam.d, "family_to_attention: need K*p == d");
    AttentionParams ap;
    ap.W_qkv = Matrix(fam.d, fam.d);
    for (int k = 0; k < fam.count(); ++k)
        for (int r = 0; r < fam.p; ++r)
            for (int col = 0; col < fam.d; ++col) ap.W_qkv(k * fam.p + r, col) = fam.bases[std::size_t(k)](col, r);
    ap.W_out = Matrix::identity(fam.d);
    ap.b_out = Matrix(fam.d, 1);
    return ap;
}

// ISTA(Z | D) = ReLU(Z - eta D^T (D Z - Z) - eta lambda). One proximal step
// on the lasso with dictionary D; the ReLU is the nonnegative shrinkage.
inline Matrix ista_forward(const Matrix& z, const Matrix& d_dict, double eta, double lambda,
                           Matrix* preact = nullptr) {
    require(d_dict.rows == z.rows && d_dict.cols == z.rows, "ista: dictionary must be d x d");
    Matrix q = multiply(d_dict, z);
    q -= z; // D Z - Z
    Matrix p = multiply_At_B(d_dict, q);
    for (std::size_t i = 0; i < p.size(); ++i) p.data[i] = z.data[i] - eta * p.data[i] - eta * lambda;
    if (preact) *preact = p;
    for (double& v : p.data) v = v > 0.0 ? v : 0.0;
    return p;
}

struct EncoderCache {
    Matrix input;
    LnCache ln1c;
    Matrix ln1_out;
    MssaCache mssa;
    Matrix z_half;
    LnCache ln2c;
    Matrix ln2_out;
    Matrix preact;
    Matrix output;
};

struct DecoderCache {
    Matrix input;
    LnCache ln1c;
    Matrix ln1_out;
    Matrix y_half;  // E ln1(Y)
    LnCache ln2c;
    Matrix ln2_out; // V
    MssaCache mssa; // attention on V
    Matrix output;  // V - MSSA(V)
};

// Z_half = Z + MSSA(LN1 Z); output = ISTA(LN2 Z_half). The sparsifying step
// replaces the stream rather than adding to it.
inline Matrix encoder_layer_forward(const Matrix& z, const EncoderLayerParams& layer, const ModelConfig& cfg,
                                    EncoderCache* cache = nullptr) {
    EncoderCache local;
    EncoderCache& c = cache ? *cache : local;
    if (cache) c.input = z;
    Matrix ln1 = layer_norm_columns_cached(z, layer.ln1, cfg.ln_eps, c.ln1c);
    Matrix attn = mssa_forward(ln1, layer.attn, cfg.K, MssaMode::network, 1.0, cache ? &c.mssa : nullptr);
    Matrix z_half = z + attn;
    Matrix ln2 = layer_norm_columns_cached(z_half, layer.ln2, cfg.ln_eps, c.ln2c);
    Matrix out = ista_forward(ln2, layer.D_dict, cfg.eta, cfg.lambda, cache ? &c.preact : nullptr);
    if (cache) {
        c.ln1_out = std::move(ln1);
        c.z_half = std::move(z_half);
        c.ln2_out = std::move(ln2);
        c.output = out;
    }
    return out;
}

// Y_half = E LN1(Y); output = LN2(Y_half) - MSSA(LN2 Y_half). Linear
// expansion first, attention last: the structural reverse of the encoder.
inline Matrix decoder_layer_forward(const Matrix& y, const DecoderLayerParams& layer, const ModelConfig& cfg,
                                    DecoderCache* cache = nullptr) {
    DecoderCache local;
    DecoderCache& c = cache ? *cache : local;
    if (cache) c.input = y;
    Matrix ln1 = layer_norm_columns_cached(y, layer.ln1, cfg.ln_eps, c.ln1c);
    Matrix y_half = multiply(layer.E_dict, ln1);
    Matrix v = layer_norm_columns_cached(y_half, layer.ln2, cfg.ln_eps, c.ln2c);
    Matrix attn = mssa_forward(v, layer.attn, cfg.K, MssaMode::network, 1.0, cache ? &c.mssa : nullptr);
    Matrix out = v - attn;
    if (cache) {
        c.ln1_out = std::move(ln1);
        c.y_half = std::move(y_half);
        c.ln2_out = std::move(v);
        c.output = out;
    }
    return out;
}

// Column 0 is the class token plus its positional slot; image patches are
// projected and offset by the remaining positions.
inline Matrix preprocess(const Matrix& x, const ModelParams& params, const ModelConfig& cfg) {
    require(x.rows == cfg.D() && x.cols == cfg.N, "preprocess: X must be D x N");
    int d = cfg.d;
    Matrix z(d, cfg.N + 1);
    Matrix proj = multiply(params.W_pre, x);
    for (int i = 0; i < d; ++i) z(i, 0) = params.z_cls(i, 0) + params.E_pos(i, 0);
    for (int j = 0; j < cfg.N; ++j)
        for (int i = 0; i < d; ++i) z(i, j + 1) = proj(i, j) + params.E_pos(i, j + 1);
    return z;
}

// The class token is dropped; only image tokens are mapped back to patches.
inline Matrix postprocess(const Matrix& y, const ModelParams& params, const ModelConfig& cfg) {
    require(y.rows == cfg.d && y.cols == cfg.N + 1, "postprocess: Y must be d x (N+1)");
    Matrix y_img = col_block(y, 1, cfg.N + 1);
    return multiply(params.W_post, y_img);
}

// Per-layer observables kept from a forward pass: the post-attention
// intermediate and output of every encoder layer, and every decoder output.
struct Trace {
    std::vector<Matrix> z_half;
    std::vector<Matrix> z_out;
    std::vector<Matrix> y_out;
};

struct ModelCache {
    Matrix x_input;
    Matrix z0;
    std::vector<EncoderCache> enc;
    std::vector<DecoderCache> dec;
};

inline Matrix model_forward(const Matrix& x, const ModelParams& params, const ModelConfig& cfg,
                            Trace* trace = nullptr, ModelCache* cache = nullptr) {
    validate_model_config(cfg);
    if (cache) {
        cache->x_input = x;
        cache->enc.assign(std::size_t(cfg.L), EncoderCache{});
        cache->dec.assign(std::size_t(cfg.L), DecoderCache{});
    }
    if (trace) {
        trace->z_half.clear();
        trace->z_out.clear();
        trace->y_out.clear();
    }
    Matrix z = preprocess(x, params, cfg);
    if (cache) cache->z0 = z;
    for (int l = 0; l < cfg.L; ++l) {
        EncoderCache* ec = cache ? &cache->enc[std::size_t(l)] : nullptr;
        if (ec) {
            z = encoder_layer_forward(z, params.enc[std::size_t(l)], cfg, ec);
            if (trace) {
                trace->z_half.push_back(ec->z_half);
                trace->z_out.push_back(ec->output);
            }
        } else if (trace) {
            EncoderCache tmp;
            z = encoder_layer_forward(z, params.enc[std::size_t(l)], cfg, &tmp);
            trace->z_half.push_back(std::move(tmp.z_half));
            trace->z_out.push_back(std::move(tmp.output));
        } else {
            z = encoder_layer_forward(z, params.enc[std::size_t(l)], cfg);
        }
    }
    for (int l = 0; l < cfg.L; ++l) {
        DecoderCache* dc = cache ? &cache->dec[std::size_t(l)] : nullptr;
        z = decoder_layer_forward(z, params.dec[std::size_t(l)], cfg, dc);
        if (trace) trace->y_out.push_back(z);
    }
    return postprocess(z, params, cfg);
}

// Encoder half only; the class-token column of the result is the feature
// used by probes and the classification head.
inline Matrix encoder_forward(const Matrix& x, const ModelParams& params, const ModelConfig& cfg) {
    validate_model_config(cfg);
    Matrix z = preprocess(x, params, cfg);
    for (int l = 0; l < cfg.L; ++l) z = encoder_layer_forward(z, params.enc[std::size_t(l)], cfg);
    return z;
}

// Classification head: logits = W_head LN(z)
inline Matrix head_forward(const Matrix& z_feature, const HeadParams& head, double ln_eps) {
    Matrix ln = layer_norm_columns(z_feature, head.ln.gamma, head.ln.beta, ln_eps);
    return multiply(head.W_head, ln);
}

// ---------------------------------------------------------------------------
// checkpoint format
//
//   offset  size  field
//   0       4     magic "CMAE"
//   4       4     version, u32 = 1
//   8       36    L d K p N D patch_h patch_w channels, u32 each
//   44      24    eta lambda ln_eps, f64 each
//   68      ...   tensors in canonical order, each u64 count then f64[count]
//   ...     1     head flag, u8; if 1 the head tensors follow, same encoding
//
// All integers and doubles little-endian. Counts are validated against the
// shapes implied by the config; any mismatch, truncation or trailing bytes
// is a FormatError.

static_assert(std::endian::native == std::endian::little, "checkpoint io assumes a little-endian host");

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

inline std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("checkpoint: truncated u32");
    return v;
}

inline std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw FormatError("checkpoint: truncated u64");
    return v;
}

inline double get_f64(std::istream& is) {
    double v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw FormatError("checkpoint: truncated f64");
    return v;
}

inline void put_tensor(std::ostream& os, const Matrix& m) {
    put_u64(os, std::uint64_t(m.size()));
    os.write(reinterpret_cast<const char*>(m.data.data()), std::streamsize(m.size() * sizeof(double)));
}

inline void get_tensor(std::istream& is, Matrix& m, const std::string& name) {
    std::uint64_t n = get_u64(is);
    if (n != std::uint64_t(m.size()))
        throw FormatError("checkpoint: tensor " + name + " has " + std::to_string(n) + " elements, expected "
                          + std::to_string(m.size()));
    if (!is.read(reinterpret_cast<char*>(m.data.data()), std::streamsize(n * sizeof(double))))
        throw FormatError("checkpoint: truncated tensor " + name);
}

} // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void checkpoint_save(const std::string& path, const ModelConfig& cfg, const ModelParams& params) {
    validate_model_config(cfg);
    for (const auto& [name, t] : tensor_list(params))
        if (!all_finite(*t)) throw FormatError("checkpoint_save: tensor " + name + " has non-finite entries");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("checkpoint_save: cannot open " + path);
    os.write("CMAE", 4);
    detail::put_u32(os, kCheckpointVersion);
    for (int v : {cfg.L, cfg.d, cfg.K, cfg.p(), cfg.N, cfg.D(), cfg.patch_h, cfg.patch_w, cfg.channels})
        detail::put_u32(os, std::uint32_t(v));
    detail::put_f64(os, cfg.eta);
    detail::put_f64(os, cfg.lambda);
    detail::put_f64(os, cfg.ln_eps);
    for (const auto& [name, t] : tensor_list(params))
        if (name.rfind("head.", 0) != 0) detail::put_tensor(os, *t); // head tensors follow the flag byte
    os.put(params.has_head ? char(1) : char(0));
    if (params.has_head) {
        detail::put_tensor(os, params.head.ln.gamma);
        detail::put_tensor(os, params.head.ln.beta);
        detail::put_tensor(os, params.head.W_head);
    }
    if (!os) throw FormatError("checkpoint_save: write failed for " + path);
}

inline std::pair<ModelConfig, ModelParams> checkpoint_load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint_load: cannot open " + path);
    char magic[4] = {};
    if (!is.read(magic, 4) || std::string(magic, 4) != "CMAE") throw FormatError("checkpoint_load: bad magic");
    std::uint32_t version = detail::get_u32(is);
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint_load: unsupported version " + std::to_string(version));
    ModelConfig cfg;
    cfg.L = int(detail::get_u32(is));
    cfg.d = int(detail::get_u32(is));
    cfg.K = int(detail::get_u32(is));
    std::uint32_t p_stored = detail::get_u32(is);
    cfg.N = int(detail::get_u32(is));
    std::uint32_t d_stored = detail::get_u32(is);
    cfg.patch_h = int(detail::get_u32(is));
    cfg.patch_w = int(detail::get_u32(is));
    cfg.channels = int(detail::get_u32(is));
    cfg.eta = detail::get_f64(is);
    cfg.lambda = detail::get_f64(is);
    cfg.ln_eps = detail::get_f64(is);
    validate_model_config(cfg);
    if (int(p_stored) != cfg.p()) throw FormatError("checkpoint_load: stored p inconsistent with d/K");
    if (int(d_stored) != cfg.D()) throw FormatError("checkpoint_load: stored D inconsistent with patch shape");
    Rng dummy(0);
    ModelParams params = init_parameters(cfg, dummy); // allocates the right shapes, values overwritten
    params.has_head = false;
    params.head = HeadParams{};
    for (auto& [name, t] : tensor_list(params)) detail::get_tensor(is, *t, name);
    int flag = is.get();
    if (flag == std::char_traits<char>::eof()) throw FormatError("checkpoint_load: missing head flag");
    if (flag != 0 && flag != 1) throw FormatError("checkpoint_load: bad head flag");
    if (flag == 1) {
        params.has_head = true;
        params.head.ln.gamma = Matrix(cfg.d, 1);
        params.head.ln.beta = Matrix(cfg.d, 1);
        detail::get_tensor(is, params.head.ln.gamma, "head.ln.gamma");
        detail::get_tensor(is, params.head.ln.beta, "head.ln.beta");
        std::uint64_t n = detail::get_u64(is);
        if (n == 0 || n % std::uint64_t(cfg.d) != 0) throw FormatError("checkpoint_load: bad head size");
        int classes = int(n / std::uint64_t(cfg.d));
        params.head.W_head = Matrix(classes, cfg.d);
        if (!is.read(reinterpret_cast<char*>(params.head.W_head.data.data()), std::streamsize(n * sizeof(double))))
            throw FormatError("checkpoint_load: truncated head tensor");
        cfg.head_classes = classes;
    }
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint_load: trailing bytes");
    return {cfg, params};
}

} // namespace wbmae
