#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "wbmae/matrix.hpp"
#include "wbmae/signal.hpp"

namespace wbmae {

// Pixels in [0, 1], layout (y, x, channel) with channel fastest.
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<double> pix;

    double& at(int y, int x, int ch) { return pix[std::size_t((y * w + x) * c + ch)]; }
    double at(int y, int x, int ch) const { return pix[std::size_t((y * w + x) * c + ch)]; }
};

struct ImageDataset {
    std::vector<Image> images;
    std::vector<int> labels; // empty or one per image
};

namespace detail {

inline std::uint32_t get_be32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(std::string("idx: truncated ") + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8)
           | std::uint32_t(b[3]);
}

} // namespace detail

// IDX image/label pair (the MNIST container format). Image magic 0x00000803,
// label magic 0x00000801, big-endian dims, u8 payload scaled to [0, 1].
inline ImageDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw FormatError("idx: cannot open " + images_path);
    if (detail::get_be32(imgs, "image magic") != 0x00000803u) throw FormatError("idx: bad image magic");
    std::uint32_t n = detail::get_be32(imgs, "image count");
    std::uint32_t h = detail::get_be32(imgs, "rows");
    std::uint32_t w = detail::get_be32(imgs, "cols");
    if (n == 0 || h == 0 || w == 0) throw FormatError("idx: empty image file");

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw FormatError("idx: cannot open " + labels_path);
    if (detail::get_be32(labs, "label magic") != 0x00000801u) throw FormatError("idx: bad label magic");
    std::uint32_t nl = detail::get_be32(labs, "label count");
    if (nl != n) throw FormatError("idx: image/label counts differ");

    ImageDataset ds;
    ds.images.reserve(n);
    ds.labels.reserve(n);
    std::vector<unsigned char> buf(std::size_t(h) * w);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!imgs.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size())))
            throw FormatError("idx: truncated pixel data");
        Image im;
        im.h = int(h);
        im.w = int(w);
        im.c = 1;
        im.pix.resize(buf.size());
        for (std::size_t k = 0; k < buf.size(); ++k) im.pix[k] = double(buf[k]) / 255.0;
        ds.images.push_back(std::move(im));
        int lb = labs.get();
        if (lb == std::char_traits<char>::eof()) throw FormatError("idx: truncated label data");
        ds.labels.push_back(lb);
    }
    return ds;
}

// CIFAR-10 binary batches: 3073-byte records, label byte then 1024 bytes per
// RGB plane.
inline ImageDataset load_cifar10(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cifar: cannot open " + path);
    is.seekg(0, std::ios::end);
    std::streamoff len = is.tellg();
    is.seekg(0);
    constexpr std::streamoff kRecord = 3073;
    if (len <= 0 || len % kRecord != 0) throw FormatError("cifar: file size is not a whole number of records");
    std::size_t n = std::size_t(len / kRecord);
    ImageDataset ds;
    ds.images.reserve(n);
    ds.labels.reserve(n);
    std::vector<unsigned char> rec(static_cast<std::size_t>(kRecord));
    for (std::size_t i = 0; i < n; ++i) {
        if (!is.read(reinterpret_cast<char*>(rec.data()), kRecord)) throw FormatError("cifar: truncated record");
        int label = rec[0];
        if (label > 9) throw FormatError("cifar: label byte out of range");
        Image im;
        im.h = 32;
        im.w = 32;
        im.c = 3;
        im.pix.resize(32 * 32 * 3);
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < 32; ++y)
                for (int x = 0; x < 32; ++x)
                    im.at(y, x, ch) = double(rec[std::size_t(1 + ch * 1024 + y * 32 + x)]) / 255.0;
        ds.images.push_back(std::move(im));
        ds.labels.push_back(label);
    }
    return ds;
}

// Non-overlapping patches in raster order; each column flattens one patch as
// (dy, dx, channel) with channel fastest. D = ph pw c, N = (h/ph)(w/pw).
inline Matrix patchify(const Image& im, int ph, int pw) {
    require(ph >= 1 && pw >= 1, "patchify: bad patch shape");
    require(im.h % ph == 0 && im.w % pw == 0, "patchify: patch shape must tile the image");
    int gh = im.h / ph, gw = im.w / pw;
    Matrix x(ph * pw * im.c, gh * gw);
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            int col = gy * gw + gx;
            for (int dy = 0; dy < ph; ++dy)
                for (int dx = 0; dx < pw; ++dx)
                    for (int ch = 0; ch < im.c; ++ch)
                        x((dy * pw + dx) * im.c + ch, col) = im.at(gy * ph + dy, gx * pw + dx, ch);
        }
    return x;
}

inline Image unpatchify(const Matrix& x, int h, int w, int c, int ph, int pw) {
    require(ph >= 1 && pw >= 1 && h % ph == 0 && w % pw == 0, "unpatchify: patch shape must tile the image");
    int gh = h / ph, gw = w / pw;
    require(x.rows == ph * pw * c && x.cols == gh * gw, "unpatchify: matrix shape disagrees with geometry");
    Image im;
    im.h = h;
    im.w = w;
    im.c = c;
    im.pix.assign(std::size_t(h) * w * c, 0.0);
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            int col = gy * gw + gx;
            for (int dy = 0; dy < ph; ++dy)
                for (int dx = 0; dx < pw; ++dx)
                    for (int ch = 0; ch < c; ++ch)
                        im.at(gy * ph + dy, gx * pw + dx, ch) = x((dy * pw + dx) * im.c + ch, col);
        }
    return im;
}

// Synthetic image corpus backed by the token signal model. Tokens are drawn
// per sample from a shared subspace family, lifted to patch space through a
// fixed Gaussian map, then shifted/scaled into [0.05, 0.95]. The label is the
// majority subspace of the sample's tokens (ties to the smallest index).
struct SynthDataset {
    ImageDataset data;
    std::vector<Matrix> tokens; // raw token matrices, pre-lift, d_sig x N
    Matrix lift;                // D x d_sig
    SubspaceFamily family;
    int grid = 0; // tokens per image side
};

inline SynthDataset synth_dataset(const SignalConfig& scfg, int patch_h, int patch_w, int channels, int count,
                                  std::uint64_t seed) {
    require(count >= 1, "synth_dataset: count must be positive");
    int g = int(std::lround(std::sqrt(double(scfg.N))));
    require(g * g == scfg.N, "synth_dataset: token count must be a perfect square");
    int D = patch_h * patch_w * channels;
    Rng setup_rng(sub_seed(seed, 0));
    SynthDataset out;
    out.family = random_orthonormal_family(scfg.d, scfg.p, scfg.K, setup_rng);
    out.lift = gaussian_matrix(D, scfg.d, setup_rng, 1.0 / std::sqrt(double(scfg.d)));
    out.grid = g;

    std::vector<Matrix> lifted;
    lifted.reserve(std::size_t(count));
    double max_abs_val = 0.0;
    for (int i = 0; i < count; ++i) {
        Rng rng(sub_seed(seed, std::uint64_t(1 + i)));
        SignalSample s = sample_tokens(scfg, out.family, rng);
        std::vector<int> votes(std::size_t(scfg.K), 0);
        for (int j = 0; j < scfg.N; ++j) votes[std::size_t(s.assign[std::size_t(j)])] += 1;
        int best = 0;
        for (int k = 1; k < scfg.K; ++k)
            if (votes[std::size_t(k)] > votes[std::size_t(best)]) best = k;
        out.data.labels.push_back(best);
        out.tokens.push_back(s.Z);
        Matrix lift_cols = multiply(out.lift, s.Z);
        max_abs_val = std::max(max_abs_val, max_abs(lift_cols));
        lifted.push_back(std::move(lift_cols));
    }
    double scale = max_abs_val > 0.0 ? 0.45 / max_abs_val : 0.0;
    for (int i = 0; i < count; ++i) {
        Matrix& x = lifted[std::size_t(i)];
        for (double& v : x.data) v = 0.5 + scale * v;
        out.data.images.push_back(unpatchify(x, g * patch_h, g * patch_w, channels, patch_h, patch_w));
    }
    return out;
}

} // namespace wbmae
