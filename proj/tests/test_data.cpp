#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "wbmae/data.hpp"

using namespace wbmae;
using Catch::Approx;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void put_be32(std::ofstream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<char*>(b), 4);
}

// two 2x3 images with pixel value = linear index, labels {7, 2}
void write_idx_pair(const std::string& images, const std::string& labels, std::uint32_t image_magic = 0x803,
                    std::uint32_t label_count = 2, bool truncate_pixels = false) {
    std::ofstream im(images, std::ios::binary);
    put_be32(im, image_magic);
    put_be32(im, 2);
    put_be32(im, 2);
    put_be32(im, 3);
    int total = truncate_pixels ? 9 : 12;
    for (int k = 0; k < total; ++k) im.put(char(k));
    im.close();
    std::ofstream lb(labels, std::ios::binary);
    put_be32(lb, 0x801);
    put_be32(lb, label_count);
    lb.put(7);
    lb.put(2);
}

} // namespace

TEST_CASE("patchify flattens patches in raster order with channel fastest") {
    Image im;
    im.h = 2;
    im.w = 4;
    im.c = 2;
    im.pix.resize(16);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 4; ++x)
            for (int ch = 0; ch < 2; ++ch) im.at(y, x, ch) = 100.0 * y + 10.0 * x + ch;

    Matrix p = patchify(im, 2, 2);
    REQUIRE(p.rows == 8); // 2*2*2
    REQUIRE(p.cols == 2); // one row of two patches
    // column 0 is the left patch: (dy,dx,ch) fastest in ch
    REQUIRE(p(0, 0) == 0.0);   // y0 x0 c0
    REQUIRE(p(1, 0) == 1.0);   // y0 x0 c1
    REQUIRE(p(2, 0) == 10.0);  // y0 x1 c0
    REQUIRE(p(4, 0) == 100.0); // y1 x0 c0
    REQUIRE(p(7, 0) == 111.0); // y1 x1 c1
    REQUIRE(p(0, 1) == 20.0);  // right patch starts at x=2

    Image back = unpatchify(p, 2, 4, 2, 2, 2);
    REQUIRE(back.pix == im.pix);

    REQUIRE_THROWS_AS(patchify(im, 3, 2), DimensionError);
    REQUIRE_THROWS_AS(unpatchify(p, 2, 4, 2, 3, 2), DimensionError);
    REQUIRE_THROWS_AS(unpatchify(Matrix(7, 2), 2, 4, 2, 2, 2), DimensionError);
}

TEST_CASE("idx pairs load with scaled pixels and aligned labels") {
    std::string ip = temp_path("wbmae_idx_images.bin");
    std::string lp = temp_path("wbmae_idx_labels.bin");
    write_idx_pair(ip, lp);
    ImageDataset ds = load_idx(ip, lp);
    REQUIRE(ds.images.size() == 2);
    REQUIRE(ds.labels == std::vector<int>{7, 2});
    REQUIRE(ds.images[0].h == 2);
    REQUIRE(ds.images[0].w == 3);
    REQUIRE(ds.images[0].c == 1);
    REQUIRE(ds.images[0].at(0, 0, 0) == Approx(0.0));
    REQUIRE(ds.images[0].at(1, 2, 0) == Approx(5.0 / 255.0));
    REQUIRE(ds.images[1].at(0, 0, 0) == Approx(6.0 / 255.0));
    std::filesystem::remove(ip);
    std::filesystem::remove(lp);
}

TEST_CASE("idx loader rejects malformed pairs") {
    std::string ip = temp_path("wbmae_idx_bad_images.bin");
    std::string lp = temp_path("wbmae_idx_bad_labels.bin");

    write_idx_pair(ip, lp, 0x804);
    REQUIRE_THROWS_AS(load_idx(ip, lp), FormatError);

    write_idx_pair(ip, lp, 0x803, 3);
    REQUIRE_THROWS_AS(load_idx(ip, lp), FormatError);

    write_idx_pair(ip, lp, 0x803, 2, true);
    REQUIRE_THROWS_AS(load_idx(ip, lp), FormatError);

    REQUIRE_THROWS_AS(load_idx(temp_path("wbmae_idx_missing.bin"), lp), FormatError);
    std::filesystem::remove(ip);
    std::filesystem::remove(lp);
}

TEST_CASE("cifar batches load plane-ordered records") {
    std::string path = temp_path("wbmae_cifar.bin");
    {
        std::ofstream os(path, std::ios::binary);
        for (int rec = 0; rec < 2; ++rec) {
            os.put(char(rec == 0 ? 3 : 9));
            // R plane constant 10/20, G 30/40, B 50/60
            for (int ch = 0; ch < 3; ++ch)
                for (int k = 0; k < 1024; ++k) os.put(char(10 + 20 * ch + 10 * rec));
        }
    }
    ImageDataset ds = load_cifar10(path);
    REQUIRE(ds.images.size() == 2);
    REQUIRE(ds.labels == std::vector<int>{3, 9});
    REQUIRE(ds.images[0].at(5, 7, 0) == Approx(10.0 / 255.0));
    REQUIRE(ds.images[0].at(5, 7, 1) == Approx(30.0 / 255.0));
    REQUIRE(ds.images[0].at(5, 7, 2) == Approx(50.0 / 255.0));
    REQUIRE(ds.images[1].at(0, 0, 0) == Approx(20.0 / 255.0));

    std::filesystem::resize_file(path, 3073 + 100);
    REQUIRE_THROWS_AS(load_cifar10(path), FormatError);

    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.put(char(10)); // label byte out of range
        for (int k = 0; k < 3072; ++k) os.put(char(0));
    }
    REQUIRE_THROWS_AS(load_cifar10(path), FormatError);
    std::filesystem::remove(path);
    REQUIRE_THROWS_AS(load_cifar10(path), FormatError);
}

TEST_CASE("synthetic corpus is deterministic and stays inside its pixel band") {
    SignalConfig scfg = make_signal_config(16, 4, 4, 9, 0.1, 0.5);
    SynthDataset a = synth_dataset(scfg, 2, 2, 1, 10, 77);
    SynthDataset b = synth_dataset(scfg, 2, 2, 1, 10, 77);
    REQUIRE(a.data.images.size() == 10);
    REQUIRE(a.grid == 3);
    for (std::size_t i = 0; i < a.data.images.size(); ++i) {
        REQUIRE(a.data.images[i].pix == b.data.images[i].pix);
        // band edges up to representation error: 0.5 - 0.45 rounds below 0.05
        for (double v : a.data.images[i].pix) {
            REQUIRE(v >= 0.05 - 1e-12);
            REQUIRE(v <= 0.95 + 1e-12);
        }
    }
    REQUIRE(a.data.labels == b.data.labels);
    for (int lb : a.data.labels) {
        REQUIRE(lb >= 0);
        REQUIRE(lb < scfg.K);
    }

    SynthDataset c = synth_dataset(scfg, 2, 2, 1, 10, 78);
    REQUIRE(a.data.images[0].pix != c.data.images[0].pix);
}

TEST_CASE("synthetic pixels reproduce the stored lift of the stored tokens") {
    SignalConfig scfg = make_signal_config(12, 3, 3, 4, 0.05, 0.5);
    SynthDataset ds = synth_dataset(scfg, 3, 3, 2, 6, 5);

    double mx = 0.0;
    std::vector<Matrix> lifted;
    for (const Matrix& z : ds.tokens) {
        lifted.push_back(multiply(ds.lift, z));
        mx = std::max(mx, max_abs(lifted.back()));
    }
    double scale = 0.45 / mx;
    for (std::size_t i = 0; i < lifted.size(); ++i) {
        Matrix want = lifted[i];
        for (double& v : want.data) v = 0.5 + scale * v;
        Matrix got = patchify(ds.data.images[i], 3, 3);
        REQUIRE(max_abs(got - want) < 1e-12);
    }
}

TEST_CASE("synthetic corpus validates its geometry") {
    SignalConfig bad = make_signal_config(16, 4, 4, 8, 0.1, 0.5); // 8 is not a square
    REQUIRE_THROWS_AS(synth_dataset(bad, 2, 2, 1, 4, 1), DimensionError);
    SignalConfig ok = make_signal_config(16, 4, 4, 9, 0.1, 0.5);
    REQUIRE_THROWS_AS(synth_dataset(ok, 2, 2, 1, 0, 1), DimensionError);
}
