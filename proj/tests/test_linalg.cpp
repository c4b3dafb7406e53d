#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "wbmae/linalg.hpp"
#include "wbmae/rng.hpp"

using namespace wbmae;
using Catch::Approx;

namespace {

Matrix random_spd(int n, Rng& rng, double ridge = 0.5) {
    Matrix b = gaussian_matrix(n, n, rng, 1.0);
    Matrix a = multiply_At_B(b, b);
    for (int i = 0; i < n; ++i) a(i, i) += ridge;
    return a;
}

} // namespace

TEST_CASE("matrix multiply agrees with the direct triple loop") {
    Rng rng(1);
    Matrix a = gaussian_matrix(5, 7, rng, 1.0);
    Matrix b = gaussian_matrix(7, 4, rng, 1.0);
    Matrix c = multiply(a, b);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 7; ++k) acc += a(i, k) * b(k, j);
            REQUIRE(c(i, j) == Approx(acc).margin(1e-12));
        }
    Matrix atb = multiply_At_B(a, multiply(a, b));
    Matrix ref = multiply(transpose(a), multiply(a, b));
    REQUIRE(max_abs(atb - ref) < 1e-12);
    Matrix abt = multiply_A_Bt(a, transpose(b));
    REQUIRE(max_abs(abt - c) < 1e-12);
}

TEST_CASE("block extraction round trips") {
    Rng rng(2);
    Matrix a = gaussian_matrix(6, 5, rng, 1.0);
    Matrix top = row_block(a, 0, 2);
    Matrix mid = col_block(a, 1, 4);
    REQUIRE(top.rows == 2);
    REQUIRE(top.cols == 5);
    REQUIRE(mid.rows == 6);
    REQUIRE(mid.cols == 3);
    REQUIRE(top(1, 3) == a(1, 3));
    REQUIRE(mid(4, 0) == a(4, 1));
    REQUIRE_THROWS_AS(row_block(a, 3, 2), DimensionError);
}

TEST_CASE("cholesky factors reconstruct and reject indefinite input") {
    Rng rng(3);
    Matrix a = random_spd(8, rng);
    Matrix l = cholesky(a);
    Matrix rec = multiply_A_Bt(l, l);
    REQUIRE(max_abs(rec - a) < 1e-10);

    Matrix bad = Matrix::identity(4);
    bad(2, 2) = -1.0;
    REQUIRE_THROWS_AS(cholesky(bad), NotPositiveDefinite);
}

TEST_CASE("cholesky solve produces small residuals") {
    Rng rng(4);
    Matrix a = random_spd(10, rng);
    Matrix b = gaussian_matrix(10, 3, rng, 1.0);
    Matrix l = cholesky(a);
    Matrix x = cholesky_solve(l, b);
    REQUIRE(max_abs(multiply(a, x) - b) < 1e-9);
}

TEST_CASE("logdet of SPD matrices matches the spectral oracle") {
    Rng rng(5);
    for (int n : {2, 5, 12}) {
        Matrix a = random_spd(n, rng);
        REQUIRE(logdet_psd(a) == Approx(oracle::logdet_spd(a)).epsilon(1e-10));
    }
    Matrix asym = gaussian_matrix(4, 4, rng, 1.0);
    asym(0, 1) = asym(1, 0) + 1.0;
    REQUIRE_THROWS_AS(logdet_psd(asym), NotPositiveDefinite);
}

TEST_CASE("operator norm matches the Jacobi SVD oracle") {
    Rng rng(6);
    for (auto [r, c] : {std::pair{6, 6}, std::pair{9, 4}, std::pair{3, 8}}) {
        Matrix m = gaussian_matrix(r, c, rng, 1.0);
        REQUIRE(operator_norm(m) == Approx(oracle::operator_norm(m)).epsilon(1e-8));
    }

    // rank deficient: duplicate a column
    Matrix m = gaussian_matrix(6, 3, rng, 1.0);
    Matrix wide(6, 4);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 3; ++j) wide(i, j) = m(i, j);
        wide(i, 3) = m(i, 0);
    }
    REQUIRE(operator_norm(wide) == Approx(oracle::operator_norm(wide)).epsilon(1e-8));

    Matrix zero(5, 4);
    REQUIRE(operator_norm(zero) == 0.0);
}

TEST_CASE("softmax columns are stochastic and shift invariant") {
    Rng rng(7);
    Matrix g = gaussian_matrix(6, 5, rng, 3.0);
    Matrix a = softmax_columns(g);
    for (int j = 0; j < 5; ++j) {
        double s = 0.0;
        for (int i = 0; i < 6; ++i) {
            REQUIRE(a(i, j) >= 0.0);
            s += a(i, j);
        }
        REQUIRE(s == Approx(1.0).margin(1e-12));
    }
    Matrix shifted = g;
    for (int j = 0; j < 5; ++j)
        for (int i = 0; i < 6; ++i) shifted(i, j) += 100.0 * (j + 1);
    REQUIRE(max_abs(softmax_columns(shifted) - a) < 1e-12);

    Matrix huge(2, 1);
    huge(0, 0) = 1e8;
    huge(1, 0) = -1e8;
    Matrix ah = softmax_columns(huge);
    REQUIRE(all_finite(ah));
    REQUIRE(ah(0, 0) == Approx(1.0));
}

TEST_CASE("layer norm standardizes each column") {
    Rng rng(8);
    Matrix z = gaussian_matrix(16, 4, rng, 2.0);
    Matrix gamma(16, 1), beta(16, 1);
    for (int i = 0; i < 16; ++i) gamma(i, 0) = 1.0;
    Matrix out = layer_norm_columns(z, gamma, beta, 1e-12);
    for (int j = 0; j < 4; ++j) {
        double mu = 0.0, var = 0.0;
        for (int i = 0; i < 16; ++i) mu += out(i, j);
        mu /= 16;
        for (int i = 0; i < 16; ++i) var += (out(i, j) - mu) * (out(i, j) - mu);
        var /= 16;
        REQUIRE(mu == Approx(0.0).margin(1e-10));
        REQUIRE(var == Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("QR produces orthonormal columns spanning the input") {
    Rng rng(9);
    Matrix a = gaussian_matrix(10, 6, rng, 1.0);
    Matrix q = qr_orthonormal(a);
    Matrix qtq = multiply_At_B(q, q);
    REQUIRE(max_abs(qtq - Matrix::identity(6)) < 1e-12);
    // each input column must lie in the span of Q
    Matrix coeff = multiply_At_B(q, a);
    REQUIRE(max_abs(multiply(q, coeff) - a) < 1e-10);
}

TEST_CASE("random orthonormal families are mutually orthogonal") {
    Rng rng(10);
    SubspaceFamily fam = random_orthonormal_family(12, 3, 4, rng);
    REQUIRE(fam.count() == 4);
    for (int a = 0; a < 4; ++a) {
        Matrix gram = multiply_At_B(fam.bases[std::size_t(a)], fam.bases[std::size_t(a)]);
        REQUIRE(max_abs(gram - Matrix::identity(3)) < 1e-12);
        for (int b = a + 1; b < 4; ++b) {
            Matrix cross = multiply_At_B(fam.bases[std::size_t(a)], fam.bases[std::size_t(b)]);
            REQUIRE(max_abs(cross) < 1e-12);
        }
    }
    REQUIRE_THROWS_AS(random_orthonormal_family(8, 3, 3, rng), DimensionError);
}

TEST_CASE("rng streams are deterministic and sub-seeds decorrelate") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) REQUIRE(a.uniform01() == b.uniform01());
    REQUIRE(sub_seed(1, 2) != sub_seed(2, 1));
    REQUIRE(sub_seed(1, 2) != sub_seed(1, 3));

    // normal() should have roughly unit variance
    Rng c(77);
    double m = 0.0, v = 0.0;
    const int n = 20000;
    std::vector<double> xs;
    for (int i = 0; i < n; ++i) xs.push_back(c.normal());
    for (double x : xs) m += x;
    m /= n;
    for (double x : xs) v += (x - m) * (x - m);
    v /= n;
    REQUIRE(std::abs(m) < 0.05);
    REQUIRE(v == Approx(1.0).epsilon(0.05));
}
