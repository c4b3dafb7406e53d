#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "wbmae/rate.hpp"
#include "wbmae/rng.hpp"

using namespace wbmae;
using Catch::Approx;

TEST_CASE("coding rate is zero at zero and matches the spectral oracle") {
    RateParams rp{8, 2, 6, 0.5, 0.5};
    Matrix zero(8, 6);
    REQUIRE(coding_rate(zero, rp) == 0.0);

    Rng rng(11);
    Matrix z = gaussian_matrix(8, 6, rng, 1.0);
    Matrix gram = multiply_At_B(z, z);
    for (double& v : gram.data) v *= rp.alpha();
    for (int i = 0; i < 6; ++i) gram(i, i) += 1.0;
    REQUIRE(coding_rate(z, rp) == Approx(0.5 * oracle::logdet_spd(gram)).epsilon(1e-10));
    REQUIRE(coding_rate(z, rp) > 0.0);
}

TEST_CASE("coding rate is invariant under orthogonal maps") {
    Rng rng(12);
    RateParams rp{10, 2, 7, 0.5, 0.5};
    Matrix z = gaussian_matrix(10, 7, rng, 1.0);
    Matrix q = qr_orthonormal(gaussian_matrix(10, 10, rng, 1.0));
    REQUIRE(coding_rate(multiply(q, z), rp) == Approx(coding_rate(z, rp)).epsilon(1e-10));
}

TEST_CASE("conditional rate reduces to a single block for aligned data") {
    Rng rng(13);
    RateParams rp{12, 3, 5, 0.5, 0.5};
    SubspaceFamily fam = random_orthonormal_family(12, 3, 4, rng);
    Matrix a = gaussian_matrix(3, 5, rng, 1.0);
    Matrix z = multiply(fam.bases[0], a); // entirely inside U_1

    Matrix gram = multiply_At_B(a, a); // U_1^T Z = A exactly
    for (double& v : gram.data) v *= rp.beta();
    for (int i = 0; i < 5; ++i) gram(i, i) += 1.0;
    double expected = 0.5 * oracle::logdet_spd(gram);
    REQUIRE(coding_rate_conditional(z, fam, rp) == Approx(expected).epsilon(1e-9));
}

TEST_CASE("sparsity counting respects the zero tolerance") {
    Matrix z(2, 3);
    z(0, 0) = 0.0;
    z(1, 0) = 1e-9;  // below tolerance, counts as zero
    z(0, 1) = 1e-7;  // above tolerance
    z(1, 1) = -3.0;
    z(0, 2) = kZeroTol; // boundary is treated as zero
    z(1, 2) = 2.0 * kZeroTol;
    REQUIRE(sparsity_count(z, kZeroTol) == 3);
    REQUIRE(sparsity_measure(z, kZeroTol) == Approx(3.0 / 6.0));
}

TEST_CASE("sparse rate reduction assembles from its three parts") {
    Rng rng(14);
    RateParams rp{12, 3, 6, 0.75, 0.4};
    SubspaceFamily fam = random_orthonormal_family(12, 3, 4, rng);
    Matrix z = gaussian_matrix(12, 6, rng, 1.0);
    double expected = coding_rate(z, rp) - coding_rate_conditional(z, fam, rp)
                      - rp.lambda * double(sparsity_count(z, kZeroTol));
    REQUIRE(sparse_rate_reduction(z, fam, rp) == Approx(expected).epsilon(1e-12));
}

TEST_CASE("conditional rate gradient matches central finite differences") {
    Rng rng(15);
    RateParams rp{12, 4, 8, 0.5, 0.5};
    SubspaceFamily fam = random_orthonormal_family(12, 4, 3, rng);
    Matrix z = gaussian_matrix(12, 8, rng, 1.0);
    Matrix g = grad_rc(z, fam, rp);
    auto f = [&]() { return coding_rate_conditional(z, fam, rp); };
    double worst = 0.0;
    for (int i = 0; i < z.rows; ++i)
        for (int j = 0; j < z.cols; ++j) {
            double fd = oracle::central_fd(f, z, i, j, 1e-5);
            double rel = std::abs(fd - g(i, j)) / std::max({1e-12, std::abs(fd), std::abs(g(i, j))});
            worst = std::max(worst, rel);
        }
    REQUIRE(worst < 1e-6);
}

TEST_CASE("gradient vanishes at the origin and rejects bad shapes") {
    Rng rng(16);
    RateParams rp{8, 2, 4, 0.5, 0.5};
    SubspaceFamily fam = random_orthonormal_family(8, 2, 3, rng);
    Matrix zero(8, 4);
    REQUIRE(max_abs(grad_rc(zero, fam, rp)) == 0.0);
    Matrix wrong(7, 4);
    REQUIRE_THROWS_AS(grad_rc(wrong, fam, rp), DimensionError);
    REQUIRE_THROWS_AS(coding_rate(wrong, rp), DimensionError);
}
