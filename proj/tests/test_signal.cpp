#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "wbmae/signal.hpp"

using namespace wbmae;
using Catch::Approx;

TEST_CASE("token samples decompose exactly into signal plus noise") {
    SignalConfig cfg = make_signal_config(24, 4, 4, 12, 0.3, 0.5);
    Rng rng(21);
    SubspaceFamily fam = random_orthonormal_family(cfg.d, cfg.p, cfg.K, rng);
    SignalSample s = sample_tokens(cfg, fam, rng);

    REQUIRE(s.Z.rows == cfg.d);
    REQUIRE(s.Z.cols == cfg.N);
    REQUIRE(max_abs(s.Z - (s.X_nat + s.Delta)) == 0.0);

    int total = 0;
    for (int c : s.counts) total += c;
    REQUIRE(total == cfg.N);

    // each noiseless token lies exactly in its assigned subspace
    for (int i = 0; i < cfg.N; ++i) {
        const Matrix& u = fam.bases[std::size_t(s.assign[std::size_t(i)])];
        Matrix x(cfg.d, 1);
        for (int r = 0; r < cfg.d; ++r) x(r, 0) = s.X_nat(r, i);
        Matrix back = multiply(u, multiply_At_B(u, x));
        REQUIRE(max_abs(back - x) < 1e-12);
    }
}

TEST_CASE("permutations between observed and blocked order are inverse") {
    SignalConfig cfg = make_signal_config(16, 2, 4, 10, 0.1, 0.5);
    Rng rng(22);
    SubspaceFamily fam = random_orthonormal_family(cfg.d, cfg.p, cfg.K, rng);
    SignalSample s = sample_tokens(cfg, fam, rng);
    for (int i = 0; i < cfg.N; ++i) REQUIRE(s.inv_perm[std::size_t(s.perm[std::size_t(i)])] == i);

    // blocked order groups by class: positions of class k come before k+1
    int pos = 0;
    for (int k = 0; k < cfg.K; ++k)
        for (int i = 0; i < cfg.N; ++i)
            if (s.assign[std::size_t(i)] == k) REQUIRE(s.perm[std::size_t(i)] == pos++);
}

TEST_CASE("coefficient blocks reproduce the noiseless tokens") {
    SignalConfig cfg = make_signal_config(20, 4, 3, 9, 0.2, 0.5);
    Rng rng(23);
    SubspaceFamily fam = random_orthonormal_family(cfg.d, cfg.p, cfg.K, rng);
    SignalSample s = sample_tokens(cfg, fam, rng);
    for (int k = 0; k < cfg.K; ++k) {
        const Matrix& a = s.coeff_blocks[std::size_t(k)];
        REQUIRE(a.rows == cfg.p);
        REQUIRE(a.cols == s.counts[std::size_t(k)]);
        Matrix lifted = multiply(fam.bases[std::size_t(k)], a);
        int col = 0;
        for (int i = 0; i < cfg.N; ++i) {
            if (s.assign[std::size_t(i)] != k) continue;
            for (int r = 0; r < cfg.d; ++r) REQUIRE(lifted(r, col) == Approx(s.X_nat(r, i)).margin(1e-14));
            ++col;
        }
    }
}

TEST_CASE("same seed at different sigma shares all draws with noise rescaled") {
    Rng rng_family(24);
    SubspaceFamily fam = random_orthonormal_family(18, 3, 3, rng_family);
    SignalConfig lo = make_signal_config(18, 3, 3, 8, 0.1, 0.5);
    SignalConfig hi = make_signal_config(18, 3, 3, 8, 0.4, 0.5);
    Rng r1(555), r2(555);
    SignalSample a = sample_tokens(lo, fam, r1);
    SignalSample b = sample_tokens(hi, fam, r2);
    REQUIRE(a.assign == b.assign);
    REQUIRE(max_abs(a.X_nat - b.X_nat) == 0.0);
    Matrix scaled = a.Delta;
    for (double& v : scaled.data) v *= 0.4 / 0.1;
    REQUIRE(max_abs(scaled - b.Delta) < 1e-12);
}

TEST_CASE("nominal projection agrees with its explicit matrix form") {
    SignalConfig cfg = make_signal_config(20, 4, 4, 16, 0.3, 1.0);
    Rng rng(25);
    SubspaceFamily fam = random_orthonormal_family(cfg.d, cfg.p, cfg.K, rng);
    SignalSample s = sample_tokens(cfg, fam, rng);

    Matrix m = gaussian_matrix(cfg.d, cfg.N, rng, 1.0);
    Matrix applied = nominal_projection_apply(s, m);

    // Columns in blocked position belong to a class; the explicit route
    // multiplies each blocked column by that class's P_k matrix.
    Matrix blocked(cfg.d, cfg.N);
    for (int i = 0; i < cfg.N; ++i)
        for (int r = 0; r < cfg.d; ++r) blocked(r, s.perm[std::size_t(i)]) = m(r, i);
    std::vector<Matrix> pks;
    for (int k = 0; k < cfg.K; ++k) pks.push_back(nominal_projection_matrix(s, k));
    Matrix expect(cfg.d, cfg.N);
    int pos = 0;
    for (int k = 0; k < cfg.K; ++k)
        for (int c = 0; c < s.counts[std::size_t(k)]; ++c, ++pos) {
            for (int r = 0; r < cfg.d; ++r) {
                double acc = 0.0;
                for (int q = 0; q < cfg.d; ++q) acc += pks[std::size_t(k)](r, q) * blocked(q, pos);
                expect(r, s.inv_perm[std::size_t(pos)]) += acc; // unpermute into observed order
            }
        }
    REQUIRE(max_abs(applied - expect) < 1e-10);
}

TEST_CASE("projection matrix approaches the orthogonal projector as beta grows") {
    SignalConfig cfg = make_signal_config(24, 8, 3, 9, 0.2, 1e-9); // epsilon tiny so beta is huge
    REQUIRE(cfg.params.beta() > 1e17);
    Rng rng(26);
    SubspaceFamily fam = random_orthonormal_family(cfg.d, cfg.p, cfg.K, rng);
    SignalSample s = sample_tokens(cfg, fam, rng);

    // exact limit: sum over other classes of projection onto U_k' minus the
    // span of its own coefficient directions
    Matrix p0 = nominal_projection_matrix(s, 0);
    Matrix limit(cfg.d, cfg.d);
    for (int k = 1; k < cfg.K; ++k) {
        const Matrix& u = fam.bases[std::size_t(k)];
        const Matrix& a = s.coeff_blocks[std::size_t(k)];
        Matrix inner = Matrix::identity(cfg.p) - oracle::column_space_projector(a);
        limit += multiply(u, multiply(inner, transpose(u)));
    }
    REQUIRE(oracle::operator_norm(p0 - limit) < 1e-6);
}

TEST_CASE("a zero step leaves tokens unchanged") {
    SignalConfig cfg = make_signal_config(16, 4, 2, 8, 0.25, 0.5);
    Rng rng(27);
    SubspaceFamily fam = random_orthonormal_family(cfg.d, cfg.p, cfg.K, rng);
    SignalSample s = sample_tokens(cfg, fam, rng);
    Matrix z1 = compression_step(s, 0.0);
    REQUIRE(max_abs(z1 - s.Z) == 0.0);
}

TEST_CASE("signal config validation") {
    REQUIRE_THROWS_AS(make_signal_config(8, 3, 3, 4, 0.1, 0.5), DimensionError); // K p > d
    REQUIRE_THROWS_AS(make_signal_config(8, 2, 2, 4, -0.1, 0.5), DimensionError);
    REQUIRE_THROWS_AS(make_signal_config(8, 2, 2, 4, 0.1, 0.0), DimensionError);
}
