#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "wbmae/io.hpp"
#include "wbmae/signal.hpp"

namespace wbmae {

// Calibration protocol for the "universal constant" in every bound: measure
// the ratio observable/shape once at a pinned reference configuration, take
// the 99th percentile over trials, apply a fixed margin, then hold the
// constant fixed across all other configurations. The margins are part of
// the protocol, not tunable per run.
inline constexpr double kLemmaCalibrationMargin = 1.5;
inline constexpr double kConcentrationCalibrationMargin = 1.25;

// Pinned outputs of the calibration routines below, margins included.
// Derived once at the reference configurations with seed 0x5eed (200 trials
// for the residual sweep, 400 for each concentration family) and held fixed;
// re-running the calibrators reproduces them.
inline constexpr double kLemmaResidualConstant = 0.198086;
inline constexpr double kNoiseOpnormConstant = 1.321837;
inline constexpr double kCoeffOpnormConstant = 1.789253;
inline constexpr double kGramOpnormConstant = 5.389508;
inline constexpr double kBinomialCountConstant = 0.663533;

// Runs fn(0..n-1) on up to `threads` workers. Callers write results into
// index-addressed slots, so output is identical for any worker count.
inline void parallel_for(long n, int threads, const std::function<void(long)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    int workers = int(std::min<long>(threads, n));
    std::atomic<long> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                long i = next.fetch_add(1);
                if (i >= n) return;
                fn(i);
            }
        });
    for (auto& t : pool) t.join();
}

inline double percentile(std::vector<double> v, double q) {
    require(!v.empty(), "percentile: empty sample");
    std::sort(v.begin(), v.end());
    auto idx = std::size_t(std::ceil(q / 100.0 * double(v.size())));
    if (idx > 0) --idx;
    if (idx >= v.size()) idx = v.size() - 1;
    return v[idx];
}

inline double median(std::vector<double> v) {
    require(!v.empty(), "median: empty sample");
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// reporting

struct TheoryRow {
    std::string config_id;
    double sigma = 0.0;
    double beta = 0.0;
    double residual = 0.0;    // measured observable (norm or deviation)
    double bound_shape = 0.0; // threshold it is compared against
    bool pass = false;
};

struct SweepSummary {
    std::string config_id;
    double sigma = 0.0;
    double beta = 0.0;
    double median_residual = 0.0;
    double shrinkage = 0.0; // (expected X_nat coefficient) = 1/(1+beta^{-1}) at eta = beta^{-1}
};

struct TheoryReport {
    long trial_count = 0;
    std::vector<TheoryRow> rows;
    std::vector<SweepSummary> summaries; // populated by residual_sweep only
    double exceedance_frequency = 0.0;   // fraction of rows with pass == false
    bool pass = false;
    std::string config_echo;
};

inline std::string signal_config_id(const SignalConfig& cfg) {
    return "d" + std::to_string(cfg.d) + "_p" + std::to_string(cfg.p) + "_K" + std::to_string(cfg.K) + "_N"
         + std::to_string(cfg.N);
}

inline CsvTable theory_report_csv(const TheoryReport& r) {
    CsvTable t;
    t.header = {"config_id", "sigma", "beta", "residual", "bound_shape", "pass"};
    t.rows.reserve(r.rows.size());
    for (const TheoryRow& row : r.rows)
        t.rows.push_back({row.config_id, csv_cell(row.sigma), csv_cell(row.beta), csv_cell(row.residual),
                          csv_cell(row.bound_shape), csv_cell(row.pass)});
    return t;
}

inline std::vector<TheoryRow> theory_rows_from_csv(const CsvTable& t) {
    if (t.header != std::vector<std::string>{"config_id", "sigma", "beta", "residual", "bound_shape", "pass"})
        throw FormatError("theory_rows_from_csv: unexpected header");
    std::vector<TheoryRow> rows;
    rows.reserve(t.rows.size());
    for (const auto& c : t.rows)
        rows.push_back({c[0], csv_to_double(c[1]), csv_to_double(c[2]), csv_to_double(c[3]), csv_to_double(c[4]),
                        c[5] == "1"});
    return rows;
}

// ---------------------------------------------------------------------------
// gradient-step theorem harness

struct LemmaResult {
    double residual = 0.0;
    double bound_shape = 0.0;
    double beta = 0.0;
    double sigma = 0.0;
};

// Shape of the theorem bound (the universal constant factored out):
//   K eta (sigma^2 beta^2 + sigma (1+sqrt(N/d)) + sqrt(K) beta sigma^2 (1+sqrt(N/d)) + sqrt(N/d))
inline double lemma_bound_shape(const SignalConfig& cfg, double eta) {
    double beta = cfg.params.beta();
    double root = std::sqrt(double(cfg.N) / double(cfg.d));
    double s = cfg.sigma;
    return cfg.K * eta
         * (s * s * beta * beta + s * (1.0 + root) + std::sqrt(double(cfg.K)) * beta * s * s * (1.0 + root) + root);
}

// Draws a fresh family and sample, takes one compression step, and measures
// the operator-norm distance to the nominal iterate
//   (Delta - eta P(beta Delta Pi^T) Pi) + (1+beta^{-1}-eta)/(1+beta^{-1}) X_nat.
// With eta = 0 the nominal iterate collapses to Z, so the residual is 0 by
// construction; that exactness is a unit test.
inline LemmaResult lemma_residual(const SignalConfig& cfg, double eta, Rng& rng) {
    SubspaceFamily family = random_orthonormal_family(cfg.d, cfg.p, cfg.K, rng);
    SignalSample s = sample_tokens(cfg, family, rng);
    double beta = cfg.params.beta();
    Matrix z_plus = compression_step(s, eta);
    Matrix proj = nominal_projection_apply(s, s.Delta);
    Matrix nominal = s.Delta;
    axpy(-eta * beta, proj, nominal);
    double shrink = (1.0 + 1.0 / beta - eta) / (1.0 + 1.0 / beta);
    axpy(shrink, s.X_nat, nominal);
    LemmaResult out;
    out.residual = operator_norm(z_plus - nominal, 1e-10);
    out.bound_shape = lemma_bound_shape(cfg, eta);
    out.beta = beta;
    out.sigma = cfg.sigma;
    return out;
}

// Residual sweep over configs x sigmas x trials at the step size eta =
// beta^{-1}. Trial t of config c always draws from sub_seed(sub_seed(seed,c),t)
// regardless of sigma, so the sigma axis uses common random numbers: the
// sigma-independent part of each draw is literally shared, which is what
// makes the per-sigma medians comparable. Pass the sigma grid largest first;
// the report's pass flag also requires the median curve to be nonincreasing
// in that order.
inline TheoryReport residual_sweep(const std::vector<SignalConfig>& cfgs, const std::vector<double>& sigmas,
                                   int trials, double c, std::uint64_t seed, int threads = 1) {
    require(trials >= 1, "residual_sweep: trials >= 1 required");
    require(!cfgs.empty() && !sigmas.empty(), "residual_sweep: empty grid");
    TheoryReport rep;
    rep.trial_count = trials;
    long cells = long(cfgs.size()) * long(sigmas.size());
    std::vector<std::vector<LemmaResult>> results;
    results.assign(std::size_t(cells), std::vector<LemmaResult>(std::size_t(trials)));
    parallel_for(cells * trials, threads, [&](long idx) {
        long cell = idx / trials;
        int t = int(idx % trials);
        std::size_t ci = std::size_t(cell) / sigmas.size();
        std::size_t si = std::size_t(cell) % sigmas.size();
        SignalConfig cfg = cfgs[ci];
        cfg.sigma = sigmas[si];
        double eta = 1.0 / cfg.params.beta();
        Rng rng(sub_seed(sub_seed(seed, std::uint64_t(ci)), std::uint64_t(t)));
        results[std::size_t(cell)][std::size_t(t)] = lemma_residual(cfg, eta, rng);
    });
    bool all_rows_pass = true;
    bool monotone = true;
    long fails = 0;
    for (std::size_t ci = 0; ci < cfgs.size(); ++ci) {
        double prev_median = HUGE_VAL;
        for (std::size_t si = 0; si < sigmas.size(); ++si) {
            const auto& cell = results[ci * sigmas.size() + si];
            std::vector<double> res;
            res.reserve(cell.size());
            for (const LemmaResult& lr : cell) {
                bool ok = lr.residual <= c * lr.bound_shape;
                if (!ok) ++fails;
                all_rows_pass = all_rows_pass && ok;
                rep.rows.push_back({signal_config_id(cfgs[ci]), lr.sigma, lr.beta, lr.residual, lr.bound_shape, ok});
                res.push_back(lr.residual);
            }
            double med = median(res);
            double beta = cell.front().beta;
            rep.summaries.push_back(
                {signal_config_id(cfgs[ci]), sigmas[si], beta, med, 1.0 / (1.0 + 1.0 / beta)});
            if (med > prev_median) monotone = false;
            prev_median = med;
        }
    }
    rep.exceedance_frequency = double(fails) / double(rep.rows.size());
    rep.pass = all_rows_pass && monotone;
    rep.config_echo = "residual_sweep eta=1/beta c=" + csv_cell(c) + " trials=" + std::to_string(trials);
    return rep;
}

// Reference sweep used to fix the theorem constant; run once, then the value
// is held across configurations.
inline double calibrate_lemma_constant(const SignalConfig& cfg, const std::vector<double>& sigmas, int trials,
                                       std::uint64_t seed, int threads = 1) {
    TheoryReport rep = residual_sweep({cfg}, sigmas, trials, HUGE_VAL, seed, threads);
    std::vector<double> ratios;
    ratios.reserve(rep.rows.size());
    for (const TheoryRow& r : rep.rows) ratios.push_back(r.residual / r.bound_shape);
    return percentile(ratios, 99.0) * kLemmaCalibrationMargin;
}

// Deviation of the regularized Gram inverse from its idealized form:
//   dev_I = || (beta^{-1} I + A^T A)^{-1} - (1/(1+beta^{-1})) I ||
//   dev_A = || A (beta^{-1} I + A^T A)^{-1} - (1/(1+beta^{-1})) A ||
// Both scale like sqrt(n/p) / (1+beta^{-1}) for near-isometric A.
inline std::pair<double, double> check_blockwise_pinv(const Matrix& a, double beta) {
    require(beta > 0.0, "check_blockwise_pinv: beta must be positive");
    require(a.cols >= 1, "check_blockwise_pinv: empty block");
    int n = a.cols;
    Matrix s = multiply_At_B(a, a);
    for (int i = 0; i < n; ++i) s(i, i) += 1.0 / beta;
    Matrix l = cholesky(s);
    Matrix sinv = cholesky_solve(l, Matrix::identity(n));
    double coef = 1.0 / (1.0 + 1.0 / beta);
    Matrix di = sinv;
    for (int i = 0; i < n; ++i) di(i, i) -= coef;
    Matrix da = multiply(a, sinv);
    axpy(-coef, a, da);
    return {operator_norm(di, 1e-10), operator_norm(da, 1e-10)};
}

// ---------------------------------------------------------------------------
// concentration checks

enum class OpnormKind { noise, coeff, gram };

inline const char* opnorm_kind_name(OpnormKind k) {
    switch (k) {
        case OpnormKind::noise: return "noise";
        case OpnormKind::coeff: return "coeff";
        default: return "gram";
    }
}

// Reference configuration for calibrating the operator-norm constants: the
// smallest, loosest geometry in use. Larger configurations concentrate
// harder, so a constant calibrated here transfers with headroom.
inline SignalConfig reference_opnorm_config() { return make_signal_config(64, 8, 8, 32, 0.5, 1.0); }

namespace detail {

// One trial of the requested observable, returned as (measured, ratio) where
// ratio is measured against the sqrt(N/d) shape the thresholds are built on.
inline std::pair<double, double> opnorm_trial(OpnormKind kind, const SignalConfig& cfg, Rng& rng) {
    double root = std::sqrt(double(cfg.N) / double(cfg.d));
    if (kind == OpnormKind::noise) {
        Matrix m = gaussian_matrix(cfg.d, cfg.N, rng, cfg.sigma / std::sqrt(double(cfg.d)));
        double nrm = operator_norm(m, 1e-6);
        return {nrm, nrm / cfg.sigma - root};
    }
    int n = 0; // class-0 count among N uniform assignments: Binomial(N, 1/K)
    for (int i = 0; i < cfg.N; ++i)
        if (rng.uniform_int(cfg.K) == 0) ++n;
    if (n == 0) return {0.0, 0.0};
    Matrix a = gaussian_matrix(cfg.p, n, rng, 1.0 / std::sqrt(double(cfg.p)));
    if (kind == OpnormKind::coeff) {
        double nrm = operator_norm(a, 1e-6);
        return {nrm, (nrm - 1.0) / root};
    }
    Matrix g = multiply_At_B(a, a);
    for (int i = 0; i < n; ++i) g(i, i) -= 1.0;
    double nrm = operator_norm(g, 1e-6);
    return {nrm, nrm / root};
}

} // namespace detail

inline double opnorm_threshold(OpnormKind kind, const SignalConfig& cfg, double c) {
    double root = std::sqrt(double(cfg.N) / double(cfg.d));
    switch (kind) {
        case OpnormKind::noise: return cfg.sigma * (c + root); // ||Delta|| <= sigma (c + sqrt(N/d))
        case OpnormKind::coeff: return 1.0 + c * root;         // ||A_k||   <= 1 + c sqrt(N/d)
        default: return c * root;                              // ||A^T A - I|| <= c sqrt(N/d)
    }
}

inline TheoryReport mc_opnorm_concentration(OpnormKind kind, const SignalConfig& cfg, int trials, double c,
                                            std::uint64_t seed, int threads = 1) {
    if (trials < 100) throw InsufficientTrials("mc_opnorm_concentration: need at least 100 trials");
    double threshold = opnorm_threshold(kind, cfg, c);
    std::vector<double> measured(static_cast<std::size_t>(trials));
    parallel_for(trials, threads, [&](long t) {
        Rng rng(sub_seed(seed, std::uint64_t(t)));
        measured[std::size_t(t)] = detail::opnorm_trial(kind, cfg, rng).first;
    });
    TheoryReport rep;
    rep.trial_count = trials;
    rep.rows.reserve(std::size_t(trials));
    long fails = 0;
    for (double m : measured) {
        bool ok = m <= threshold;
        if (!ok) ++fails;
        rep.rows.push_back({signal_config_id(cfg), cfg.sigma, cfg.params.beta(), m, threshold, ok});
    }
    rep.exceedance_frequency = double(fails) / double(trials);
    rep.pass = rep.exceedance_frequency <= 0.05;
    rep.config_echo = std::string("mc_opnorm kind=") + opnorm_kind_name(kind) + " c=" + csv_cell(c);
    return rep;
}

inline double calibrate_opnorm_constant(OpnormKind kind, int trials, std::uint64_t seed, int threads = 1) {
    if (trials < 100) throw InsufficientTrials("calibrate_opnorm_constant: need at least 100 trials");
    SignalConfig cfg = reference_opnorm_config();
    std::vector<double> ratios(static_cast<std::size_t>(trials));
    parallel_for(trials, threads, [&](long t) {
        Rng rng(sub_seed(seed, std::uint64_t(t)));
        ratios[std::size_t(t)] = detail::opnorm_trial(kind, cfg, rng).second;
    });
    return percentile(ratios, 99.0) * kConcentrationCalibrationMargin;
}

// Binomial reference at k = 2: over k the deviation-to-shape ratio is widest
// there, so the calibrated constant covers every other k.
inline constexpr int kBinomialReferenceN = 256;
inline constexpr int kBinomialReferenceK = 2;

inline double binomial_interval_halfwidth(int n, double c1) {
    return c1 * std::sqrt(double(n) * std::log(double(n)));
}

inline TheoryReport mc_binomial_concentration(int n, int k, int trials, double c1, std::uint64_t seed) {
    require(n >= k && k >= 2, "mc_binomial_concentration: need n >= k >= 2");
    if (trials < 1) throw InsufficientTrials("mc_binomial_concentration: need at least 1 trial");
    double center = double(n) / double(k);
    double half = binomial_interval_halfwidth(n, c1);
    TheoryReport rep;
    rep.trial_count = trials;
    rep.rows.reserve(std::size_t(trials));
    long fails = 0;
    for (int t = 0; t < trials; ++t) {
        Rng rng(sub_seed(seed, std::uint64_t(t)));
        long b = 0;
        for (int i = 0; i < n; ++i)
            if (rng.uniform_int(k) == 0) ++b;
        double dev = std::abs(double(b) - center);
        bool ok = dev <= half;
        if (!ok) ++fails;
        rep.rows.push_back({"binom_n" + std::to_string(n) + "_k" + std::to_string(k), 0.0, 0.0, dev, half, ok});
    }
    rep.exceedance_frequency = double(fails) / double(trials);
    rep.pass = rep.exceedance_frequency <= std::max(2.0 / (double(n) * double(n)), 0.01);
    rep.config_echo = "mc_binomial n=" + std::to_string(n) + " k=" + std::to_string(k) + " c1=" + csv_cell(c1);
    return rep;
}

inline double calibrate_binomial_constant(int trials, std::uint64_t seed) {
    if (trials < 100) throw InsufficientTrials("calibrate_binomial_constant: need at least 100 trials");
    int n = kBinomialReferenceN, k = kBinomialReferenceK;
    double center = double(n) / double(k);
    double shape = std::sqrt(double(n) * std::log(double(n)));
    std::vector<double> ratios;
    ratios.reserve(std::size_t(trials));
    for (int t = 0; t < trials; ++t) {
        Rng rng(sub_seed(seed, std::uint64_t(t)));
        long b = 0;
        for (int i = 0; i < n; ++i)
            if (rng.uniform_int(k) == 0) ++b;
        ratios.push_back(std::abs(double(b) - center) / shape);
    }
    return percentile(ratios, 99.0) * kConcentrationCalibrationMargin;
}

// ---------------------------------------------------------------------------
// diffusion-side checks

// Geometric time grid t_l = T (1+2 kappa)^{l-L} for l = 1..L. The last point
// is exactly T and successive steps satisfy (t_{l+1}-t_l) / (2 t_l) = kappa.
struct TimeGrid {
    double horizon = 0.0;
    int L = 0;
    double kappa = 0.0;
    std::vector<double> times;
};

inline TimeGrid make_time_grid(double horizon, int L, double kappa) {
    require(horizon > 0.0 && L >= 1 && kappa > 0.0, "make_time_grid: need T > 0, L >= 1, kappa > 0");
    TimeGrid g;
    g.horizon = horizon;
    g.L = L;
    g.kappa = kappa;
    g.times.resize(std::size_t(L));
    double ratio = 1.0 + 2.0 * kappa;
    for (int l = 1; l <= L; ++l) g.times[std::size_t(l - 1)] = horizon * std::pow(ratio, double(l - L));
    return g;
}

// Score of the variance-exploding marginal when z(0) ~ N(0, tau^2 I):
// z(t) ~ N(0, (tau^2 + 2t) I), so s(z, t) = -z / (tau^2 + 2t).
inline Matrix ve_score(const Matrix& z, double tau, double t) {
    require(tau > 0.0 && t >= 0.0, "ve_score: need tau > 0, t >= 0");
    Matrix out = z;
    double c = -1.0 / (tau * tau + 2.0 * t);
    for (double& v : out.data) v *= c;
    return out;
}

// Posterior mean of z(0) given z(t): tau^2 / (tau^2 + 2t) * z
inline Matrix tweedie_posterior_mean(const Matrix& z, double tau, double t) {
    require(tau > 0.0 && t >= 0.0, "tweedie_posterior_mean: need tau > 0, t >= 0");
    Matrix out = z;
    double c = tau * tau / (tau * tau + 2.0 * t);
    for (double& v : out.data) v *= c;
    return out;
}

// Max deviation of z + 2t s(z,t) from the posterior mean over sampled z.
// Algebraically zero; anything beyond rounding noise means the score or the
// shrinkage factor is wrong.
inline double tweedie_check(double tau, double t, int samples, int dim, Rng& rng) {
    require(samples >= 1 && dim >= 1, "tweedie_check: need samples >= 1, dim >= 1");
    double marginal_sd = std::sqrt(tau * tau + 2.0 * t);
    double worst = 0.0;
    for (int s = 0; s < samples; ++s) {
        Matrix z = gaussian_matrix(dim, 1, rng, marginal_sd);
        Matrix lhs = z + 2.0 * t * ve_score(z, tau, t);
        Matrix rhs = tweedie_posterior_mean(z, tau, t);
        worst = std::max(worst, max_abs(lhs - rhs));
    }
    return worst;
}

} // namespace wbmae
