// Command line front end. Subcommands:
//   count-params  parameter count of a preset or config file
//   train         masked-autoencoder training, writes a checkpoint
//   reconstruct   masked reconstruction gallery (PPM) plus an error report
//   diagnose      layerwise compression/sparsity curves and visualizations
//   probe         linear probe accuracy on class-token features
//   verify        numerical verification suites, CSV evidence on request
// Exit codes: 0 success, 1 runtime or verification failure, 2 usage errors.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "wbmae/config.hpp"
#include "wbmae/data.hpp"
#include "wbmae/diag.hpp"
#include "wbmae/net.hpp"
#include "wbmae/rate.hpp"
#include "wbmae/theory.hpp"
#include "wbmae/train.hpp"

namespace {

using namespace wbmae;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

ModelConfig resolve_config(const std::string& preset, const std::string& config_path) {
    if (!config_path.empty()) return load_model_config(config_path);
    if (preset == "toy") return toy_config();
    if (preset == "small") return small_config();
    if (preset == "base") return base_config();
    throw UsageError("unknown preset: " + preset);
}

struct LoadedData {
    std::vector<Matrix> samples; // D x N, one per image
    std::vector<int> labels;
    int img_h = 0, img_w = 0, img_c = 0;
};

// --data is "images,labels" for idx, a batch file for cifar, unused for
// synth. Patch geometry must tile the images and reproduce the model's
// (D, N); anything else is a data/config mismatch.
LoadedData load_samples(const std::string& format, const std::string& data, const ModelConfig& cfg, int limit,
                        double sigma, std::uint64_t seed) {
    LoadedData out;
    ImageDataset ds;
    if (format == "synth") {
        int count = limit > 0 ? limit : 512;
        SignalConfig scfg = make_signal_config(cfg.d, cfg.p(), cfg.K, cfg.N, sigma, 0.5);
        SynthDataset sd = synth_dataset(scfg, cfg.patch_h, cfg.patch_w, cfg.channels, count, sub_seed(seed, 0xda7a));
        ds = std::move(sd.data);
    } else if (format == "idx") {
        std::size_t comma = data.find(',');
        if (data.empty() || comma == std::string::npos)
            throw UsageError("--data must be 'images,labels' for --format idx");
        ds = load_idx(data.substr(0, comma), data.substr(comma + 1));
    } else if (format == "cifar") {
        if (data.empty()) throw UsageError("--data is required for --format cifar");
        ds = load_cifar10(data);
    } else {
        throw UsageError("unknown format: " + format);
    }
    int n = int(ds.images.size());
    if (limit > 0) n = std::min(n, limit);
    require(n >= 1, "dataset is empty");
    out.img_h = ds.images[0].h;
    out.img_w = ds.images[0].w;
    out.img_c = ds.images[0].c;
    for (int i = 0; i < n; ++i) {
        const Image& im = ds.images[std::size_t(i)];
        require(im.h == out.img_h && im.w == out.img_w && im.c == out.img_c, "dataset images disagree in shape");
        Matrix x = patchify(im, cfg.patch_h, cfg.patch_w);
        require(x.rows == cfg.D() && x.cols == cfg.N,
                "patchified shape " + std::to_string(x.rows) + "x" + std::to_string(x.cols)
                    + " does not match the model's D x N");
        out.samples.push_back(std::move(x));
        if (!ds.labels.empty()) out.labels.push_back(ds.labels[std::size_t(i)]);
    }
    return out;
}

std::vector<std::uint8_t> image_rgb_bytes(const Image& im) {
    require(im.c == 1 || im.c == 3, "ppm output needs 1 or 3 channels");
    std::vector<std::uint8_t> rgb;
    rgb.reserve(std::size_t(im.h) * im.w * 3);
    for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x)
            for (int ch = 0; ch < 3; ++ch) rgb.push_back(pixel_byte(im.at(y, x, im.c == 1 ? 0 : ch)));
    return rgb;
}

void write_image_ppm(const std::string& path, const Image& im) {
    write_ppm(path, im.w, im.h, image_rgb_bytes(im));
}

// token grid heat map scaled up for visibility, one value per token
void write_grid_ppm(const std::string& path, const std::vector<double>& vals, int gh, int gw, int scale) {
    double mx = 0.0;
    for (double v : vals) mx = std::max(mx, v);
    std::vector<std::uint8_t> rgb(std::size_t(gh) * scale * gw * scale * 3);
    for (int y = 0; y < gh * scale; ++y)
        for (int x = 0; x < gw * scale; ++x) {
            double v = vals[std::size_t((y / scale) * gw + (x / scale))];
            std::uint8_t b = pixel_byte(mx > 0.0 ? v / mx : 0.0);
            std::size_t base = (std::size_t(y) * std::size_t(gw) * std::size_t(scale) + std::size_t(x)) * 3;
            rgb[base] = rgb[base + 1] = rgb[base + 2] = b;
        }
    write_ppm(path, gw * scale, gh * scale, rgb);
}

void write_viz_ppm(const std::string& path, const TokenViz& viz, int scale) {
    int gh = viz.grid_h, gw = viz.grid_w;
    std::vector<std::uint8_t> rgb(std::size_t(gh) * scale * gw * scale * 3);
    for (int y = 0; y < gh * scale; ++y)
        for (int x = 0; x < gw * scale; ++x) {
            const std::array<double, 3>& c = viz.rgb[std::size_t((y / scale) * gw + (x / scale))];
            std::size_t base = (std::size_t(y) * std::size_t(gw) * std::size_t(scale) + std::size_t(x)) * 3;
            for (int ch = 0; ch < 3; ++ch) rgb[base + std::size_t(ch)] = pixel_byte(c[std::size_t(ch)]);
        }
    write_ppm(path, gw * scale, gh * scale, rgb);
}

// ---------------------------------------------------------------------------
// verify suites. Each returns pass/fail and appends CSV rows
// (suite, case, value, threshold, pass).

void add_row(CsvTable& t, const std::string& suite, const std::string& which, double value, double threshold,
             bool pass) {
    t.rows.push_back({suite, which, csv_cell(value), csv_cell(threshold), csv_cell(pass)});
}

bool verify_grad(std::uint64_t seed, CsvTable& csv) {
    RateParams rp{24, 6, 12, 0.5, 0.5};
    Rng rng(seed);
    SubspaceFamily fam = random_orthonormal_family(rp.d, rp.p, 4, rng);
    Matrix z = gaussian_matrix(rp.d, rp.N, rng, 1.0);
    Matrix g = grad_rc(z, fam, rp);
    double h = 1e-5;
    double worst = 0.0;
    for (int i = 0; i < z.rows; ++i)
        for (int j = 0; j < z.cols; ++j) {
            double save = z(i, j);
            z(i, j) = save + h;
            double fp = coding_rate_conditional(z, fam, rp);
            z(i, j) = save - h;
            double fm = coding_rate_conditional(z, fam, rp);
            z(i, j) = save;
            double fd = (fp - fm) / (2.0 * h);
            double rel = std::abs(fd - g(i, j)) / std::max({1e-12, std::abs(fd), std::abs(g(i, j))});
            worst = std::max(worst, rel);
        }
    bool grad_ok = worst <= 1e-6;
    add_row(csv, "grad", "finite_difference_max_rel_err", worst, 1e-6, grad_ok);

    // residual attention step vs the negative compression gradient: the
    // operator's displacement must point along the descent direction
    RateParams rp2{32, 8, 16, 1.0, 0.5};
    double worst_cos = 1.0;
    for (int trial = 0; trial < 20; ++trial) {
        Rng trng(sub_seed(seed, std::uint64_t(100 + trial)));
        SubspaceFamily f2 = random_orthonormal_family(rp2.d, rp2.p, 4, trng);
        Matrix z2 = gaussian_matrix(rp2.d, rp2.N, trng, 1.0);
        AttentionParams ap = family_to_attention(f2);
        Matrix op = mssa_forward(z2, ap, 4, MssaMode::math, rp2.beta());
        Matrix step = op - z2;
        Matrix neg_grad = grad_rc(z2, f2, rp2);
        for (double& v : neg_grad.data) v = -v;
        double cosv = dot(step, neg_grad) / std::max(1e-300, frobenius_norm(step) * frobenius_norm(neg_grad));
        worst_cos = std::min(worst_cos, cosv);
    }
    bool align_ok = worst_cos > 0.0;
    add_row(csv, "grad", "attention_step_alignment_min_cos", worst_cos, 0.0, align_ok);
    return grad_ok && align_ok;
}

bool verify_lemma(int trials, std::uint64_t seed, int threads, CsvTable& csv) {
    SignalConfig acc = make_signal_config(256, 64, 4, 64, 0.5, 1.0);
    std::vector<double> sigmas{0.5, 0.25, 0.1};
    TheoryReport rep = residual_sweep({acc}, sigmas, trials, kLemmaResidualConstant, seed, threads);
    CsvTable rows = theory_report_csv(rep);
    for (auto& r : rows.rows) csv.rows.push_back({"lemma", r[0] + "/sigma=" + r[1], r[3], r[4], r[5]});
    for (const auto& s : rep.summaries)
        add_row(csv, "lemma", "median_residual/sigma=" + csv_cell(s.sigma), s.median_residual,
                kLemmaResidualConstant, rep.pass);
    return rep.pass;
}

bool verify_concentration(int trials, std::uint64_t seed, int threads, CsvTable& csv) {
    bool all = true;
    struct Case {
        OpnormKind kind;
        double c;
    };
    for (const Case& k : {Case{OpnormKind::noise, kNoiseOpnormConstant}, Case{OpnormKind::coeff, kCoeffOpnormConstant},
                          Case{OpnormKind::gram, kGramOpnormConstant}}) {
        TheoryReport rep = mc_opnorm_concentration(k.kind, reference_opnorm_config(), trials, k.c, seed, threads);
        all = all && rep.pass;
        add_row(csv, "concentration", std::string("opnorm_") + opnorm_kind_name(k.kind) + "_exceedance",
                rep.exceedance_frequency, 0.05, rep.pass);
    }
    TheoryReport rep = mc_binomial_concentration(kBinomialReferenceN, kBinomialReferenceK,
                                                 std::max(trials, 100) * 2, kBinomialCountConstant, seed);
    all = all && rep.pass;
    add_row(csv, "concentration", "binomial_exceedance", rep.exceedance_frequency,
            std::max(2.0 / (double(kBinomialReferenceN) * kBinomialReferenceN), 0.01), rep.pass);
    return all;
}

bool verify_discretization(CsvTable& csv) {
    bool all = true;
    struct Spec {
        double horizon;
        int L;
        double kappa;
    };
    for (const Spec& s : {Spec{100.0, 30, 0.25}, Spec{10.0, 5, 1.0}, Spec{1.0, 64, 0.05}}) {
        TimeGrid g = make_time_grid(s.horizon, s.L, s.kappa);
        double end_err = std::abs(g.times.back() - s.horizon);
        double ratio_err = 0.0;
        for (std::size_t i = 1; i < g.times.size(); ++i)
            ratio_err = std::max(ratio_err,
                                 std::abs(g.times[i] / g.times[i - 1] - (1.0 + 2.0 * s.kappa)));
        bool ok = end_err == 0.0 && ratio_err <= 1e-12;
        all = all && ok;
        std::string which = "grid_T=" + csv_cell(s.horizon) + "_L=" + std::to_string(s.L);
        add_row(csv, "discretization", which + "_end_error", end_err, 0.0, end_err == 0.0);
        add_row(csv, "discretization", which + "_ratio_error", ratio_err, 1e-12, ratio_err <= 1e-12);
    }
    return all;
}

bool verify_tweedie(std::uint64_t seed, CsvTable& csv) {
    bool all = true;
    struct Spec {
        double tau, t;
    };
    int idx = 0;
    for (const Spec& s : {Spec{1.0, 0.5}, Spec{2.0, 3.0}, Spec{0.3, 0.0}}) {
        Rng rng(sub_seed(seed, std::uint64_t(idx++)));
        double dev = tweedie_check(s.tau, s.t, 50, 8, rng);
        bool ok = dev <= 1e-12;
        all = all && ok;
        add_row(csv, "tweedie", "posterior_identity_tau=" + csv_cell(s.tau) + "_t=" + csv_cell(s.t), dev, 1e-12,
                ok);
    }
    return all;
}

// ---------------------------------------------------------------------------

int run_count_params(const std::string& preset, const std::string& config_path) {
    ModelConfig cfg = resolve_config(preset, config_path);
    std::printf("%ld\n", count_parameters(cfg));
    return 0;
}

int run_train(const ModelConfig& cfg, const std::string& format, const std::string& data, int samples,
              double sigma, const TrainHyper& hyper, const std::string& out, const std::string& history_path) {
    LoadedData ld = load_samples(format, data, cfg, samples, sigma, hyper.seed);
    Rng init_rng(sub_seed(hyper.seed, 0));
    ModelParams params = init_parameters(cfg, init_rng);
    TrainResult res = train_loop(ld.samples, params, cfg, hyper);
    std::printf("samples=%zu steps=%zu initial_loss=%.6f final_loss=%.6f\n", ld.samples.size(),
                res.history.size(), res.initial_loss, res.final_loss);
    checkpoint_save(out, cfg, params);
    std::printf("checkpoint=%s\n", out.c_str());
    if (!history_path.empty()) {
        CsvTable t;
        t.header = {"epoch", "step", "loss"};
        for (const StepRecord& r : res.history) t.rows.push_back({csv_cell(r.epoch), csv_cell(r.step), csv_cell(r.loss)});
        write_csv(history_path, t);
        std::printf("history=%s\n", history_path.c_str());
    }
    return 0;
}

int run_reconstruct(const std::string& ckpt, const std::string& format, const std::string& data, int samples,
                    double sigma, double mask_ratio, std::uint64_t seed, const std::string& out_dir) {
    auto [cfg, params] = checkpoint_load(ckpt);
    LoadedData ld = load_samples(format, data, cfg, samples > 0 ? samples : 8, sigma, seed);
    std::filesystem::create_directories(out_dir);
    CsvTable report;
    report.header = {"sample", "masked_mse"};
    for (std::size_t i = 0; i < ld.samples.size(); ++i) {
        MaskSpec spec = make_mask(mask_ratio, cfg.N, sub_seed(seed, std::uint64_t(i)));
        Matrix x_masked = mask_tokens(ld.samples[i], spec);
        Matrix x_hat = model_forward(x_masked, params, cfg);
        double loss = mae_loss(x_hat, ld.samples[i], spec);
        report.rows.push_back({csv_cell(int(i)), csv_cell(loss)});
        std::string stem = out_dir + "/sample" + std::to_string(i);
        write_image_ppm(stem + "_orig.ppm",
                        unpatchify(ld.samples[i], ld.img_h, ld.img_w, ld.img_c, cfg.patch_h, cfg.patch_w));
        write_image_ppm(stem + "_masked.ppm",
                        unpatchify(x_masked, ld.img_h, ld.img_w, ld.img_c, cfg.patch_h, cfg.patch_w));
        write_image_ppm(stem + "_recon.ppm",
                        unpatchify(x_hat, ld.img_h, ld.img_w, ld.img_c, cfg.patch_h, cfg.patch_w));
    }
    write_csv(out_dir + "/report.csv", report);
    std::printf("wrote %zu reconstructions to %s\n", ld.samples.size(), out_dir.c_str());
    return 0;
}

int run_diagnose(const std::string& ckpt, const std::string& format, const std::string& data, int samples,
                 double sigma, std::uint64_t seed, const std::string& out_dir) {
    auto [cfg, params] = checkpoint_load(ckpt);
    LoadedData ld = load_samples(format, data, cfg, samples > 0 ? samples : 16, sigma, seed);
    std::filesystem::create_directories(out_dir);
    std::vector<Trace> traces;
    std::vector<Matrix> finals;
    for (const Matrix& x : ld.samples) {
        Trace t;
        model_forward(x, params, cfg, &t);
        finals.push_back(t.z_out.back());
        traces.push_back(std::move(t));
    }
    LayerCurves lc = layerwise_curves(traces, params, cfg);
    CsvTable t;
    t.header = {"layer", "compression", "sparsity"};
    for (int l = 0; l < cfg.L; ++l)
        t.rows.push_back({csv_cell(l), csv_cell(lc.compression[std::size_t(l)]), csv_cell(lc.sparsity[std::size_t(l)])});
    write_csv(out_dir + "/curves.csv", t);

    int g = int(std::lround(std::sqrt(double(cfg.N))));
    if (g * g == cfg.N) {
        const AttentionParams& last = params.enc.back().attn;
        std::vector<double> am = attention_map(finals[0], last, 0, cfg.K);
        write_grid_ppm(out_dir + "/attention.ppm", am, g, g, 16);
        std::vector<TokenViz> viz = pca_token_visualization(finals, last, g, g);
        write_viz_ppm(out_dir + "/pca.ppm", viz[0], 16);
    }
    std::printf("wrote diagnostics for %zu samples to %s\n", ld.samples.size(), out_dir.c_str());
    return 0;
}

int run_probe(const std::string& ckpt, const std::string& format, const std::string& data, int samples,
              double sigma, std::uint64_t seed) {
    auto [cfg, params] = checkpoint_load(ckpt);
    LoadedData ld = load_samples(format, data, cfg, samples > 0 ? samples : 256, sigma, seed);
    require(!ld.labels.empty(), "probe needs a labeled dataset");
    int classes = 0;
    for (int y : ld.labels) classes = std::max(classes, y + 1);
    Matrix features(int(ld.samples.size()), cfg.d);
    for (std::size_t i = 0; i < ld.samples.size(); ++i) {
        Matrix z = encoder_forward(ld.samples[i], params, cfg);
        for (int r = 0; r < cfg.d; ++r) features(int(i), r) = z(r, 0);
    }
    double acc = linear_probe(features, ld.labels, classes);
    std::printf("probe_accuracy=%.4f classes=%d samples=%zu\n", acc, classes, ld.samples.size());
    return 0;
}

int run_verify(const std::string& suite, int trials, std::uint64_t seed, int threads, const std::string& out) {
    CsvTable csv;
    csv.header = {"suite", "check", "value", "threshold", "pass"};
    bool all = true;
    bool ran = false;
    auto want = [&suite](const char* name) { return suite == "all" || suite == name; };
    if (want("grad")) {
        bool ok = verify_grad(seed, csv);
        std::printf("suite=grad pass=%d\n", int(ok));
        all = all && ok;
        ran = true;
    }
    if (want("lemma")) {
        bool ok = verify_lemma(trials > 0 ? trials : 50, seed, threads, csv);
        std::printf("suite=lemma pass=%d\n", int(ok));
        all = all && ok;
        ran = true;
    }
    if (want("concentration")) {
        bool ok = verify_concentration(trials > 0 ? trials : 150, seed, threads, csv);
        std::printf("suite=concentration pass=%d\n", int(ok));
        all = all && ok;
        ran = true;
    }
    if (want("discretization")) {
        bool ok = verify_discretization(csv);
        std::printf("suite=discretization pass=%d\n", int(ok));
        all = all && ok;
        ran = true;
    }
    if (want("tweedie")) {
        bool ok = verify_tweedie(seed, csv);
        std::printf("suite=tweedie pass=%d\n", int(ok));
        all = all && ok;
        ran = true;
    }
    if (!ran) throw UsageError("unknown suite: " + suite);
    if (!out.empty()) write_csv(out, csv);
    std::printf("verify=%s\n", all ? "pass" : "fail");
    return all ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"white-box masked autoencoder toolkit"};
    app.require_subcommand(1);

    std::string preset = "toy", config_path;
    std::string format = "synth", data;
    std::string out, history_path, ckpt, suite = "all";
    int samples = 0, trials = 0, threads = 1;
    double sigma = 0.1, mask_ratio = 0.75;
    TrainHyper hyper;
    std::uint64_t seed = 42;

    auto add_model_flags = [&](CLI::App* c) {
        c->add_option("--preset", preset, "toy | small | base");
        c->add_option("--config", config_path, "key=value config file (overrides --preset)");
    };
    auto add_data_flags = [&](CLI::App* c) {
        c->add_option("--format", format, "synth | idx | cifar");
        c->add_option("--data", data, "dataset path ('images,labels' for idx)");
        c->add_option("--samples", samples, "cap on the number of samples");
        c->add_option("--sigma", sigma, "token noise level for synth data");
    };

    CLI::App* cp = app.add_subcommand("count-params", "print the parameter count");
    add_model_flags(cp);

    CLI::App* tr = app.add_subcommand("train", "train a masked autoencoder");
    add_model_flags(tr);
    add_data_flags(tr);
    tr->add_option("--mask", hyper.mask_ratio, "mask ratio");
    tr->add_option("--epochs", hyper.epochs, "training epochs");
    tr->add_option("--batch", hyper.batch, "batch size");
    tr->add_option("--lr", hyper.lr, "learning rate");
    tr->add_option("--wd", hyper.weight_decay, "decoupled weight decay");
    tr->add_option("--seed", seed, "seed for init, shuffling and masks");
    tr->add_option("--out", out, "checkpoint output path")->required();
    tr->add_option("--history", history_path, "per-step loss CSV");

    CLI::App* rc = app.add_subcommand("reconstruct", "masked reconstruction gallery");
    rc->add_option("--checkpoint", ckpt, "checkpoint path")->required();
    add_data_flags(rc);
    rc->add_option("--mask", mask_ratio, "mask ratio");
    rc->add_option("--seed", seed, "mask seed");
    rc->add_option("--out", out, "output directory")->required();

    CLI::App* dg = app.add_subcommand("diagnose", "layer curves and visualizations");
    dg->add_option("--checkpoint", ckpt, "checkpoint path")->required();
    add_data_flags(dg);
    dg->add_option("--seed", seed, "data seed");
    dg->add_option("--out", out, "output directory")->required();

    CLI::App* pb = app.add_subcommand("probe", "linear probe on class-token features");
    pb->add_option("--checkpoint", ckpt, "checkpoint path")->required();
    add_data_flags(pb);
    pb->add_option("--seed", seed, "data seed");

    CLI::App* vf = app.add_subcommand("verify", "numerical verification suites");
    vf->add_option("--suite", suite, "grad | lemma | concentration | discretization | tweedie | all");
    vf->add_option("--trials", trials, "Monte Carlo trials per cell");
    vf->add_option("--seed", seed, "suite seed");
    vf->add_option("--threads", threads, "worker threads (output is thread-count invariant)");
    vf->add_option("--out", out, "evidence CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (cp->parsed()) return run_count_params(preset, config_path);
        if (tr->parsed()) {
            hyper.seed = seed;
            return run_train(resolve_config(preset, config_path), format, data, samples, sigma, hyper, out,
                             history_path);
        }
        if (rc->parsed()) return run_reconstruct(ckpt, format, data, samples, sigma, mask_ratio, seed, out);
        if (dg->parsed()) return run_diagnose(ckpt, format, data, samples, sigma, seed, out);
        if (pb->parsed()) return run_probe(ckpt, format, data, samples, sigma, seed);
        if (vf->parsed()) return run_verify(suite, trials, seed, threads, out);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
