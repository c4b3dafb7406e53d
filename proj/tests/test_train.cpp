#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "oracles.hpp"
#include "wbmae/train.hpp"

using namespace wbmae;
using Catch::Approx;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.L = 1;
    c.d = 8;
    c.K = 2;
    c.N = 4;
    c.patch_h = 2;
    c.patch_w = 2;
    c.channels = 1;
    return c;
}

} // namespace

TEST_CASE("masks have the requested size, bounds and determinism") {
    MaskSpec m = make_mask(0.75, 16, 9);
    REQUIRE(int(m.masked.size()) == 12);
    std::set<int> uniq(m.masked.begin(), m.masked.end());
    REQUIRE(uniq.size() == m.masked.size());
    for (int j : m.masked) {
        REQUIRE(j >= 0);
        REQUIRE(j < 16);
    }
    REQUIRE(std::is_sorted(m.masked.begin(), m.masked.end()));

    MaskSpec again = make_mask(0.75, 16, 9);
    REQUIRE(again.masked == m.masked);
    MaskSpec other = make_mask(0.75, 16, 10);
    REQUIRE(other.masked != m.masked);

    REQUIRE(make_mask(0.0, 16, 1).masked.empty());
    REQUIRE(int(make_mask(1.0, 16, 1).masked.size()) == 16);
    REQUIRE_THROWS_AS(make_mask(-0.1, 16, 1), MaskError);
    REQUIRE_THROWS_AS(make_mask(1.1, 16, 1), MaskError);
    REQUIRE_THROWS_AS(make_mask(0.5, 0, 1), MaskError);
}

TEST_CASE("mask application zeroes exactly the chosen columns") {
    Rng rng(11);
    Matrix x = gaussian_matrix(3, 6, rng, 1.0);
    MaskSpec spec;
    spec.n_tokens = 6;
    spec.masked = {1, 4};
    Matrix xm = mask_tokens(x, spec);
    for (int j = 0; j < 6; ++j)
        for (int i = 0; i < 3; ++i) {
            bool hit = (j == 1 || j == 4);
            REQUIRE(xm(i, j) == (hit ? 0.0 : x(i, j)));
        }
    spec.n_tokens = 5;
    REQUIRE_THROWS_AS(mask_tokens(x, spec), MaskError);
}

TEST_CASE("reconstruction loss averages only over masked entries") {
    Matrix x(2, 3), xh(2, 3);
    x(0, 1) = 1.0;
    xh(0, 1) = 3.0; // error 2 on one masked entry
    MaskSpec spec;
    spec.n_tokens = 3;
    spec.masked = {1};
    REQUIRE(mae_loss(xh, x, spec) == Approx(4.0 / 2.0));

    // unmasked disagreement is invisible
    xh(0, 0) = 100.0;
    REQUIRE(mae_loss(xh, x, spec) == Approx(4.0 / 2.0));

    MaskSpec empty;
    empty.n_tokens = 3;
    REQUIRE(mae_loss(xh, x, empty) == 0.0);
    REQUIRE(max_abs(mae_loss_backward(xh, x, empty)) == 0.0);
}

TEST_CASE("loss gradient matches finite differences") {
    Rng rng(12);
    Matrix x = gaussian_matrix(4, 5, rng, 1.0);
    Matrix xh = gaussian_matrix(4, 5, rng, 1.0);
    MaskSpec spec = make_mask(0.6, 5, 3);
    Matrix g = mae_loss_backward(xh, x, spec);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) {
            double fd = oracle::central_fd([&]() { return mae_loss(xh, x, spec); }, xh, i, j, 1e-6);
            REQUIRE(g(i, j) == Approx(fd).margin(1e-8));
        }
}

TEST_CASE("full model gradient matches finite differences on every tensor") {
    ModelConfig cfg = tiny_config();
    Rng rng(1234);
    ModelParams params = init_parameters(cfg, rng);
    Matrix x = gaussian_matrix(cfg.D(), cfg.N, rng, 1.0);
    MaskSpec spec = make_mask(0.5, cfg.N, 7);

    // keep finite differences away from the ReLU kink
    {
        Matrix x_masked = mask_tokens(x, spec);
        ModelCache cache;
        model_forward(x_masked, params, cfg, nullptr, &cache);
        double min_abs = 1e300;
        for (const EncoderCache& ec : cache.enc)
            for (double v : ec.preact.data) min_abs = std::min(min_abs, std::abs(v));
        REQUIRE(min_abs > 1e-6);
    }

    ModelParams grads = make_grad_buffer(params);
    model_loss_backward(x, spec, params, cfg, grads);

    ModelParams scratch = make_grad_buffer(params);
    auto loss_now = [&]() {
        zero_grads(scratch);
        return model_loss_backward(x, spec, params, cfg, scratch);
    };

    auto gl = tensor_list(grads);
    auto pl = tensor_list(params);
    const double h = 1e-6;
    for (std::size_t t = 0; t < pl.size(); ++t) {
        Matrix& theta = *pl[t].second;
        const Matrix& g = *gl[t].second;
        // probe a deterministic subset of coordinates per tensor
        std::size_t stride = std::max<std::size_t>(1, theta.size() / 6);
        for (std::size_t k = 0; k < theta.size(); k += stride) {
            double keep = theta.data[k];
            theta.data[k] = keep + h;
            double up = loss_now();
            theta.data[k] = keep - h;
            double dn = loss_now();
            theta.data[k] = keep;
            double fd = (up - dn) / (2.0 * h);
            double denom = std::max({std::abs(fd), std::abs(g.data[k]), 1e-8});
            REQUIRE(std::abs(fd - g.data[k]) / denom < 1e-5);
        }
    }
}

TEST_CASE("first optimizer step has the closed sign-of-gradient form") {
    ModelConfig cfg = tiny_config();
    Rng rng(13);
    ModelParams params = init_parameters(cfg, rng);
    ModelParams ref = params;
    ModelParams grads = make_grad_buffer(params);
    Rng grng(14);
    for (auto& [name, t] : tensor_list(grads))
        for (double& v : t->data) v = grng.normal();
    AdamState st = make_adam_state(params);
    TrainHyper h;
    h.lr = 0.01;
    h.weight_decay = 0.1;
    adamw_step(params, grads, st, h);
    // at t = 1 the bias corrections cancel: update = lr (g / (|g| + eps') + wd theta)
    auto pl = tensor_list(params);
    auto rl = tensor_list(ref);
    auto gl = tensor_list(grads);
    for (std::size_t t = 0; t < pl.size(); ++t)
        for (std::size_t k = 0; k < pl[t].second->size(); ++k) {
            double g = gl[t].second->data[k];
            double th0 = rl[t].second->data[k];
            double mhat = g;
            double vhat = g * g;
            double want = th0 - h.lr * (mhat / (std::sqrt(vhat) + h.adam_eps) + h.weight_decay * th0);
            REQUIRE(pl[t].second->data[k] == Approx(want).margin(1e-12));
        }
}

TEST_CASE("training is replayable and reduces the loss on a tiny problem") {
    ModelConfig cfg = tiny_config();
    Rng rng(99);
    ModelParams p1 = init_parameters(cfg, rng);
    ModelParams p2 = p1;
    std::vector<Matrix> samples;
    Rng drng(100);
    for (int i = 0; i < 12; ++i) samples.push_back(gaussian_matrix(cfg.D(), cfg.N, drng, 1.0));

    TrainHyper h;
    h.epochs = 3;
    h.batch = 4;
    h.lr = 3e-3;
    h.seed = 5;
    TrainResult r1 = train_loop(samples, p1, cfg, h);
    TrainResult r2 = train_loop(samples, p2, cfg, h);

    REQUIRE(r1.history.size() == r2.history.size());
    REQUIRE(r1.history.size() == std::size_t(3 * 3)); // 3 epochs x ceil(12/4)
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        REQUIRE(r1.history[i].loss == r2.history[i].loss);
        REQUIRE(r1.history[i].epoch == int(i) / 3);
    }
    auto l1 = tensor_list(p1);
    auto l2 = tensor_list(p2);
    for (std::size_t i = 0; i < l1.size(); ++i) REQUIRE(l1[i].second->data == l2[i].second->data);

    REQUIRE(r1.final_loss < r1.initial_loss);

    std::vector<MaskSpec> masks;
    ModelParams p3 = init_parameters(cfg, rng);
    TrainHyper h1 = h;
    h1.epochs = 1;
    train_loop(samples, p3, cfg, h1, &masks);
    REQUIRE(masks.size() == samples.size()); // one recorded mask per first-epoch sample
}

TEST_CASE("train loop rejects malformed inputs") {
    ModelConfig cfg = tiny_config();
    Rng rng(101);
    ModelParams p = init_parameters(cfg, rng);
    TrainHyper h;
    std::vector<Matrix> empty;
    REQUIRE_THROWS_AS(train_loop(empty, p, cfg, h), DimensionError);
    std::vector<Matrix> bad{Matrix(cfg.D() + 1, cfg.N)};
    REQUIRE_THROWS_AS(train_loop(bad, p, cfg, h), DimensionError);
}

TEST_CASE("linear probe separates well-separated clusters") {
    Rng rng(55);
    int per = 40, dim = 6;
    Matrix feats(3 * per, dim);
    std::vector<int> labels;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < per; ++i) {
            int r = c * per + i;
            for (int j = 0; j < dim; ++j) feats(r, j) = (j == c ? 4.0 : 0.0) + 0.3 * rng.normal();
            labels.push_back(c);
        }
    // interleave classes so the held-out slice sees all of them
    Matrix shuffled(3 * per, dim);
    std::vector<int> sl(labels.size());
    for (int i = 0; i < 3 * per; ++i) {
        int src = (i % 3) * per + i / 3;
        for (int j = 0; j < dim; ++j) shuffled(i, j) = feats(src, j);
        sl[std::size_t(i)] = labels[std::size_t(src)];
    }
    double acc = linear_probe(shuffled, sl, 3);
    REQUIRE(acc >= 0.9);
}

TEST_CASE("linear probe rejects degenerate label sets") {
    Matrix feats(10, 2);
    std::vector<int> same(10, 0);
    REQUIRE_THROWS_AS(linear_probe(feats, same, 2), DegenerateLabels);
    std::vector<int> out_of_range(10, 0);
    out_of_range[0] = 5;
    REQUIRE_THROWS_AS(linear_probe(feats, out_of_range, 2), DimensionError);
    Matrix tiny(3, 2);
    std::vector<int> three{0, 1, 0};
    REQUIRE_THROWS_AS(linear_probe(tiny, three, 2), DegenerateLabels);
}
