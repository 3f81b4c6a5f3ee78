// Gradient oracle tests.
//
// The analytic gradients drive every training loop in the engine, so
// they are checked against two independent oracles:
//  - central finite differences of the loss over every parameter, for
//    randomly drawn architectures, batches and loss mixes;
//  - a brute-force pair enumeration of the representation loss written
//    directly from its definition, compared exactly.
// Neither oracle shares code with the implementations under test.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "clb/errors.hpp"
#include "clb/model.hpp"
#include "clb/rng.hpp"

using namespace clb;

namespace {

Matrix random_batch(int rows, int cols, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.a) v = rng.normal();
    return m;
}

std::vector<int> random_labels(int rows, int n_classes, Rng& rng) {
    std::vector<int> y(static_cast<std::size_t>(rows));
    for (int& v : y) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_classes)));
    return y;
}

// A finite difference straddling a ReLU boundary measures a blend of two
// linear pieces, not the one-sided derivative the analytic pass reports,
// so those parameters are rejected rather than compared. Along a single
// parameter, each first-layer unit is linear in it and flips sign at most
// once; deeper layers stay linear whenever nothing below them flips, so
// comparing the activation patterns of the two endpoint traces catches
// every crossing.
bool relu_flip(const Mlp& net, const ForwardTrace& a, const ForwardTrace& b) {
    const std::size_t n = a.outputs.size();
    for (std::size_t l = 0; l < n; ++l) {
        if (l + 1 == n && !net.relu_output()) continue;
        const Matrix& ha = a.outputs[l];
        const Matrix& hb = b.outputs[l];
        for (std::size_t k = 0; k < ha.a.size(); ++k)
            if ((ha.a[k] == 0.0) != (hb.a[k] == 0.0)) return true;
    }
    return false;
}

// Brute-force representation loss straight from the definition: sum
// h_i . h_j over ordered pairs i != j of different classes across the
// hidden layers (plus the logits when asked), divided by the count of
// such pairs per batch, plus the same for equal classes. Empty terms
// contribute zero. Enumeration runs in natural order so the value is
// comparable bit for bit.
double drl_oracle(const ForwardTrace& trace, std::span<const int> y,
                  bool include_logits) {
    const std::size_t n_layers = trace.outputs.size();
    double between = 0.0, within = 0.0;
    long n_between = 0, n_within = 0;
    const int rows = trace.input.rows;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < rows; ++j) {
            if (i == j) continue;
            if (y[static_cast<std::size_t>(i)] == y[static_cast<std::size_t>(j)])
                ++n_within;
            else
                ++n_between;
        }
    for (std::size_t l = 0; l < n_layers; ++l) {
        const bool is_final = l + 1 == n_layers;
        if (is_final && !include_logits) continue;
        const Matrix& h = trace.outputs[l];
        for (int i = 0; i < h.rows; ++i)
            for (int j = 0; j < h.rows; ++j) {
                if (i == j) continue;
                double dot = 0.0;
                for (int c = 0; c < h.cols; ++c) dot += h.at(i, c) * h.at(j, c);
                if (y[static_cast<std::size_t>(i)] ==
                    y[static_cast<std::size_t>(j)])
                    within += dot;
                else
                    between += dot;
            }
    }
    double total = 0.0;
    if (n_between > 0) total += between / static_cast<double>(n_between);
    if (n_within > 0) total += within / static_cast<double>(n_within);
    return total;
}

}  // namespace

TEST_CASE("forward pass matches a hand computation") {
    Rng rng(1);
    Mlp net(2, {2}, 2, rng);
    // Overwrite with simple numbers: hidden = relu(W1 x + b1), y = W2 h + b2.
    net.layers()[0].w = {1.0, -1.0, 0.5, 0.5};
    net.layers()[0].b = {0.0, -1.0};
    net.layers()[1].w = {1.0, 2.0, -1.0, 0.0};
    net.layers()[1].b = {0.5, 0.0};

    Matrix x(1, 2);
    x.at(0, 0) = 2.0;
    x.at(0, 1) = 1.0;
    const ForwardTrace t = net.forward(x);
    // h = relu([2-1, 1+0.5-1]) = [1, 0.5]
    CHECK(t.outputs[0].at(0, 0) == 1.0);
    CHECK(t.outputs[0].at(0, 1) == 0.5);
    // y = [1*1 + 2*0.5 + 0.5, -1*1] = [2.5, -1]
    CHECK(t.logits().at(0, 0) == 2.5);
    CHECK(t.logits().at(0, 1) == -1.0);
}

TEST_CASE("cross-entropy agrees with the direct formula") {
    Matrix logits(2, 3);
    logits.at(0, 0) = 1.0;
    logits.at(0, 1) = 2.0;
    logits.at(0, 2) = 3.0;
    logits.at(1, 0) = 0.0;
    logits.at(1, 1) = 0.0;
    logits.at(1, 2) = 0.0;
    const std::vector<int> y{2, 0};

    auto direct = [](double a, double b, double c, double target) {
        const double z = std::exp(a) + std::exp(b) + std::exp(c);
        return -std::log(std::exp(target) / z);
    };
    const double expected =
        0.5 * (direct(1, 2, 3, 3.0) + direct(0, 0, 0, 0.0));
    CHECK(xent_loss(logits, y) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("cross-entropy is stable under huge logits") {
    Matrix logits(1, 2);
    logits.at(0, 0) = 5000.0;
    logits.at(0, 1) = -5000.0;
    const std::vector<int> y{0};
    const double loss = xent_loss(logits, y);
    CHECK(std::isfinite(loss));
    CHECK(loss == doctest::Approx(0.0));
}

TEST_CASE("analytic gradients match central finite differences") {
    // 24 random configurations spanning depth, width, batch size, label
    // mixes and loss blends. Relative error bound 1e-5 on every entry
    // whose perturbation does not cross a ReLU boundary; crossings must
    // stay rare or the check would be vacuous.
    int checked = 0;
    std::size_t compared = 0, rejected = 0;
    for (std::uint64_t seed = 1; seed <= 24; ++seed) {
        Rng rng(seed);
        const int in = 2 + static_cast<int>(rng.below(4));
        const int out = 2 + static_cast<int>(rng.below(4));
        std::vector<int> hidden;
        const int depth = static_cast<int>(rng.below(3));
        for (int l = 0; l < depth; ++l)
            hidden.push_back(2 + static_cast<int>(rng.below(5)));
        const int batch = 1 + static_cast<int>(rng.below(6));

        DrlConfig cfg;
        const double lambdas[] = {0.0, 0.001, 0.1, 1.0};
        cfg.lambda = lambdas[seed % 4];
        cfg.include_logits = seed % 3 == 0;

        Mlp net(in, hidden, out, rng);
        const Matrix x = random_batch(batch, in, rng);
        const std::vector<int> y = random_labels(batch, out, rng);

        const ForwardTrace trace = net.forward(x);
        const LossGrad lg = combined_loss_grad(net, trace, y, cfg);
        REQUIRE(lg.grad.size() == net.param_count());

        std::vector<double> params = net.flatten();
        const double h = 1e-6;
        for (std::size_t p = 0; p < params.size(); ++p) {
            std::vector<double> plus = params, minus = params;
            plus[p] += h;
            minus[p] -= h;
            net.unflatten(plus);
            const ForwardTrace t_plus = net.forward(x);
            const double f_plus = combined_loss_grad(net, t_plus, y, cfg).loss;
            net.unflatten(minus);
            const ForwardTrace t_minus = net.forward(x);
            const double f_minus = combined_loss_grad(net, t_minus, y, cfg).loss;
            if (relu_flip(net, t_plus, t_minus)) {
                ++rejected;
                continue;
            }
            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double denom = std::max({1.0, std::abs(fd), std::abs(lg.grad[p])});
            REQUIRE_MESSAGE(std::abs(fd - lg.grad[p]) / denom < 1e-5,
                            "seed " << seed << " param " << p << " fd " << fd
                                    << " analytic " << lg.grad[p]);
            ++compared;
        }
        net.unflatten(params);
        ++checked;
    }
    CHECK(checked == 24);
    // Crossings stay a small minority. They are structural, not noise:
    // zero-initialised biases put some pre-activations exactly on the
    // boundary whenever every unit below them is dead for a row.
    CHECK(rejected * 20 < compared);
}

TEST_CASE("representation loss equals the brute-force oracle exactly") {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        Rng rng(seed * 31);
        const int in = 2 + static_cast<int>(rng.below(3));
        const int out = 2 + static_cast<int>(rng.below(3));
        std::vector<int> hidden{2 + static_cast<int>(rng.below(4))};
        const int batch = 1 + static_cast<int>(rng.below(8));

        Mlp net(in, hidden, out, rng);
        const Matrix x = random_batch(batch, in, rng);
        const std::vector<int> y = random_labels(batch, out, rng);
        const ForwardTrace trace = net.forward(x);

        for (bool include_logits : {false, true}) {
            DrlConfig cfg;
            cfg.lambda = 1.0;
            cfg.include_logits = include_logits;
            const LossGrad lg = drl_loss_grad(net, trace, y, cfg);
            const double oracle = drl_oracle(trace, y, include_logits);
            CHECK(lg.loss == oracle);  // bitwise: same order of operations
        }
    }
}

TEST_CASE("two representations of different classes") {
    // h1 = (1,2), h2 = (3,4), labels differ: only the between term
    // exists, 2 ordered pairs, each inner product 1*3 + 2*4 = 11, so the
    // loss is (11 + 11) / 2 = 11.
    Rng rng(5);
    Mlp net(2, {}, 2, rng);
    net.layers()[0].w = {1.0, 0.0, 0.0, 1.0};  // identity
    net.layers()[0].b = {0.0, 0.0};

    Matrix x(2, 2);
    x.at(0, 0) = 1.0;
    x.at(0, 1) = 2.0;
    x.at(1, 0) = 3.0;
    x.at(1, 1) = 4.0;
    const std::vector<int> y{0, 1};
    const ForwardTrace trace = net.forward(x);

    DrlConfig cfg;
    cfg.lambda = 1.0;
    cfg.include_logits = true;  // single affine layer: logits are the reprs
    const LossGrad lg = drl_loss_grad(net, trace, y, cfg);
    CHECK(lg.loss == 11.0);
}

TEST_CASE("empty pair sets contribute nothing") {
    Rng rng(6);
    Mlp net(2, {3}, 2, rng);
    const Matrix x = random_batch(3, 2, rng);
    DrlConfig cfg;
    cfg.lambda = 1.0;

    // All same class: no between pairs.
    const std::vector<int> same{1, 1, 1};
    const ForwardTrace t1 = net.forward(x);
    const double with_within = drl_loss_grad(net, t1, same, cfg).loss;
    CHECK(with_within == drl_oracle(t1, same, false));

    // Batch of one: no pairs at all.
    Matrix single(1, 2);
    single.at(0, 0) = 1.0;
    single.at(0, 1) = -1.0;
    const std::vector<int> one{0};
    const ForwardTrace t2 = net.forward(single);
    CHECK(drl_loss_grad(net, t2, one, cfg).loss == 0.0);
}

TEST_CASE("lambda zero is bit-identical to plain cross-entropy") {
    Rng rng(7);
    Mlp net(3, {4}, 3, rng);
    const Matrix x = random_batch(5, 3, rng);
    const std::vector<int> y{0, 1, 2, 0, 1};
    const ForwardTrace trace = net.forward(x);

    DrlConfig cfg;  // lambda = 0
    const LossGrad a = combined_loss_grad(net, trace, y, cfg);
    const LossGrad b = xent_loss_grad(net, trace, y);
    CHECK(a.loss == b.loss);
    CHECK(a.grad == b.grad);
}

TEST_CASE("checkpoints round-trip through the tensor container") {
    Rng rng(8);
    Mlp net(4, {5, 3}, 2, rng);
    const std::vector<NamedTensor> ts = net.to_tensors();
    const Mlp back = Mlp::from_tensors(ts);
    CHECK(back.input_dim() == 4);
    CHECK(back.output_dim() == 2);
    CHECK(back.flatten() == net.flatten());
}

TEST_CASE("sgd applies the update and rejects non-finite gradients") {
    Rng rng(9);
    Mlp net(2, {}, 2, rng);
    const std::vector<double> before = net.flatten();
    std::vector<double> grad(net.param_count(), 1.0);
    sgd_step(net, grad, 0.25);
    const std::vector<double> after = net.flatten();
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(after[i] == before[i] - 0.25);

    grad[2] = std::nan("");
    CHECK_THROWS_AS(sgd_step(net, grad, 0.1), NumericError);

    std::vector<double> wrong_size(net.param_count() + 1, 0.0);
    CHECK_THROWS_AS(sgd_step(net, wrong_size, 0.1), ConfigError);
}

TEST_CASE("gradient alignment matches hand values") {
    const std::vector<double> a{1.0, 0.0};
    const std::vector<double> b{1.0, 0.0};
    const Alignment same = grad_alignment(a, b);
    CHECK(same.inner == 1.0);
    CHECK(same.cosine == doctest::Approx(1.0));

    const std::vector<double> c{0.0, 2.0};
    const Alignment ortho = grad_alignment(a, c);
    CHECK(ortho.inner == 0.0);
    CHECK(ortho.cosine == 0.0);

    const std::vector<double> zero{0.0, 0.0};
    const Alignment degenerate = grad_alignment(a, zero);
    CHECK(degenerate.inner == 0.0);
    CHECK(degenerate.cosine == 0.0);  // documented convention

    CHECK_THROWS_AS(grad_alignment(a, std::vector<double>{1.0}), ConfigError);
}

TEST_CASE("prior correction divides scores elementwise") {
    const std::vector<double> probs{0.2, 0.5, 0.3};
    const std::vector<double> priors{0.1, 0.5, 0.4};
    const std::vector<double> s = prior_corrected_scores(probs, priors);
    CHECK(s[0] == doctest::Approx(2.0));
    CHECK(s[1] == doctest::Approx(1.0));
    CHECK(s[2] == doctest::Approx(0.75));

    CHECK_THROWS_AS(
        prior_corrected_scores(probs, std::vector<double>{0.1, 0.2}),
        ConfigError);
    CHECK_THROWS_AS(
        prior_corrected_scores(probs, std::vector<double>{0.1, 0.0, 0.9}),
        ConfigError);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
    CHECK(argmax_lowest(std::vector<double>{1.0, 3.0, 3.0}) == 1);
    CHECK(argmax_lowest(std::vector<double>{2.0, 2.0, 2.0}) == 0);
    CHECK(argmax_lowest(std::vector<double>{-1.0}) == 0);
    CHECK_THROWS_AS(argmax_lowest(std::vector<double>{}), ConfigError);
}

TEST_CASE("softmax rows are normalized and stable") {
    const std::vector<double> row{1000.0, 1000.0, 999.0};
    const std::vector<double> p = softmax_row(row);
    double sum = 0.0;
    for (double v : p) {
        CHECK(std::isfinite(v));
        sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p[0] == p[1]);
    CHECK(p[2] < p[0]);
}

TEST_CASE("labels outside the class range are rejected") {
    Matrix logits(1, 3);
    CHECK_THROWS_AS(xent_loss(logits, std::vector<int>{3}), ConfigError);
    CHECK_THROWS_AS(xent_loss(logits, std::vector<int>{-1}), ConfigError);
    CHECK_THROWS_AS(xent_loss(Matrix(0, 3), std::vector<int>{}), ConfigError);
}
