#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msfan/numerics.hpp"
#include "msfan/rng.hpp"
#include "oracles.hpp"

using namespace msfan;

TEST_CASE("softmax symmetry and derived values") {
    const std::vector<double> symmetric{0.0, 0.0};
    auto p = softmax(symmetric);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));

    // Derived by direct evaluation of the exponentials.
    const std::vector<double> logits{1.0, 2.0, 3.0};
    const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
    const double z = e1 + e2 + e3;
    p = softmax(logits);
    CHECK(p[0] == doctest::Approx(e1 / z).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(e2 / z).epsilon(1e-12));
    CHECK(p[2] == doctest::Approx(e3 / z).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(0.09003).epsilon(1e-4));
    CHECK(p[2] == doctest::Approx(0.66524).epsilon(1e-4));
}

TEST_CASE("softmax survives huge logits and sums to one") {
    const std::vector<double> logits{1000.0, 0.0};
    auto p = softmax(logits);
    CHECK(p[0] == doctest::Approx(1.0));
    CHECK(p[1] == doctest::Approx(0.0));
    CHECK(std::isfinite(p[0]));

    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> random(5);
        for (double& v : random) v = rng.uniform(-1e3, 1e3);
        auto probs = softmax(random);
        double total = 0.0;
        for (double v : probs) {
            CHECK(v >= 0.0); // spreads beyond ~745 nats underflow to exactly 0
            total += v;
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }

    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> random(5);
        for (double& v : random) v = rng.uniform(-30.0, 30.0);
        auto probs = softmax(random);
        for (double v : probs) CHECK(v > 0.0);
    }
}

TEST_CASE("softmax rejects empty input") {
    CHECK_THROWS_AS(softmax(std::vector<double>{}), DimensionError);
}

TEST_CASE("entropy values") {
    const std::vector<double> onehot{1.0, 0.0, 0.0};
    CHECK(entropy(onehot) == doctest::Approx(0.0));
    const std::vector<double> uniform{1.0 / 3, 1.0 / 3, 1.0 / 3};
    CHECK(entropy(uniform) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    // Derived: direct evaluation.
    const std::vector<double> skewed{0.75, 0.25};
    const double expected = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
    CHECK(std::abs(entropy(skewed) - expected) < 1e-12);
    CHECK(entropy(skewed) == doctest::Approx(0.56234).epsilon(1e-4));
}

TEST_CASE("cross_entropy values and domain errors") {
    const std::vector<double> onehot{0.0, 1.0};
    CHECK(cross_entropy(onehot, onehot) == doctest::Approx(0.0));

    const std::vector<double> uniform4{0.25, 0.25, 0.25, 0.25};
    const std::vector<double> target4{0.0, 0.0, 1.0, 0.0};
    CHECK(cross_entropy(uniform4, target4) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    const std::vector<double> pred{0.7, 0.3};
    const std::vector<double> target{0.5, 0.5};
    const double expected = -0.5 * (std::log(0.7) + std::log(0.3));
    CHECK(cross_entropy(pred, target) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(cross_entropy(pred, target) == doctest::Approx(0.78032).epsilon(1e-4));

    const std::vector<double> bad{0.0, 1.0};
    const std::vector<double> wants_first{1.0, 0.0};
    CHECK_THROWS_AS(cross_entropy(bad, wants_first), NumericError);
}

TEST_CASE("extract_features normalizes rows; identity net reproduces direction") {
    // Identity-ish network: W1 = I (h = d_in), W2 = I, ReLU passes nonnegative input.
    FeatureExtractor net(2, 2, 2);
    net.w1(0, 0) = 1.0;
    net.w1(1, 1) = 1.0;
    net.w2(0, 0) = 1.0;
    net.w2(1, 1) = 1.0;

    Matrix batch(1, 2);
    batch(0, 0) = 3.0;
    batch(0, 1) = 4.0;
    const Matrix f = extract_features(net, batch);
    CHECK(f(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(f(0, 1) == doctest::Approx(0.8).epsilon(1e-12));

    // Scale invariance of the l2 normalization.
    Matrix scaled(1, 2);
    scaled(0, 0) = 15.0;
    scaled(0, 1) = 20.0;
    const Matrix f2 = extract_features(net, scaled);
    CHECK(f2(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(f2(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("extract_features output rows are unit norm for random nets") {
    Rng rng(11);
    FeatureExtractor net(4, 8, 8);
    net.init(rng);
    Matrix batch(3, 4);
    for (double& v : batch.data) v = rng.normal();
    const Matrix f = extract_features(net, batch);
    for (std::size_t i = 0; i < f.rows; ++i) CHECK(norm2(f.row(i)) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("extract_features error paths") {
    FeatureExtractor net(3, 4, 4);
    Rng rng(5);
    net.init(rng);
    Matrix wrong(2, 5);
    CHECK_THROWS_AS(extract_features(net, wrong), DimensionError);

    // All-zero weights give a zero-norm pre-normalization vector.
    FeatureExtractor zero_net(3, 4, 4);
    Matrix batch(1, 3, 1.0);
    CHECK_THROWS_AS(extract_features(zero_net, batch), NumericError);
}

TEST_CASE("backprop matches finite differences on a random net") {
    Rng rng(13);
    FeatureExtractor net(4, 8, 8);
    net.init(rng);
    Matrix batch(3, 4);
    for (double& v : batch.data) v = rng.normal();
    Matrix upstream(3, 8);
    for (double& v : upstream.data) v = rng.normal();

    // Loss = sum(upstream .* features).
    auto value = [&]() {
        const Matrix f = extract_features(net, batch);
        double acc = 0.0;
        for (std::size_t i = 0; i < f.data.size(); ++i) acc += upstream.data[i] * f.data[i];
        return acc;
    };

    net.zero_grad();
    ForwardTape tape;
    extract_features(net, batch, tape);
    backward(net, tape, upstream);
    const std::vector<double> analytic = oracles::flatten_extractor_grads(net);
    const std::vector<double> fd =
        oracles::finite_difference(value, oracles::extractor_param_spans(net));
    CHECK(oracles::max_relative_error(analytic, fd) < 1e-4);
}

TEST_CASE("l2-normalization backward is the orthogonal projection") {
    Rng rng(17);
    FeatureExtractor net(4, 8, 6);
    net.init(rng);
    Matrix batch(2, 4);
    for (double& v : batch.data) v = rng.normal();
    ForwardTape tape;
    const Matrix f = extract_features(net, batch, tape);

    // The projected gradient is orthogonal to the feature row.
    Matrix upstream(2, 6);
    for (double& v : upstream.data) v = rng.normal();
    for (std::size_t i = 0; i < f.rows; ++i) {
        const auto feature = f.row(i);
        const auto g = upstream.row(i);
        const double radial = dot(g, feature);
        std::vector<double> projected(f.cols);
        for (std::size_t j = 0; j < f.cols; ++j)
            projected[j] = (g[j] - radial * feature[j]) / tape.prenorm[i];
        CHECK(std::abs(dot(projected, feature)) < 1e-10);
    }
}

TEST_CASE("sgd_apply steps and momentum unrolling") {
    SgdConfig cfg{0.1, 0.0};
    std::vector<double> value{1.0}, grad{2.0}, velocity{0.0};
    sgd_apply(value, grad, velocity, cfg);
    CHECK(value[0] == doctest::Approx(0.8).epsilon(1e-15));

    // Two steps with momentum 0.9, lr 0.1, constant gradient 1 from 0.
    SgdConfig heavy{0.1, 0.9};
    value = {0.0};
    velocity = {0.0};
    grad = {1.0};
    sgd_apply(value, grad, velocity, heavy);
    CHECK(value[0] == doctest::Approx(-0.1).epsilon(1e-15));
    grad = {1.0};
    sgd_apply(value, grad, velocity, heavy);
    CHECK(value[0] == doctest::Approx(-0.29).epsilon(1e-15));
}

TEST_CASE("sgd_step leaves parameters alone on zero gradients and zeroes grads") {
    Rng rng(3);
    FeatureExtractor net(3, 4, 4);
    net.init(rng);
    const Matrix w1_before = net.w1;
    sgd_step(net, SgdConfig{0.1, 0.9});
    CHECK(net.w1 == w1_before);

    net.gw1(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(sgd_step(net, SgdConfig{0.1, 0.9}), NumericError);
}

TEST_CASE("deterministic initialization and trajectories for equal seeds") {
    FeatureExtractor a(5, 6, 4), b(5, 6, 4);
    Rng ra(42), rb(42);
    a.init(ra);
    b.init(rb);
    CHECK(a.w1 == b.w1);
    CHECK(a.w2 == b.w2);

    Matrix batch(2, 5);
    Rng data_rng(1);
    for (double& v : batch.data) v = data_rng.normal();
    Matrix upstream(2, 4, 0.25);
    for (int step = 0; step < 5; ++step) {
        for (FeatureExtractor* net : {&a, &b}) {
            ForwardTape tape;
            extract_features(*net, batch, tape);
            backward(*net, tape, upstream);
            sgd_step(*net, SgdConfig{0.05, 0.9});
        }
    }
    CHECK(a.w1 == b.w1);
    CHECK(a.w2 == b.w2);
    CHECK(a.b1 == b.b1);
    CHECK(a.b2 == b.b2);
}
