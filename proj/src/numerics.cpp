#include "msfan/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace msfan {

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw DimensionError("softmax: empty input");
    const double peak = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

double entropy(std::span<const double> probs) {
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

double cross_entropy(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) throw DimensionError("cross_entropy: size mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (target[i] == 0.0) continue;
        if (pred[i] <= 0.0) throw NumericError("cross_entropy: non-positive prediction entry");
        loss -= target[i] * std::log(pred[i]);
    }
    return loss;
}

void sgd_apply(std::span<double> value, std::span<double> grad, std::span<double> velocity,
               const SgdConfig& cfg) {
    for (double g : grad)
        if (!std::isfinite(g)) throw NumericError("sgd: non-finite gradient");
    for (std::size_t i = 0; i < value.size(); ++i) {
        velocity[i] = cfg.momentum * velocity[i] + grad[i];
        value[i] -= cfg.learning_rate * velocity[i];
    }
}

FeatureExtractor::FeatureExtractor(std::size_t d_in, std::size_t h, std::size_t d)
    : input_dim(d_in), hidden_dim(h), feature_dim(d),
      w1(h, d_in), w2(d, h), b1(h, 0.0), b2(d, 0.0),
      gw1(h, d_in), gw2(d, h), gb1(h, 0.0), gb2(d, 0.0),
      vw1(h, d_in), vw2(d, h), vb1(h, 0.0), vb2(d, 0.0) {}

void FeatureExtractor::init(Rng& rng) {
    const double a1 = std::sqrt(6.0 / static_cast<double>(input_dim + hidden_dim));
    for (double& v : w1.data) v = rng.uniform(-a1, a1);
    const double a2 = std::sqrt(6.0 / static_cast<double>(hidden_dim + feature_dim));
    for (double& v : w2.data) v = rng.uniform(-a2, a2);
    std::fill(b1.begin(), b1.end(), 0.0);
    std::fill(b2.begin(), b2.end(), 0.0);
}

void FeatureExtractor::zero_grad() {
    gw1.fill(0.0);
    gw2.fill(0.0);
    std::fill(gb1.begin(), gb1.end(), 0.0);
    std::fill(gb2.begin(), gb2.end(), 0.0);
}

bool FeatureExtractor::grads_finite() const {
    auto ok = [](std::span<const double> s) {
        for (double v : s)
            if (!std::isfinite(v)) return false;
        return true;
    };
    return ok(gw1.data) && ok(gw2.data) && ok(gb1) && ok(gb2);
}

Matrix extract_features(const FeatureExtractor& net, const Matrix& batch, ForwardTape& tape) {
    if (batch.cols != net.input_dim)
        throw DimensionError("extract_features: batch has " + std::to_string(batch.cols) +
                             " columns, extractor expects " + std::to_string(net.input_dim));
    if (batch.rows == 0) throw DimensionError("extract_features: empty batch");

    const std::size_t n = batch.rows;
    tape.input = batch;
    tape.hidden_pre = matmul_nt(batch, net.w1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < net.hidden_dim; ++j) tape.hidden_pre(i, j) += net.b1[j];

    tape.hidden = tape.hidden_pre;
    for (double& v : tape.hidden.data) v = std::max(v, 0.0);

    Matrix pre = matmul_nt(tape.hidden, net.w2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < net.feature_dim; ++j) pre(i, j) += net.b2[j];

    tape.prenorm.assign(n, 0.0);
    tape.features = Matrix(n, net.feature_dim);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = norm2(pre.row(i));
        if (!(r > 0.0) || !std::isfinite(r))
            throw NumericError("extract_features: zero-norm pre-normalization row " + std::to_string(i));
        tape.prenorm[i] = r;
        for (std::size_t j = 0; j < net.feature_dim; ++j) tape.features(i, j) = pre(i, j) / r;
    }
    return tape.features;
}

Matrix extract_features(const FeatureExtractor& net, const Matrix& batch) {
    ForwardTape tape;
    return extract_features(net, batch, tape);
}

void backward(FeatureExtractor& net, const ForwardTape& tape, const Matrix& grad_features) {
    const std::size_t n = tape.input.rows;
    if (grad_features.rows != n || grad_features.cols != net.feature_dim)
        throw DimensionError("backward: gradient shape mismatch");

    // Through the l2 normalization layer.
    Matrix grad_pre(n, net.feature_dim);
    for (std::size_t i = 0; i < n; ++i) {
        const auto f = tape.features.row(i);
        const auto g = grad_features.row(i);
        const double radial = dot(g, f);
        for (std::size_t j = 0; j < net.feature_dim; ++j)
            grad_pre(i, j) = (g[j] - radial * f[j]) / tape.prenorm[i];
    }

    // Second linear layer.
    Matrix gw2 = matmul_tn(grad_pre, tape.hidden);
    axpy(1.0, gw2.data, net.gw2.data);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < net.feature_dim; ++j) net.gb2[j] += grad_pre(i, j);

    // ReLU.
    Matrix grad_hidden = matmul(grad_pre, net.w2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < net.hidden_dim; ++j)
            if (tape.hidden_pre(i, j) <= 0.0) grad_hidden(i, j) = 0.0;

    // First linear layer.
    Matrix gw1 = matmul_tn(grad_hidden, tape.input);
    axpy(1.0, gw1.data, net.gw1.data);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < net.hidden_dim; ++j) net.gb1[j] += grad_hidden(i, j);
}

void sgd_step(FeatureExtractor& net, const SgdConfig& cfg) {
    if (!net.grads_finite()) throw NumericError("sgd_step: non-finite extractor gradient");
    sgd_apply(net.w1.data, net.gw1.data, net.vw1.data, cfg);
    sgd_apply(net.w2.data, net.gw2.data, net.vw2.data, cfg);
    sgd_apply(net.b1, net.gb1, net.vb1, cfg);
    sgd_apply(net.b2, net.gb2, net.vb2, cfg);
    net.zero_grad();
}

} // namespace msfan
