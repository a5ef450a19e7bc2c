#pragma once

#include <span>
#include <vector>

#include "msfan/matrix.hpp"
#include "msfan/rng.hpp"

namespace msfan {

// Numerically stable softmax (max-subtraction). Throws DimensionError on empty input.
std::vector<double> softmax(std::span<const double> logits);

// Shannon entropy in nats, with 0*log(0) = 0.
double entropy(std::span<const double> probs);

// -sum target_c * log(pred_c). Throws NumericError when a used pred entry is <= 0.
double cross_entropy(std::span<const double> pred, std::span<const double> target);

struct SgdConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
};

// Heavy-ball step on one parameter tensor: v <- momentum*v + g; p <- p - lr*v.
// Throws NumericError on a non-finite gradient before touching the parameters.
void sgd_apply(std::span<double> value, std::span<double> grad, std::span<double> velocity,
               const SgdConfig& cfg);

// Two-layer perceptron (input -> hidden ReLU -> feature) followed by an l2
// normalization layer. Parameters carry matching gradient and velocity buffers.
struct FeatureExtractor {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    std::size_t feature_dim = 0;

    Matrix w1, w2;              // hidden x input, feature x hidden
    std::vector<double> b1, b2; // hidden, feature
    Matrix gw1, gw2;
    std::vector<double> gb1, gb2;
    Matrix vw1, vw2;
    std::vector<double> vb1, vb2;

    FeatureExtractor() = default;
    FeatureExtractor(std::size_t d_in, std::size_t h, std::size_t d);

    // Glorot-style uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)).
    void init(Rng& rng);
    void zero_grad();
    bool grads_finite() const;
};

// Intermediates required to backpropagate through one forward pass.
struct ForwardTape {
    Matrix input;      // n x d_in
    Matrix hidden_pre; // n x h, pre-ReLU
    Matrix hidden;     // n x h
    Matrix features;   // n x d, row-normalized output
    std::vector<double> prenorm; // per-row norm of the pre-normalization output
};

// Forward pass over a batch of rows. Every output row has unit l2 norm.
// Throws DimensionError on a column mismatch and NumericError when a
// pre-normalization row has zero norm.
Matrix extract_features(const FeatureExtractor& net, const Matrix& batch, ForwardTape& tape);

// Convenience overload when no backward pass is needed.
Matrix extract_features(const FeatureExtractor& net, const Matrix& batch);

// Accumulates parameter gradients for an upstream gradient w.r.t. the
// normalized features. The normalization backward projects out the radial
// component: g_pre = (g - (g.f) f) / prenorm.
void backward(FeatureExtractor& net, const ForwardTape& tape, const Matrix& grad_features);

// Heavy-ball update of all extractor parameters; zeroes gradients afterwards.
void sgd_step(FeatureExtractor& net, const SgdConfig& cfg);

} // namespace msfan
