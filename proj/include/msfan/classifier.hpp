#pragma once

#include <span>
#include <vector>

#include "msfan/bank.hpp"
#include "msfan/matrix.hpp"
#include "msfan/numerics.hpp"
#include "msfan/rng.hpp"
#include "msfan/support.hpp"

namespace msfan {

// Per-source cosine classifier: p(x) = softmax(W^T f / T). Columns start
// unit-norm; gradient steps may denormalize them until the next prototype
// refresh rewrites the refreshed columns with unit norm.
struct CosineClassifier {
    Matrix weights; // d x n_c, one column per class
    double temperature = 0.05;
    Matrix grad;
    Matrix velocity;

    CosineClassifier() = default;
    CosineClassifier(std::size_t feature_dim, std::size_t n_classes, double temp);

    void init(Rng& rng);
    void zero_grad();
    std::size_t n_classes() const { return weights.cols; }
};

std::vector<double> classify(const CosineClassifier& clf, std::span<const double> f);

// Supervised loss over labels pooled from all sources: every classifier sees
// every labeled sample. Gradients go to the features (scaled, accumulated into
// grad_features) and, unless blocked, to each classifier's weight gradient.
double cls_loss(std::span<CosineClassifier> classifiers, const Matrix& features,
                std::span<const std::size_t> rows, std::span<const int> labels, int n_classes,
                double scale, Matrix& grad_features, bool update_weight_grad);

// Replaces each class column with the normalized mean of the bank rows of that
// class's support members. Classes without support entries keep their column.
// Returns the number of degenerate (zero-norm mean) classes that were kept.
int prototype_weight_update(CosineClassifier& clf, const SupportSet& support,
                            const MemoryBank& bank);

// Moving-average estimate of the marginal prediction of one classifier.
struct PriorTracker {
    std::vector<double> probs;
    double beta = 0.9;

    PriorTracker() = default;
    PriorTracker(std::size_t n_classes, double beta_value)
        : probs(n_classes, 1.0 / static_cast<double>(n_classes)), beta(beta_value) {}

    // probs <- beta*probs + (1-beta)*batch_mean, renormalized.
    void update(std::span<const double> batch_mean);
};

struct MiResult {
    double loss = 0.0;                      // -sum_i I_i
    std::vector<double> per_classifier_mi;  // I_i = H_hat(marginal) - mean_x H(p_i(x))
    std::vector<std::vector<double>> batch_mean; // per classifier, mean of p_i(x) over the batch
};

// Mutual-information regularizer over an unlabeled batch. The marginal entropy
// is estimated against the (constant) tracker: -mean_x sum_c p_c(x) log tracker_c.
MiResult mi_loss(std::span<CosineClassifier> classifiers, const Matrix& features,
                 std::span<const std::size_t> rows, std::span<const PriorTracker> trackers,
                 double scale, Matrix& grad_features, bool update_weight_grad);

// Class of the single most similar weight vector across all classifiers.
// Ties break toward the lower domain index, then the lower class index.
int global_max_similarity_inference(std::span<const CosineClassifier> classifiers,
                                    std::span<const double> f);

// Argmax of the mean of the per-classifier softmax outputs; same tie rule.
int ensemble_inference(std::span<const CosineClassifier> classifiers, std::span<const double> f);

void sgd_step(std::span<CosineClassifier> classifiers, const SgdConfig& cfg);

} // namespace msfan
