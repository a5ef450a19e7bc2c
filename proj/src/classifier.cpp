#include "msfan/classifier.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "msfan/error.hpp"

namespace msfan {

CosineClassifier::CosineClassifier(std::size_t feature_dim, std::size_t n_classes, double temp)
    : weights(feature_dim, n_classes), temperature(temp),
      grad(feature_dim, n_classes), velocity(feature_dim, n_classes) {
    if (!(temp > 0.0)) throw ConfigError("classifier: temperature must be > 0");
}

void CosineClassifier::init(Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(weights.rows + weights.cols));
    for (double& v : weights.data) v = rng.uniform(-a, a);
    // Unit columns so logits start as cosine similarities.
    for (std::size_t c = 0; c < weights.cols; ++c) {
        double nsq = 0.0;
        for (std::size_t j = 0; j < weights.rows; ++j) nsq += weights(j, c) * weights(j, c);
        const double r = std::sqrt(nsq);
        if (!(r > 0.0)) throw NumericError("classifier init: zero-norm column");
        for (std::size_t j = 0; j < weights.rows; ++j) weights(j, c) /= r;
    }
}

void CosineClassifier::zero_grad() { grad.fill(0.0); }

namespace {

std::vector<double> logits_of(const CosineClassifier& clf, std::span<const double> f) {
    if (f.size() != clf.weights.rows) throw DimensionError("classify: feature width mismatch");
    std::vector<double> logits(clf.weights.cols, 0.0);
    for (std::size_t j = 0; j < clf.weights.rows; ++j) {
        const double fj = f[j];
        for (std::size_t c = 0; c < clf.weights.cols; ++c) logits[c] += clf.weights(j, c) * fj;
    }
    for (double& v : logits) v /= clf.temperature;
    return logits;
}

// Accumulates scale * (dlogits^T) into feature and weight gradients.
void backprop_logits(CosineClassifier& clf, std::span<const double> f,
                     std::span<const double> dlogits, double scale, std::span<double> grad_f,
                     bool update_weight_grad) {
    const double inv_t = 1.0 / clf.temperature;
    for (std::size_t j = 0; j < clf.weights.rows; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < clf.weights.cols; ++c) acc += clf.weights(j, c) * dlogits[c];
        grad_f[j] += scale * inv_t * acc;
    }
    if (update_weight_grad) {
        for (std::size_t j = 0; j < clf.weights.rows; ++j)
            for (std::size_t c = 0; c < clf.weights.cols; ++c)
                clf.grad(j, c) += scale * inv_t * f[j] * dlogits[c];
    }
}

} // namespace

std::vector<double> classify(const CosineClassifier& clf, std::span<const double> f) {
    return softmax(logits_of(clf, f));
}

double cls_loss(std::span<CosineClassifier> classifiers, const Matrix& features,
                std::span<const std::size_t> rows, std::span<const int> labels, int n_classes,
                double scale, Matrix& grad_features, bool update_weight_grad) {
    if (rows.empty()) return 0.0;
    if (rows.size() != labels.size()) throw DimensionError("cls_loss: rows/labels size mismatch");
    for (int y : labels)
        if (y < 0 || y >= n_classes)
            throw DataError("cls_loss: label " + std::to_string(y) + " out of range");

    const double weight = 1.0 / static_cast<double>(rows.size());
    double loss = 0.0;
    std::vector<double> dlogits(static_cast<std::size_t>(n_classes));
    for (CosineClassifier& clf : classifiers) {
        for (std::size_t s = 0; s < rows.size(); ++s) {
            const auto f = features.row(rows[s]);
            const std::vector<double> probs = classify(clf, f);
            const std::size_t y = static_cast<std::size_t>(labels[s]);
            loss -= weight * std::log(probs[y]);
            for (std::size_t c = 0; c < probs.size(); ++c)
                dlogits[c] = probs[c] - (c == y ? 1.0 : 0.0);
            backprop_logits(clf, f, dlogits, scale * weight, grad_features.row(rows[s]),
                            update_weight_grad);
        }
    }
    return loss;
}

int prototype_weight_update(CosineClassifier& clf, const SupportSet& support,
                            const MemoryBank& bank) {
    const std::size_t n_classes = clf.weights.cols;
    std::vector<std::vector<double>> sums(n_classes, std::vector<double>(clf.weights.rows, 0.0));
    std::vector<std::size_t> counts(n_classes, 0);
    for (const SupportEntry& entry : support.entries) {
        if (entry.label < 0 || static_cast<std::size_t>(entry.label) >= n_classes)
            throw StateError("prototype_weight_update: support label out of range");
        if (entry.sample_index >= bank.vectors.rows)
            throw StateError("prototype_weight_update: support entry outside memory bank");
        axpy(1.0, bank.vectors.row(entry.sample_index), sums[static_cast<std::size_t>(entry.label)]);
        counts[static_cast<std::size_t>(entry.label)]++;
    }

    int degenerate = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (counts[c] == 0) continue; // keep the previous column
        for (double& v : sums[c]) v /= static_cast<double>(counts[c]);
        const double r = norm2(sums[c]);
        if (!(r > 1e-12)) {
            ++degenerate; // zero-norm mean: keep the previous column
            continue;
        }
        for (std::size_t j = 0; j < clf.weights.rows; ++j) clf.weights(j, c) = sums[c][j] / r;
    }
    return degenerate;
}

void PriorTracker::update(std::span<const double> batch_mean) {
    if (batch_mean.size() != probs.size()) throw DimensionError("tracker: width mismatch");
    double total = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        probs[c] = beta * probs[c] + (1.0 - beta) * batch_mean[c];
        total += probs[c];
    }
    if (!(total > 0.0)) throw NumericError("tracker: degenerate prior");
    for (double& p : probs) p /= total;
}

MiResult mi_loss(std::span<CosineClassifier> classifiers, const Matrix& features,
                 std::span<const std::size_t> rows, std::span<const PriorTracker> trackers,
                 double scale, Matrix& grad_features, bool update_weight_grad) {
    MiResult result;
    result.per_classifier_mi.assign(classifiers.size(), 0.0);
    result.batch_mean.assign(classifiers.size(), {});
    if (rows.empty()) return result;
    if (trackers.size() != classifiers.size()) throw StateError("mi_loss: tracker count mismatch");

    const double weight = 1.0 / static_cast<double>(rows.size());
    for (std::size_t i = 0; i < classifiers.size(); ++i) {
        CosineClassifier& clf = classifiers[i];
        const std::vector<double>& prior = trackers[i].probs;
        std::vector<double> log_prior(prior.size());
        for (std::size_t c = 0; c < prior.size(); ++c) {
            if (!(prior[c] > 0.0)) throw NumericError("mi_loss: tracker entry not positive");
            log_prior[c] = std::log(prior[c]);
        }

        double marginal_entropy = 0.0; // -mean_x sum_c p_c(x) log prior_c
        double mean_entropy = 0.0;     // mean_x H(p(x))
        std::vector<double> mean_probs(prior.size(), 0.0);
        std::vector<double> dlogits(prior.size());
        for (std::size_t row : rows) {
            const auto f = features.row(row);
            const std::vector<double> probs = classify(clf, f);
            for (std::size_t c = 0; c < probs.size(); ++c) mean_probs[c] += weight * probs[c];
            const double h = entropy(probs);
            mean_entropy += weight * h;
            double cross = 0.0;
            for (std::size_t c = 0; c < probs.size(); ++c) cross += probs[c] * log_prior[c];
            marginal_entropy -= weight * cross;

            // L_MI contribution per sample: weight * (H(p) + sum_c p_c log prior_c).
            // dH/dlogit_b = -p_b (log p_b + H);
            // d(sum p log prior)/dlogit_b = p_b (log prior_b - cross).
            for (std::size_t c = 0; c < probs.size(); ++c) {
                const double log_p = probs[c] > 0.0 ? std::log(probs[c]) : 0.0;
                const double dH = probs[c] > 0.0 ? -probs[c] * (log_p + h) : 0.0;
                const double dcross = probs[c] * (log_prior[c] - cross);
                dlogits[c] = dH + dcross;
            }
            backprop_logits(clf, f, dlogits, scale * weight, grad_features.row(row),
                            update_weight_grad);
        }
        const double mi = marginal_entropy - mean_entropy;
        result.per_classifier_mi[i] = mi;
        result.batch_mean[i] = std::move(mean_probs);
        result.loss -= mi;
    }
    return result;
}

namespace {

template <typename Score>
int argmax_over_classifiers(std::span<const CosineClassifier> classifiers, Score&& score) {
    int best_class = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < classifiers.size(); ++i) {
        const std::vector<double> values = score(classifiers[i]);
        for (std::size_t c = 0; c < values.size(); ++c)
            if (values[c] > best) {
                best = values[c];
                best_class = static_cast<int>(c);
            }
    }
    return best_class;
}

} // namespace

int global_max_similarity_inference(std::span<const CosineClassifier> classifiers,
                                    std::span<const double> f) {
    if (classifiers.empty()) throw StateError("inference: no classifiers");
    return argmax_over_classifiers(classifiers, [&](const CosineClassifier& clf) {
        std::vector<double> sims(clf.weights.cols, 0.0);
        for (std::size_t j = 0; j < clf.weights.rows; ++j)
            for (std::size_t c = 0; c < clf.weights.cols; ++c) sims[c] += clf.weights(j, c) * f[j];
        return sims;
    });
}

int ensemble_inference(std::span<const CosineClassifier> classifiers, std::span<const double> f) {
    if (classifiers.empty()) throw StateError("inference: no classifiers");
    std::vector<double> mean(classifiers[0].weights.cols, 0.0);
    for (const CosineClassifier& clf : classifiers) {
        const std::vector<double> probs = classify(clf, f);
        if (probs.size() != mean.size()) throw DimensionError("inference: class count mismatch");
        for (std::size_t c = 0; c < probs.size(); ++c) mean[c] += probs[c];
    }
    int best = 0;
    for (std::size_t c = 1; c < mean.size(); ++c)
        if (mean[c] > mean[best]) best = static_cast<int>(c);
    return best;
}

void sgd_step(std::span<CosineClassifier> classifiers, const SgdConfig& cfg) {
    for (CosineClassifier& clf : classifiers) {
        for (double g : clf.grad.data)
            if (!std::isfinite(g)) throw NumericError("sgd_step: non-finite classifier gradient");
    }
    for (CosineClassifier& clf : classifiers) {
        sgd_apply(clf.weights.data, clf.grad.data, clf.velocity.data, cfg);
        clf.zero_grad();
    }
}

} // namespace msfan
