#pragma once

#include <span>
#include <utility>
#include <vector>

#include "msfan/bank.hpp"
#include "msfan/matrix.hpp"

namespace msfan {

struct SupportEntry {
    std::size_t sample_index = 0; // index into the domain's memory bank
    int label = 0;
    bool pseudo = false;
};

// Labeled samples of one source domain plus unlabeled ones whose predictions
// agree confidently across all classifiers.
struct SupportSet {
    int domain_id = 0;
    std::vector<SupportEntry> entries;

    std::size_t pseudo_count() const {
        std::size_t n = 0;
        for (const SupportEntry& e : entries) n += e.pseudo ? 1 : 0;
        return n;
    }
};

struct SupportConfig {
    double threshold = 0.9; // confidence threshold t
    double psi = 0.1;       // similarity temperature

    void validate() const;
};

// predictions[i'] holds one row per unlabeled sample with the softmax output
// of classifier i'. An unlabeled sample joins when every classifier's max
// probability exceeds the threshold and all argmaxes agree.
SupportSet build_support_set(int domain_id,
                             std::span<const std::pair<std::size_t, int>> labeled,
                             std::span<const std::size_t> unlabeled,
                             std::span<const Matrix> predictions, const SupportConfig& cfg);

// Soft class similarity of f against a support set: weights are a softmax of
// cos(f, bank row)/psi over the entries; the result mixes their one-hot
// labels. Bank rows are constants. Throws StateError on an empty support set.
std::vector<double> support_similarity(std::span<const double> f, const SupportSet& support,
                                       const MemoryBank& bank, int n_classes,
                                       const SupportConfig& cfg);

// Cross-domain similarity consistency: for every batch row and every ordered
// pair of source domains (i, i'), the cross-entropy of the prediction-side
// vector s_i against the detached target-side vector s_{i'}, averaged over the
// batch. swap_roles exchanges which side of each term is the prediction.
double ssc_loss(const Matrix& features, std::span<const std::size_t> rows,
                std::span<const SupportSet> supports, std::span<const MemoryBank> banks,
                int n_classes, const SupportConfig& cfg, bool swap_roles, double scale,
                Matrix& grad);

} // namespace msfan
