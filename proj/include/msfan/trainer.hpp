#pragma once

#include <utility>
#include <vector>

#include "msfan/bank.hpp"
#include "msfan/checkpoint.hpp"
#include "msfan/classifier.hpp"
#include "msfan/config.hpp"
#include "msfan/datagen.hpp"
#include "msfan/metrics.hpp"
#include "msfan/support.hpp"

namespace msfan {

struct TrainState {
    int n_sources = 0;
    int n_classes = 0;
    FeatureExtractor extractor;
    std::vector<CosineClassifier> classifiers; // one per source
    std::vector<MemoryBank> banks;             // M sources + target
    std::vector<ClusterSet> cluster_sets;      // per domain; empty when unused
    std::vector<SupportSet> supports;          // per source; valid when supports_ready
    bool supports_ready = false;
    std::vector<PriorTracker> trackers;        // one per classifier
    int step = 0;

    ModelState to_model(const RunConfig& cfg) const;
};

struct TrainResult {
    TrainState state;
    std::vector<MetricsRecord> metrics;
};

// Full MSFAN loop: balanced multi-domain batches, the supervised loss on a
// pooled labeled draw, the enabled adaptation losses, SGD, memory-bank
// momentum updates, and periodic reclustering / support rebuild / prototype
// weight refresh. Deterministic for a fixed config and seed.
TrainResult train(const MultiDomainDataset& ds, const RunConfig& cfg);

// Target accuracy under (max-similarity, ensemble) inference. Requires the
// dataset's hidden eval labels; throws DataError when they are missing.
std::pair<double, double> evaluate_model(const FeatureExtractor& extractor,
                                         std::span<const CosineClassifier> classifiers,
                                         const MultiDomainDataset& ds);
std::pair<double, double> evaluate(const TrainState& state, const MultiDomainDataset& ds);

// Same architecture and schedule with every adaptation loss disabled; returns
// the ensemble-inference accuracy.
double source_only_baseline(const MultiDomainDataset& ds, const RunConfig& cfg);

struct AblationRow {
    std::string stage;
    double accuracy = 0.0;
};

// Cumulative toggle pipeline: combined, +multi_classifier, +l_mps, +l_mi,
// +l_ssc. The first stage reports ensemble accuracy, later stages report
// max-similarity accuracy.
std::vector<AblationRow> run_ablation(const MultiDomainDataset& ds, const RunConfig& cfg);

} // namespace msfan
