#pragma once

#include <string>
#include <vector>

#include "msfan/classifier.hpp"
#include "msfan/config.hpp"
#include "msfan/numerics.hpp"

namespace msfan {

// Everything needed to run inference: the shared extractor, the per-source
// cosine classifiers, and an echo of the run configuration.
struct ModelState {
    FeatureExtractor extractor;
    std::vector<CosineClassifier> classifiers;
    RunConfig config;
};

// Text container, format MSFAN-CHECKPOINT v1 (layout documented in README).
// Doubles are written with 17 significant digits so the round trip is exact.
void save_checkpoint(const ModelState& model, const std::string& path);
ModelState load_checkpoint(const std::string& path);

} // namespace msfan
