#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msfan/matrix.hpp"

namespace msfan {

constexpr int kNoLabel = -1;

// One observation. domain_id in [0, M] where M is the target domain.
struct DomainSample {
    int domain_id = 0;
    std::vector<double> raw;
    int label = kNoLabel; // visible label; kNoLabel when absent
    bool is_labeled = false;

    bool operator==(const DomainSample&) const = default;
};

struct MultiDomainDataset {
    int n_sources = 0; // M; target domain id equals n_sources
    int n_classes = 0;
    int input_dim = 0;
    std::vector<DomainSample> samples;
    // True label per sample, aligned with `samples`. Read only by evaluation
    // and reporting code; training never touches it.
    std::vector<int> eval_labels;

    int target_domain() const { return n_sources; }
    std::vector<std::size_t> domain_indices(int domain_id) const;
    // Structural checks a dataset must pass before training starts.
    void validate_for_training() const;

    bool operator==(const MultiDomainDataset&) const = default;
};

struct GeneratorConfig {
    int n_sources = 3;
    int n_classes = 5;
    int input_dim = 20;
    int samples_per_class = 40; // per domain
    int shots_per_class = 1;    // labeled per class per source
    double class_separation = 3.0;
    double domain_shift = 0.6;
    double noise_sigma = 0.3;
    std::uint64_t seed = 1;

    void validate() const;
};

struct GeneratedDataset {
    MultiDomainDataset dataset;
    Matrix latents; // one latent row per sample, before the per-domain map
};

// Per class c, a shared latent mean with pairwise separation at least
// class_separation; per domain, a random rotation-plus-shift map whose
// distance from the identity scales with domain_shift. Deterministic in the
// seed. Exactly shots_per_class labeled samples per class per source.
GeneratedDataset generate_synthetic_detailed(const GeneratorConfig& cfg);
MultiDomainDataset generate_synthetic(const GeneratorConfig& cfg);

// Writes <stem>.csv (header: domain_id,split,label,f0,...) and
// <stem>.eval.csv (header: sample_index,label). load reads both; a missing
// eval sidecar yields empty eval labels.
void save_dataset(const MultiDomainDataset& ds, const std::string& stem);
MultiDomainDataset load_dataset(const std::string& stem);

// Keeps exactly `shots` labeled samples per class per source domain (chosen by
// seeded shuffle among the currently labeled ones) and unlabels the rest.
MultiDomainDataset few_shot_split(const MultiDomainDataset& ds, int shots, std::uint64_t seed);

} // namespace msfan
