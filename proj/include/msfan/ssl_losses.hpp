#pragma once

#include <span>
#include <vector>

#include "msfan/bank.hpp"
#include "msfan/matrix.hpp"

namespace msfan {

struct SslConfig {
    double phi = 0.1;    // in-domain similarity temperature
    double margin = 0.1; // additive margin on the assigned cluster
    double tau = 0.1;    // cross-domain similarity temperature

    void validate() const;
};

// Which cross-domain entropy terms to minimize.
enum class CpsDirection {
    src_to_tgt, // source features against target prototypes (default)
    tgt_to_src, // target features against each source's prototypes
    both,
};

// The slice of the current batch belonging to one domain. `rows` index the
// batch feature matrix; `bank_indices` index the domain's memory bank and
// cluster assignments.
struct BatchSlice {
    int domain_id = 0;
    std::vector<std::size_t> rows;
    std::vector<std::size_t> bank_indices;
};

// Margin softmax over prototype similarities: logit_c = (mu_c.f - m [c==assigned]) / phi.
std::vector<double> in_domain_similarity(std::span<const double> f, const ClusteringResult& protos,
                                         int assigned, const SslConfig& cfg);

// Softmax over (mu_c . f) / tau against another domain's prototypes.
std::vector<double> cross_domain_similarity(std::span<const double> f, const Matrix& prototypes,
                                            double tau);

// In-domain prototypical self-supervision: average over the R clusterings of
// the per-domain per-batch mean cross-entropy against the assigned cluster.
// Prototypes are constants; gradients accumulate into grad (scaled).
double ips_loss(const Matrix& features, std::span<const BatchSlice> slices,
                std::span<const ClusterSet> cluster_sets, const SslConfig& cfg, double scale,
                Matrix& grad);

// Cross-domain entropy minimization between each source and the target.
// Uses the clusterings whose cluster count equals n_classes (all of them when
// all_clusterings is set, otherwise the first). Source prototypes stay
// constant; gradients flow to the feature side of each selected direction.
double cps_loss(const Matrix& features, std::span<const BatchSlice> slices,
                std::span<const ClusterSet> cluster_sets, int n_sources, int n_classes,
                const SslConfig& cfg, CpsDirection direction, bool all_clusterings, double scale,
                Matrix& grad);

// L_MPS = L_IPS + L_CPS with independent toggles.
double mps_loss(const Matrix& features, std::span<const BatchSlice> slices,
                std::span<const ClusterSet> cluster_sets, int n_sources, int n_classes,
                const SslConfig& cfg, CpsDirection direction, bool all_clusterings, bool enable_ips,
                bool enable_cps, double scale, Matrix& grad, double* ips_out, double* cps_out);

} // namespace msfan
