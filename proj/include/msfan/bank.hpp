#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "msfan/matrix.hpp"

namespace msfan {

// Per-domain table of momentum-averaged feature vectors, one row per sample.
// Rows are not renormalized after mixing; prototypes are normalized instead.
struct MemoryBank {
    int domain_id = 0;
    Matrix vectors; // n_domain x d
    double eta = 0.5;
};

MemoryBank init_bank(int domain_id, const Matrix& features, double eta);

// v_j <- eta * v_j + (1 - eta) * f, taken literally (no renormalization).
void momentum_update(MemoryBank& bank, std::size_t j, std::span<const double> f);

struct ClusteringResult {
    std::size_t k = 0;
    std::vector<int> assignment;        // per bank row
    Matrix prototypes;                  // k x d, unit-norm rows
    double inertia = 0.0;               // sum of squared distances to unnormalized centroids
    std::vector<double> inertia_trace;  // one entry per Lloyd iteration
};

struct KmeansConfig {
    int max_iters = 100;
    int restarts = 10;
};

// Lloyd's algorithm with k-means++ seeding. Converges when assignments stop
// changing. Empty clusters are repaired by stealing the point farthest from
// its current centroid. Throws ConfigError when n < k or k == 0.
ClusteringResult kmeans(const Matrix& vectors, std::size_t k, std::uint64_t seed, int max_iters);

// Best of `restarts` independent runs by inertia.
ClusteringResult kmeans_best(const Matrix& vectors, std::size_t k, std::uint64_t seed,
                             const KmeansConfig& cfg);

// R clusterings with cluster counts k_list for one domain.
using ClusterSet = std::vector<ClusteringResult>;

// Reclusters every bank (M sources + target). Per-domain per-run seeds are
// derived deterministically from (seed, domain_id, r).
std::vector<ClusterSet> recluster_all(std::span<const MemoryBank> banks,
                                      std::span<const std::size_t> k_list, std::uint64_t seed,
                                      const KmeansConfig& cfg);

} // namespace msfan
