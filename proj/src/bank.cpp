#include "msfan/bank.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "msfan/error.hpp"
#include "msfan/rng.hpp"

namespace msfan {

MemoryBank init_bank(int domain_id, const Matrix& features, double eta) {
    for (std::size_t i = 0; i < features.rows; ++i) {
        const double r = norm2(features.row(i));
        if (std::abs(r - 1.0) > 1e-6)
            throw StateError("init_bank: row " + std::to_string(i) + " is not unit-norm");
    }
    MemoryBank bank;
    bank.domain_id = domain_id;
    bank.vectors = features;
    bank.eta = eta;
    return bank;
}

void momentum_update(MemoryBank& bank, std::size_t j, std::span<const double> f) {
    if (j >= bank.vectors.rows)
        throw StateError("momentum_update: index " + std::to_string(j) + " out of range");
    if (f.size() != bank.vectors.cols) throw DimensionError("momentum_update: width mismatch");
    auto row = bank.vectors.row(j);
    for (std::size_t c = 0; c < row.size(); ++c)
        row[c] = bank.eta * row[c] + (1.0 - bank.eta) * f[c];
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

// k-means++: first centroid uniform, then proportional to squared distance
// from the nearest chosen centroid.
Matrix seed_centroids(const Matrix& vectors, std::size_t k, Rng& rng) {
    const std::size_t n = vectors.rows;
    Matrix centroids(k, vectors.cols);
    std::vector<double> dist2(n, std::numeric_limits<double>::infinity());

    std::size_t first = static_cast<std::size_t>(rng.below(n));
    for (std::size_t j = 0; j < vectors.cols; ++j) centroids(0, j) = vectors(first, j);

    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = squared_distance(vectors.row(i), centroids.row(c - 1));
            if (d < dist2[i]) dist2[i] = d;
            total += dist2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double running = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                running += dist2[i];
                if (running >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<std::size_t>(rng.below(n)); // all points coincide with centroids
        }
        for (std::size_t j = 0; j < vectors.cols; ++j) centroids(c, j) = vectors(pick, j);
    }
    return centroids;
}

// Nearest centroid with sticky ties: the current assignment wins unless a
// strictly closer centroid exists. Keeps repaired singleton clusters from
// flapping empty again on duplicate points.
int nearest_centroid(std::span<const double> point, const Matrix& centroids, int current = -1) {
    int best = current;
    double best_d = current >= 0
                        ? squared_distance(point, centroids.row(static_cast<std::size_t>(current)))
                        : std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows; ++c) {
        const double d = squared_distance(point, centroids.row(c));
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

double total_inertia(const Matrix& vectors, const Matrix& centroids, const std::vector<int>& assignment) {
    double acc = 0.0;
    for (std::size_t i = 0; i < vectors.rows; ++i)
        acc += squared_distance(vectors.row(i), centroids.row(static_cast<std::size_t>(assignment[i])));
    return acc;
}

} // namespace

ClusteringResult kmeans(const Matrix& vectors, std::size_t k, std::uint64_t seed, int max_iters) {
    const std::size_t n = vectors.rows;
    if (k == 0) throw ConfigError("kmeans: k must be positive");
    if (n < k)
        throw ConfigError("kmeans: " + std::to_string(n) + " points cannot form " +
                          std::to_string(k) + " clusters");

    Rng rng(seed);
    Matrix centroids = seed_centroids(vectors, k, rng);

    std::vector<int> assignment(n, -1);
    for (std::size_t i = 0; i < n; ++i) assignment[i] = nearest_centroid(vectors.row(i), centroids);

    ClusteringResult result;
    result.k = k;
    std::vector<std::size_t> counts(k, 0);

    for (int iter = 0; iter < max_iters; ++iter) {
        // Update step: recompute centroids from current assignments.
        centroids.fill(0.0);
        counts.assign(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto row = vectors.row(i);
            const std::size_t c = static_cast<std::size_t>(assignment[i]);
            counts[c]++;
            axpy(1.0, row, centroids.row(c));
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            const double inv = 1.0 / static_cast<double>(counts[c]);
            for (std::size_t j = 0; j < centroids.cols; ++j) centroids(c, j) *= inv;
        }

        // Repair empty clusters with the globally farthest point.
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            std::size_t worst = 0;
            double worst_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t cur = static_cast<std::size_t>(assignment[i]);
                if (counts[cur] <= 1) continue; // do not empty another cluster
                const double d = squared_distance(vectors.row(i), centroids.row(cur));
                if (d > worst_d) {
                    worst_d = d;
                    worst = i;
                }
            }
            if (worst_d < 0.0) throw StateError("kmeans: unable to repair empty cluster");
            const std::size_t old = static_cast<std::size_t>(assignment[worst]);
            // Recompute the donor centroid without the stolen point.
            for (std::size_t j = 0; j < centroids.cols; ++j) {
                const double sum = centroids(old, j) * static_cast<double>(counts[old]);
                centroids(old, j) = (sum - vectors(worst, j)) / static_cast<double>(counts[old] - 1);
            }
            counts[old]--;
            counts[c] = 1;
            assignment[worst] = static_cast<int>(c);
            for (std::size_t j = 0; j < centroids.cols; ++j) centroids(c, j) = vectors(worst, j);
        }

        // Assignment step.
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const int next = nearest_centroid(vectors.row(i), centroids, assignment[i]);
            if (next != assignment[i]) {
                assignment[i] = next;
                changed = true;
            }
        }
        result.inertia_trace.push_back(total_inertia(vectors, centroids, assignment));
        if (!changed) break;
    }

    // Final centroids for the converged assignment.
    centroids.fill(0.0);
    counts.assign(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
        counts[static_cast<std::size_t>(assignment[i])]++;
        axpy(1.0, vectors.row(i), centroids.row(static_cast<std::size_t>(assignment[i])));
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0) throw StateError("kmeans: empty cluster after repair");
        const double inv = 1.0 / static_cast<double>(counts[c]);
        for (std::size_t j = 0; j < centroids.cols; ++j) centroids(c, j) *= inv;
    }

    result.assignment = std::move(assignment);
    result.inertia = total_inertia(vectors, centroids, result.assignment);
    result.prototypes = Matrix(k, vectors.cols);
    for (std::size_t c = 0; c < k; ++c) {
        const double r = norm2(centroids.row(c));
        if (!(r > 1e-12)) throw NumericError("kmeans: zero-norm centroid, cannot form prototype");
        for (std::size_t j = 0; j < vectors.cols; ++j) result.prototypes(c, j) = centroids(c, j) / r;
    }
    return result;
}

ClusteringResult kmeans_best(const Matrix& vectors, std::size_t k, std::uint64_t seed,
                             const KmeansConfig& cfg) {
    ClusteringResult best;
    bool have = false;
    for (int r = 0; r < cfg.restarts; ++r) {
        ClusteringResult candidate =
            kmeans(vectors, k, Rng::mix(seed, static_cast<std::uint64_t>(r)), cfg.max_iters);
        if (!have || candidate.inertia < best.inertia) {
            best = std::move(candidate);
            have = true;
        }
    }
    return best;
}

std::vector<ClusterSet> recluster_all(std::span<const MemoryBank> banks,
                                      std::span<const std::size_t> k_list, std::uint64_t seed,
                                      const KmeansConfig& cfg) {
    std::vector<ClusterSet> sets;
    sets.reserve(banks.size());
    for (const MemoryBank& bank : banks) {
        ClusterSet set;
        set.reserve(k_list.size());
        for (std::size_t r = 0; r < k_list.size(); ++r) {
            const std::uint64_t run_seed =
                Rng::mix(Rng::mix(seed, static_cast<std::uint64_t>(bank.domain_id)), r);
            set.push_back(kmeans_best(bank.vectors, k_list[r], run_seed, cfg));
        }
        sets.push_back(std::move(set));
    }
    return sets;
}

} // namespace msfan
