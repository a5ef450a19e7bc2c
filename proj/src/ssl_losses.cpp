#include "msfan/ssl_losses.hpp"

#include <cmath>
#include <string>

#include "msfan/error.hpp"
#include "msfan/numerics.hpp"

namespace msfan {

void SslConfig::validate() const {
    if (!(phi > 0.0)) throw ConfigError("ssl: phi must be > 0");
    if (!(tau > 0.0)) throw ConfigError("ssl: tau must be > 0");
    if (margin < 0.0) throw ConfigError("ssl: margin must be >= 0");
}

std::vector<double> in_domain_similarity(std::span<const double> f, const ClusteringResult& protos,
                                         int assigned, const SslConfig& cfg) {
    if (assigned < 0 || static_cast<std::size_t>(assigned) >= protos.k)
        throw StateError("in_domain_similarity: assigned cluster out of range");
    std::vector<double> logits(protos.k);
    for (std::size_t c = 0; c < protos.k; ++c) {
        const double margin = (static_cast<int>(c) == assigned) ? cfg.margin : 0.0;
        logits[c] = (dot(protos.prototypes.row(c), f) - margin) / cfg.phi;
    }
    return softmax(logits);
}

std::vector<double> cross_domain_similarity(std::span<const double> f, const Matrix& prototypes,
                                            double tau) {
    if (prototypes.rows == 0) throw StateError("cross_domain_similarity: no prototypes");
    std::vector<double> logits(prototypes.rows);
    for (std::size_t c = 0; c < prototypes.rows; ++c) logits[c] = dot(prototypes.row(c), f) / tau;
    return softmax(logits);
}

double ips_loss(const Matrix& features, std::span<const BatchSlice> slices,
                std::span<const ClusterSet> cluster_sets, const SslConfig& cfg, double scale,
                Matrix& grad) {
    if (slices.empty()) return 0.0;
    const std::size_t n_runs = cluster_sets.empty() ? 0 : cluster_sets[0].size();
    if (n_runs == 0) throw StateError("ips_loss: no clusterings available");

    double loss = 0.0;
    for (const BatchSlice& slice : slices) {
        if (slice.rows.empty()) continue;
        if (static_cast<std::size_t>(slice.domain_id) >= cluster_sets.size())
            throw StateError("ips_loss: no cluster set for domain " + std::to_string(slice.domain_id));
        const ClusterSet& set = cluster_sets[static_cast<std::size_t>(slice.domain_id)];
        if (set.size() != n_runs) throw StateError("ips_loss: inconsistent clustering count");

        const double weight = 1.0 / (static_cast<double>(n_runs) * static_cast<double>(slice.rows.size()));
        for (std::size_t r = 0; r < n_runs; ++r) {
            const ClusteringResult& clustering = set[r];
            for (std::size_t s = 0; s < slice.rows.size(); ++s) {
                const std::size_t bank_index = slice.bank_indices[s];
                if (bank_index >= clustering.assignment.size())
                    throw StateError("ips_loss: stale clustering for domain " +
                                     std::to_string(slice.domain_id));
                const int assigned = clustering.assignment[bank_index];
                const auto f = features.row(slice.rows[s]);
                const std::vector<double> probs = in_domain_similarity(f, clustering, assigned, cfg);

                loss -= weight * std::log(probs[static_cast<std::size_t>(assigned)]);

                // d CE / d logit_c = P_c - [c == assigned]; d logit_c / d f = mu_c / phi.
                auto g = grad.row(slice.rows[s]);
                for (std::size_t c = 0; c < clustering.k; ++c) {
                    const double coef =
                        scale * weight *
                        (probs[c] - (static_cast<int>(c) == assigned ? 1.0 : 0.0)) / cfg.phi;
                    axpy(coef, clustering.prototypes.row(c), g);
                }
            }
        }
    }
    return loss;
}

namespace {

// Entropy of softmax(sims / tau) plus its gradient w.r.t. the feature,
// accumulated as scale * dH/df into grad_row.
double entropy_term(std::span<const double> f, const Matrix& prototypes, double tau, double scale,
                    std::span<double> grad_row) {
    const std::vector<double> probs = cross_domain_similarity(f, prototypes, tau);
    const double h = entropy(probs);
    // dH/d logit_c = -P_c (log P_c + H)
    for (std::size_t c = 0; c < probs.size(); ++c) {
        if (probs[c] <= 0.0) continue;
        const double coef = scale * (-probs[c] * (std::log(probs[c]) + h)) / tau;
        axpy(coef, prototypes.row(c), grad_row);
    }
    return h;
}

// Indices of the clusterings used for cross-domain terms.
std::vector<std::size_t> canonical_runs(const ClusterSet& set, int n_classes, bool all_clusterings) {
    std::vector<std::size_t> runs;
    if (all_clusterings) {
        for (std::size_t r = 0; r < set.size(); ++r) runs.push_back(r);
        return runs;
    }
    for (std::size_t r = 0; r < set.size(); ++r)
        if (set[r].k == static_cast<std::size_t>(n_classes)) {
            runs.push_back(r);
            return runs;
        }
    runs.push_back(0);
    return runs;
}

} // namespace

double cps_loss(const Matrix& features, std::span<const BatchSlice> slices,
                std::span<const ClusterSet> cluster_sets, int n_sources, int n_classes,
                const SslConfig& cfg, CpsDirection direction, bool all_clusterings, double scale,
                Matrix& grad) {
    if (n_sources == 0) return 0.0;
    if (cluster_sets.size() != static_cast<std::size_t>(n_sources) + 1)
        throw StateError("cps_loss: expected one cluster set per domain");

    double loss = 0.0;
    const bool src_to_tgt = direction != CpsDirection::tgt_to_src;
    const bool tgt_to_src = direction != CpsDirection::src_to_tgt;

    if (src_to_tgt) {
        const ClusterSet& target_set = cluster_sets[static_cast<std::size_t>(n_sources)];
        const std::vector<std::size_t> runs = canonical_runs(target_set, n_classes, all_clusterings);
        for (const BatchSlice& slice : slices) {
            if (slice.domain_id == n_sources || slice.rows.empty()) continue;
            const double weight = 1.0 / (static_cast<double>(runs.size()) *
                                         static_cast<double>(slice.rows.size()));
            for (std::size_t run : runs)
                for (std::size_t row : slice.rows)
                    loss += weight * entropy_term(features.row(row), target_set[run].prototypes,
                                                  cfg.tau, scale * weight, grad.row(row));
        }
    }

    if (tgt_to_src) {
        for (const BatchSlice& slice : slices) {
            if (slice.domain_id != n_sources || slice.rows.empty()) continue;
            for (int src = 0; src < n_sources; ++src) {
                const ClusterSet& source_set = cluster_sets[static_cast<std::size_t>(src)];
                const std::vector<std::size_t> runs =
                    canonical_runs(source_set, n_classes, all_clusterings);
                const double weight = 1.0 / (static_cast<double>(runs.size()) *
                                             static_cast<double>(slice.rows.size()));
                for (std::size_t run : runs)
                    for (std::size_t row : slice.rows)
                        loss += weight * entropy_term(features.row(row), source_set[run].prototypes,
                                                      cfg.tau, scale * weight, grad.row(row));
            }
        }
    }
    return loss;
}

double mps_loss(const Matrix& features, std::span<const BatchSlice> slices,
                std::span<const ClusterSet> cluster_sets, int n_sources, int n_classes,
                const SslConfig& cfg, CpsDirection direction, bool all_clusterings, bool enable_ips,
                bool enable_cps, double scale, Matrix& grad, double* ips_out, double* cps_out) {
    double ips = 0.0;
    double cps = 0.0;
    if (enable_ips) ips = ips_loss(features, slices, cluster_sets, cfg, scale, grad);
    if (enable_cps)
        cps = cps_loss(features, slices, cluster_sets, n_sources, n_classes, cfg, direction,
                       all_clusterings, scale, grad);
    if (ips_out) *ips_out = ips;
    if (cps_out) *cps_out = cps;
    return ips + cps;
}

} // namespace msfan
