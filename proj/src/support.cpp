#include "msfan/support.hpp"

#include <cmath>
#include <string>

#include "msfan/error.hpp"
#include "msfan/numerics.hpp"

namespace msfan {

void SupportConfig::validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("support: threshold must lie in (0,1)");
    if (!(psi > 0.0)) throw ConfigError("support: psi must be > 0");
}

SupportSet build_support_set(int domain_id,
                             std::span<const std::pair<std::size_t, int>> labeled,
                             std::span<const std::size_t> unlabeled,
                             std::span<const Matrix> predictions, const SupportConfig& cfg) {
    SupportSet set;
    set.domain_id = domain_id;
    for (const auto& [index, label] : labeled) set.entries.push_back({index, label, false});

    for (std::size_t u = 0; u < unlabeled.size(); ++u) {
        int agreed = -1;
        bool keep = true;
        for (const Matrix& p : predictions) {
            const auto row = p.row(u);
            std::size_t arg = 0;
            double top = row[0];
            for (std::size_t c = 1; c < row.size(); ++c)
                if (row[c] > top) {
                    top = row[c];
                    arg = c;
                }
            if (top <= cfg.threshold || (agreed >= 0 && static_cast<int>(arg) != agreed)) {
                keep = false;
                break;
            }
            agreed = static_cast<int>(arg);
        }
        if (keep && agreed >= 0) set.entries.push_back({unlabeled[u], agreed, true});
    }
    return set;
}

namespace {

// Precomputed per-support quantities reused across batch rows.
struct SupportView {
    Matrix unit_rows; // entries x d, normalized bank rows
    std::vector<int> labels;
};

SupportView make_view(const SupportSet& support, const MemoryBank& bank) {
    if (support.entries.empty()) throw StateError("support_similarity: empty support set");
    SupportView view;
    view.unit_rows = Matrix(support.entries.size(), bank.vectors.cols);
    view.labels.reserve(support.entries.size());
    for (std::size_t e = 0; e < support.entries.size(); ++e) {
        const SupportEntry& entry = support.entries[e];
        if (entry.sample_index >= bank.vectors.rows)
            throw StateError("support_similarity: support entry outside memory bank");
        const auto row = bank.vectors.row(entry.sample_index);
        const double r = norm2(row);
        if (!(r > 0.0)) throw NumericError("support_similarity: zero-norm bank row");
        for (std::size_t j = 0; j < row.size(); ++j) view.unit_rows(e, j) = row[j] / r;
        view.labels.push_back(entry.label);
    }
    return view;
}

// weights = softmax(cos / psi); s_c = sum of weights with label c.
void similarity_from_view(std::span<const double> f, const SupportView& view, double psi,
                          int n_classes, std::vector<double>& weights, std::vector<double>& s) {
    std::vector<double> logits(view.unit_rows.rows);
    for (std::size_t e = 0; e < view.unit_rows.rows; ++e)
        logits[e] = dot(view.unit_rows.row(e), f) / psi;
    weights = softmax(logits);
    s.assign(static_cast<std::size_t>(n_classes), 0.0);
    for (std::size_t e = 0; e < weights.size(); ++e) {
        const int label = view.labels[e];
        if (label < 0 || label >= n_classes)
            throw StateError("support_similarity: support label outside class range");
        s[static_cast<std::size_t>(label)] += weights[e];
    }
}

} // namespace

std::vector<double> support_similarity(std::span<const double> f, const SupportSet& support,
                                       const MemoryBank& bank, int n_classes,
                                       const SupportConfig& cfg) {
    const SupportView view = make_view(support, bank);
    std::vector<double> weights;
    std::vector<double> s;
    similarity_from_view(f, view, cfg.psi, n_classes, weights, s);
    return s;
}

double ssc_loss(const Matrix& features, std::span<const std::size_t> rows,
                std::span<const SupportSet> supports, std::span<const MemoryBank> banks,
                int n_classes, const SupportConfig& cfg, bool swap_roles, double scale,
                Matrix& grad) {
    const std::size_t m = supports.size();
    if (m < 2 || rows.empty()) return 0.0;
    if (banks.size() < m) throw StateError("ssc_loss: missing memory banks");

    std::vector<SupportView> views;
    views.reserve(m);
    for (std::size_t i = 0; i < m; ++i) views.push_back(make_view(supports[i], banks[i]));

    const double weight = 1.0 / static_cast<double>(rows.size());
    double loss = 0.0;

    std::vector<std::vector<double>> w(m), s(m);
    for (std::size_t row : rows) {
        const auto f = features.row(row);
        for (std::size_t i = 0; i < m; ++i)
            similarity_from_view(f, views[i], cfg.psi, n_classes, w[i], s[i]);

        // q[d] accumulates dCE/ds for every term where domain d is the
        // prediction side; the target side is detached.
        std::vector<std::vector<double>> q(m, std::vector<double>(static_cast<std::size_t>(n_classes), 0.0));
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                if (i == j) continue;
                const std::size_t pred = swap_roles ? j : i;
                const std::size_t targ = swap_roles ? i : j;
                loss += weight * cross_entropy(s[pred], s[targ]);
                for (int c = 0; c < n_classes; ++c) {
                    const std::size_t cc = static_cast<std::size_t>(c);
                    if (s[targ][cc] == 0.0) continue;
                    q[pred][cc] -= s[targ][cc] / s[pred][cc];
                }
            }

        // Backpropagate q[d] through s_d = sum_k w_k onehot(label_k):
        // df += (1/psi) [ sum_k w_k q_{y_k} vhat_k - (sum_k w_k q_{y_k}) vbar ].
        auto g = grad.row(row);
        for (std::size_t i = 0; i < m; ++i) {
            double b = 0.0;
            for (int c = 0; c < n_classes; ++c)
                b += q[i][static_cast<std::size_t>(c)] * s[i][static_cast<std::size_t>(c)];
            std::vector<double> vbar(features.cols, 0.0);
            for (std::size_t e = 0; e < views[i].unit_rows.rows; ++e)
                axpy(w[i][e], views[i].unit_rows.row(e), vbar);
            for (std::size_t e = 0; e < views[i].unit_rows.rows; ++e) {
                const double coef = scale * weight * w[i][e] *
                                    q[i][static_cast<std::size_t>(views[i].labels[e])] / cfg.psi;
                axpy(coef, views[i].unit_rows.row(e), g);
            }
            axpy(-scale * weight * b / cfg.psi, vbar, g);
        }
    }
    return loss;
}

} // namespace msfan
