#include "msfan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>

#include "msfan/bank.hpp"
#include "msfan/classifier.hpp"
#include "msfan/numerics.hpp"
#include "msfan/rng.hpp"
#include "msfan/ssl_losses.hpp"
#include "msfan/support.hpp"

namespace msfan {

namespace {

constexpr std::size_t kInputDim = 6;
constexpr std::size_t kHiddenDim = 8;
constexpr std::size_t kFeatureDim = 8;
constexpr int kSources = 2;
constexpr int kClasses = 3;
constexpr std::size_t kBankRows = 8;
constexpr std::size_t kPerDomain = 2;
constexpr double kFdStep = 1e-5;

struct Instance {
    FeatureExtractor net{kInputDim, kHiddenDim, kFeatureDim};
    std::vector<CosineClassifier> classifiers;
    std::vector<MemoryBank> banks;
    std::vector<ClusterSet> cluster_sets;
    std::vector<SupportSet> supports;
    std::vector<PriorTracker> trackers;
    Matrix inputs; // (kSources+1)*kPerDomain rows
    std::vector<BatchSlice> slices;
    std::vector<std::size_t> all_rows;
    std::vector<int> labels;
    SslConfig ssl;
    SupportConfig support_cfg;
};

Instance make_instance(std::uint64_t seed) {
    Rng rng(seed);
    Instance inst;
    inst.net.init(rng);

    for (int i = 0; i < kSources; ++i) {
        CosineClassifier clf(kFeatureDim, kClasses, 0.05);
        clf.init(rng);
        inst.classifiers.push_back(std::move(clf));
    }

    for (int dom = 0; dom <= kSources; ++dom) {
        Matrix rows(kBankRows, kFeatureDim);
        for (std::size_t r = 0; r < kBankRows; ++r) {
            for (std::size_t j = 0; j < kFeatureDim; ++j) rows(r, j) = rng.normal();
            const double norm = norm2(rows.row(r));
            for (std::size_t j = 0; j < kFeatureDim; ++j) rows(r, j) /= norm;
        }
        inst.banks.push_back(init_bank(dom, rows, 0.5));
    }

    const std::size_t k_list[] = {kClasses, kClasses, 2 * kClasses};
    inst.cluster_sets = recluster_all(inst.banks, k_list, rng.next_u64(), KmeansConfig{50, 4});

    // Supports: one labeled sample per class plus pseudo entries from
    // synthetic confident-agreeing predictions.
    for (int dom = 0; dom < kSources; ++dom) {
        std::vector<std::pair<std::size_t, int>> labeled;
        for (int c = 0; c < kClasses; ++c) labeled.emplace_back(static_cast<std::size_t>(c), c);
        std::vector<std::size_t> unlabeled;
        for (std::size_t u = kClasses; u < kBankRows; ++u) unlabeled.push_back(u);
        std::vector<Matrix> predictions;
        std::vector<int> agreed(unlabeled.size());
        for (std::size_t u = 0; u < unlabeled.size(); ++u)
            agreed[u] = static_cast<int>(rng.below(kClasses));
        for (int i = 0; i < kSources; ++i) {
            Matrix p(unlabeled.size(), kClasses, 0.02);
            for (std::size_t u = 0; u < unlabeled.size(); ++u) {
                const bool confident = rng.uniform() < 0.6;
                if (confident) {
                    p(u, static_cast<std::size_t>(agreed[u])) = 0.96;
                } else {
                    for (int c = 0; c < kClasses; ++c) p(u, static_cast<std::size_t>(c)) = 1.0 / kClasses;
                }
            }
            predictions.push_back(std::move(p));
        }
        SupportConfig sc;
        inst.supports.push_back(build_support_set(dom, labeled, unlabeled, predictions, sc));
    }

    for (int i = 0; i < kSources; ++i) {
        PriorTracker tracker(kClasses, 0.9);
        double total = 0.0;
        for (double& p : tracker.probs) {
            p = 0.1 + rng.uniform();
            total += p;
        }
        for (double& p : tracker.probs) p /= total;
        inst.trackers.push_back(std::move(tracker));
    }

    const std::size_t n_rows = static_cast<std::size_t>(kSources + 1) * kPerDomain;
    inst.inputs = Matrix(n_rows, kInputDim);
    for (double& v : inst.inputs.data) v = rng.normal();

    std::size_t row = 0;
    for (int dom = 0; dom <= kSources; ++dom) {
        BatchSlice slice;
        slice.domain_id = dom;
        for (std::size_t q = 0; q < kPerDomain; ++q) {
            slice.rows.push_back(row);
            slice.bank_indices.push_back(rng.below(kBankRows));
            inst.all_rows.push_back(row);
            ++row;
        }
        inst.slices.push_back(std::move(slice));
    }

    inst.labels.resize(n_rows);
    for (int& y : inst.labels) y = static_cast<int>(rng.below(kClasses));
    return inst;
}

// Flat view over the trainable tensors a loss touches.
struct ParamView {
    std::vector<std::span<double>> tensors;
    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.size();
        return n;
    }
    double& at(std::size_t index) {
        for (const auto& t : tensors) {
            if (index < t.size()) return t[index];
            index -= t.size();
        }
        throw StateError("gradcheck: parameter index out of range");
    }
};

ParamView extractor_params(FeatureExtractor& net) {
    ParamView view;
    view.tensors = {net.w1.data, net.b1, net.w2.data, net.b2};
    return view;
}

ParamView extractor_grads(FeatureExtractor& net) {
    ParamView view;
    view.tensors = {net.gw1.data, net.gb1, net.gw2.data, net.gb2};
    return view;
}

double relative_error(double analytic, double fd) {
    const double scale = std::max({std::abs(analytic), std::abs(fd), 1e-6});
    return std::abs(analytic - fd) / scale;
}

// One loss under test: a pure value function and an analytic-gradient pass
// that populates extractor (and optionally classifier) gradients.
struct LossUnderTest {
    std::string name;
    bool uses_classifier_weights = false;
    std::function<double(Instance&)> value;
    std::function<double(Instance&)> analytic; // fills gradients, returns value
};

double check_loss(Instance& inst, const LossUnderTest& loss, bool inject_fault) {
    inst.net.zero_grad();
    for (CosineClassifier& clf : inst.classifiers) clf.zero_grad();
    loss.analytic(inst);

    std::vector<double> analytic;
    {
        ParamView grads = extractor_grads(inst.net);
        for (std::size_t i = 0; i < grads.size(); ++i) analytic.push_back(grads.at(i));
        if (loss.uses_classifier_weights)
            for (CosineClassifier& clf : inst.classifiers)
                for (double g : clf.grad.data) analytic.push_back(g);
    }
    if (inject_fault && !analytic.empty()) analytic[0] += 1e-2;

    ParamView params = extractor_params(inst.net);
    std::vector<std::span<double>> all = params.tensors;
    if (loss.uses_classifier_weights)
        for (CosineClassifier& clf : inst.classifiers) all.push_back(clf.weights.data);
    ParamView full;
    full.tensors = all;

    double max_err = 0.0;
    for (std::size_t i = 0; i < full.size(); ++i) {
        double& p = full.at(i);
        const double saved = p;
        p = saved + kFdStep;
        const double plus = loss.value(inst);
        p = saved - kFdStep;
        const double minus = loss.value(inst);
        p = saved;
        const double fd = (plus - minus) / (2.0 * kFdStep);
        max_err = std::max(max_err, relative_error(analytic[i], fd));
    }
    return max_err;
}

} // namespace

GradCheckReport run_gradient_checks(std::uint64_t seed, bool inject_fault) {
    std::vector<LossUnderTest> losses;

    losses.push_back({"cls", true,
                      [](Instance& inst) {
                          const Matrix f = extract_features(inst.net, inst.inputs);
                          Matrix scratch(f.rows, f.cols);
                          return cls_loss(inst.classifiers, f, inst.all_rows, inst.labels, kClasses,
                                          1.0, scratch, false);
                      },
                      [](Instance& inst) {
                          ForwardTape tape;
                          const Matrix f = extract_features(inst.net, inst.inputs, tape);
                          Matrix grad(f.rows, f.cols);
                          const double v = cls_loss(inst.classifiers, f, inst.all_rows, inst.labels,
                                                    kClasses, 1.0, grad, true);
                          backward(inst.net, tape, grad);
                          return v;
                      }});

    losses.push_back({"ips", false,
                      [](Instance& inst) {
                          const Matrix f = extract_features(inst.net, inst.inputs);
                          Matrix scratch(f.rows, f.cols);
                          return ips_loss(f, inst.slices, inst.cluster_sets, inst.ssl, 1.0, scratch);
                      },
                      [](Instance& inst) {
                          ForwardTape tape;
                          const Matrix f = extract_features(inst.net, inst.inputs, tape);
                          Matrix grad(f.rows, f.cols);
                          const double v =
                              ips_loss(f, inst.slices, inst.cluster_sets, inst.ssl, 1.0, grad);
                          backward(inst.net, tape, grad);
                          return v;
                      }});

    losses.push_back({"cps", false,
                      [](Instance& inst) {
                          const Matrix f = extract_features(inst.net, inst.inputs);
                          Matrix scratch(f.rows, f.cols);
                          return cps_loss(f, inst.slices, inst.cluster_sets, kSources, kClasses,
                                          inst.ssl, CpsDirection::both, false, 1.0, scratch);
                      },
                      [](Instance& inst) {
                          ForwardTape tape;
                          const Matrix f = extract_features(inst.net, inst.inputs, tape);
                          Matrix grad(f.rows, f.cols);
                          const double v = cps_loss(f, inst.slices, inst.cluster_sets, kSources,
                                                    kClasses, inst.ssl, CpsDirection::both, false,
                                                    1.0, grad);
                          backward(inst.net, tape, grad);
                          return v;
                      }});

    // SSC: the target side of each cross-entropy is detached, so the finite
    // difference must hold it at the unperturbed parameters.
    struct SscOracle {
        std::vector<std::vector<std::vector<double>>> frozen; // row -> domain -> s vector
    };
    auto ssc_frozen = std::make_shared<SscOracle>();
    auto freeze_targets = [ssc_frozen](Instance& inst) {
        const Matrix f = extract_features(inst.net, inst.inputs);
        ssc_frozen->frozen.assign(f.rows, {});
        for (std::size_t row : inst.all_rows) {
            std::vector<std::vector<double>> per_domain;
            for (int i = 0; i < kSources; ++i)
                per_domain.push_back(support_similarity(f.row(row), inst.supports[static_cast<std::size_t>(i)],
                                                        inst.banks[static_cast<std::size_t>(i)], kClasses,
                                                        inst.support_cfg));
            ssc_frozen->frozen[row] = std::move(per_domain);
        }
    };
    losses.push_back({"ssc", false,
                      [ssc_frozen](Instance& inst) {
                          const Matrix f = extract_features(inst.net, inst.inputs);
                          const double weight = 1.0 / static_cast<double>(inst.all_rows.size());
                          double loss = 0.0;
                          for (std::size_t row : inst.all_rows) {
                              std::vector<std::vector<double>> s;
                              for (int i = 0; i < kSources; ++i)
                                  s.push_back(support_similarity(
                                      f.row(row), inst.supports[static_cast<std::size_t>(i)],
                                      inst.banks[static_cast<std::size_t>(i)], kClasses, inst.support_cfg));
                              for (int i = 0; i < kSources; ++i)
                                  for (int j = 0; j < kSources; ++j) {
                                      if (i == j) continue;
                                      loss += weight *
                                              cross_entropy(s[static_cast<std::size_t>(i)],
                                                            ssc_frozen->frozen[row][static_cast<std::size_t>(j)]);
                                  }
                          }
                          return loss;
                      },
                      [freeze_targets](Instance& inst) {
                          freeze_targets(inst);
                          ForwardTape tape;
                          const Matrix f = extract_features(inst.net, inst.inputs, tape);
                          Matrix grad(f.rows, f.cols);
                          const double v = ssc_loss(f, inst.all_rows, inst.supports, inst.banks,
                                                    kClasses, inst.support_cfg, false, 1.0, grad);
                          backward(inst.net, tape, grad);
                          return v;
                      }});

    losses.push_back({"mi", true,
                      [](Instance& inst) {
                          const Matrix f = extract_features(inst.net, inst.inputs);
                          Matrix scratch(f.rows, f.cols);
                          return mi_loss(inst.classifiers, f, inst.all_rows, inst.trackers, 1.0,
                                         scratch, false)
                              .loss;
                      },
                      [](Instance& inst) {
                          ForwardTape tape;
                          const Matrix f = extract_features(inst.net, inst.inputs, tape);
                          Matrix grad(f.rows, f.cols);
                          const MiResult r = mi_loss(inst.classifiers, f, inst.all_rows,
                                                     inst.trackers, 1.0, grad, true);
                          backward(inst.net, tape, grad);
                          return r.loss;
                      }});

    GradCheckReport report;
    for (const LossUnderTest& loss : losses) {
        double max_err = 0.0;
        for (int instance = 0; instance < 3; ++instance) {
            Instance inst = make_instance(Rng::mix(seed, static_cast<std::uint64_t>(instance)));
            max_err = std::max(max_err, check_loss(inst, loss, inject_fault));
        }
        report.entries.push_back({loss.name, max_err});
    }
    return report;
}

} // namespace msfan
