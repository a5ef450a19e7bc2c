#include "msfan/trainer.hpp"

#include <algorithm>
#include <memory>
#include <numeric>
#include <string>

#include "msfan/error.hpp"
#include "msfan/rng.hpp"
#include "msfan/ssl_losses.hpp"

namespace msfan {

namespace {

constexpr std::uint64_t kStreamInit = 0x696e6974ULL;
constexpr std::uint64_t kStreamBatch = 0x626174ULL;
constexpr std::uint64_t kStreamLabeled = 0x6c6162ULL;
constexpr std::uint64_t kStreamCluster = 0x636c7573ULL;

// Per-domain view of the dataset: global sample indices in order of
// appearance (the memory-bank row order) plus the labeled/unlabeled split.
struct DomainData {
    std::vector<std::size_t> globals;
    std::vector<std::pair<std::size_t, int>> labeled; // (local index, label)
    std::vector<std::size_t> unlabeled;               // local indices
};

std::vector<DomainData> split_domains(const MultiDomainDataset& ds) {
    std::vector<DomainData> domains(static_cast<std::size_t>(ds.n_sources) + 1);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const DomainSample& s = ds.samples[i];
        DomainData& dom = domains[static_cast<std::size_t>(s.domain_id)];
        const std::size_t local = dom.globals.size();
        dom.globals.push_back(i);
        if (s.is_labeled)
            dom.labeled.emplace_back(local, s.label);
        else
            dom.unlabeled.push_back(local);
    }
    return domains;
}

// Epoch-style round-robin over one domain's local indices.
struct Stream {
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    Rng rng;

    Stream(std::size_t n, Rng r) : order(n), rng(r) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
    }

    std::size_t next() {
        if (cursor == order.size()) {
            rng.shuffle(order);
            cursor = 0;
        }
        return order[cursor++];
    }
};

Matrix gather_rows(const MultiDomainDataset& ds, std::span<const std::size_t> globals) {
    Matrix out(globals.size(), static_cast<std::size_t>(ds.input_dim));
    for (std::size_t r = 0; r < globals.size(); ++r) {
        const auto& raw = ds.samples[globals[r]].raw;
        std::copy(raw.begin(), raw.end(), out.row(r).begin());
    }
    return out;
}

struct LossBreakdown {
    double cls = 0.0, ips = 0.0, cps = 0.0, ssc = 0.0, mi = 0.0;
    bool ssc_active = false;
    double total(const TrainConfig& cfg) const {
        return cls + cfg.lambda_mps * (ips + cps) + cfg.lambda_ssc * ssc + cfg.lambda_mi * mi;
    }
};

} // namespace

ModelState TrainState::to_model(const RunConfig& cfg) const {
    ModelState model;
    model.extractor = extractor;
    model.classifiers = classifiers;
    model.config = cfg;
    return model;
}

class Trainer {
public:
    Trainer(const MultiDomainDataset& ds, const RunConfig& cfg)
        : ds_(ds), cfg_(cfg), tc_(cfg.train){
        tc_.validate();
        ds_.validate_for_training();

        const int domains = ds_.n_sources + 1;
        per_domain_quota_ = tc_.batch_size / domains;
        if (per_domain_quota_ < 1)
            throw ConfigError("train: batch_size " + std::to_string(tc_.batch_size) +
                              " cannot cover " + std::to_string(domains) + " domains");

        domain_data_ = split_domains(ds_);
        k_list_ = tc_.resolved_cluster_counts(ds_.n_classes);
        need_clusters_ = tc_.enable_ips || tc_.enable_cps;
        need_supports_ = tc_.enable_ssc || tc_.enable_weight_refresh;
        if (need_clusters_) {
            const std::size_t max_k = *std::max_element(k_list_.begin(), k_list_.end());
            for (int dom = 0; dom < domains; ++dom)
                if (domain_data_[static_cast<std::size_t>(dom)].globals.size() < max_k)
                    throw ConfigError("train: domain " + std::to_string(dom) + " has fewer samples than " +
                                      std::to_string(max_k) + " clusters");
        }

        for (std::size_t dom = 0; dom < domain_data_.size(); ++dom)
            for (const auto& [local, label] : domain_data_[dom].labeled)
                pooled_labeled_.push_back({static_cast<int>(dom), local, label});
    }

    TrainResult run() {
        init_state();
        if (need_clusters_) recluster(0);

        if (tc_.steps == 0) {
            emit_metrics(LossBreakdown{});
            return {std::move(state_), std::move(metrics_)};
        }

        for (int t = 0; t < tc_.steps; ++t) {
            if (t > 0 && t % tc_.cluster_interval == 0) run_event(t / tc_.cluster_interval);
            // step() emits the step-0 record itself, before the first update.
            const LossBreakdown losses = step(t);
            state_.step = t + 1;
            if ((t + 1) % tc_.metrics_interval == 0 || t + 1 == tc_.steps) emit_metrics(losses);
        }
        return {std::move(state_), std::move(metrics_)};
    }

private:
    void init_state() {
        state_.n_sources = ds_.n_sources;
        state_.n_classes = ds_.n_classes;

        Rng init_rng = Rng(tc_.seed).derive(kStreamInit);
        state_.extractor = FeatureExtractor(static_cast<std::size_t>(ds_.input_dim),
                                            static_cast<std::size_t>(tc_.hidden_dim),
                                            static_cast<std::size_t>(tc_.feature_dim));
        state_.extractor.init(init_rng);
        for (int i = 0; i < ds_.n_sources; ++i) {
            CosineClassifier clf(static_cast<std::size_t>(tc_.feature_dim),
                                 static_cast<std::size_t>(ds_.n_classes), tc_.classifier_temperature);
            clf.init(init_rng);
            state_.classifiers.push_back(std::move(clf));
            state_.trackers.emplace_back(static_cast<std::size_t>(ds_.n_classes), tc_.mi.beta);
        }

        const int domains = ds_.n_sources + 1;
        for (int dom = 0; dom < domains; ++dom) {
            const DomainData& data = domain_data_[static_cast<std::size_t>(dom)];
            const Matrix features = extract_features(state_.extractor, gather_rows(ds_, data.globals));
            state_.banks.push_back(init_bank(dom, features, tc_.bank_eta));
            streams_.emplace_back(data.globals.size(),
                                  Rng(tc_.seed).derive(Rng::mix(kStreamBatch, static_cast<std::uint64_t>(dom))));
            bank_stamp_.emplace_back(data.globals.size(), -1);
        }
        labeled_rng_ = std::make_unique<Rng>(Rng(tc_.seed).derive(kStreamLabeled));
        state_.supports.resize(static_cast<std::size_t>(ds_.n_sources));
    }

    void recluster(int event_index) {
        const KmeansConfig km{tc_.kmeans_max_iters, tc_.kmeans_restarts};
        const std::uint64_t event_seed =
            Rng::mix(Rng::mix(tc_.seed, kStreamCluster), static_cast<std::uint64_t>(event_index));
        state_.cluster_sets = recluster_all(state_.banks, k_list_, event_seed, km);
    }

    void rebuild_supports() {
        for (int dom = 0; dom < ds_.n_sources; ++dom) {
            const DomainData& data = domain_data_[static_cast<std::size_t>(dom)];
            std::vector<Matrix> predictions;
            if (!data.unlabeled.empty()) {
                std::vector<std::size_t> globals;
                globals.reserve(data.unlabeled.size());
                for (std::size_t local : data.unlabeled) globals.push_back(data.globals[local]);
                const Matrix features = extract_features(state_.extractor, gather_rows(ds_, globals));
                for (const CosineClassifier& clf : state_.classifiers) {
                    Matrix p(features.rows, static_cast<std::size_t>(ds_.n_classes));
                    for (std::size_t r = 0; r < features.rows; ++r) {
                        const std::vector<double> probs = classify(clf, features.row(r));
                        std::copy(probs.begin(), probs.end(), p.row(r).begin());
                    }
                    predictions.push_back(std::move(p));
                }
            }
            state_.supports[static_cast<std::size_t>(dom)] =
                build_support_set(dom, data.labeled, data.unlabeled, predictions, tc_.support);
        }
        state_.supports_ready = true;
    }

    void run_event(int event_index) {
        if (need_clusters_) recluster(event_index);
        if (need_supports_) {
            rebuild_supports();
            if (tc_.enable_weight_refresh) {
                last_degenerate_ = 0;
                for (int i = 0; i < ds_.n_sources; ++i)
                    last_degenerate_ += prototype_weight_update(
                        state_.classifiers[static_cast<std::size_t>(i)],
                        state_.supports[static_cast<std::size_t>(i)],
                        state_.banks[static_cast<std::size_t>(i)]);
            }
        }
    }

    LossBreakdown step(int t) {
        const int domains = ds_.n_sources + 1;

        // Main batch: a per-domain quota from each domain's stream.
        std::vector<BatchSlice> slices(static_cast<std::size_t>(domains));
        std::vector<std::size_t> forward_globals;
        for (int dom = 0; dom < domains; ++dom) {
            BatchSlice& slice = slices[static_cast<std::size_t>(dom)];
            slice.domain_id = dom;
            const DomainData& data = domain_data_[static_cast<std::size_t>(dom)];
            for (int q = 0; q < per_domain_quota_; ++q) {
                const std::size_t local = streams_[static_cast<std::size_t>(dom)].next();
                slice.rows.push_back(forward_globals.size());
                slice.bank_indices.push_back(local);
                forward_globals.push_back(data.globals[local]);
            }
        }

        // Labeled draw for the supervised loss: all pooled labels when they
        // fit in one batch, otherwise a seeded subsample.
        std::vector<std::size_t> labeled_rows;
        std::vector<int> labeled_labels;
        std::vector<std::pair<int, std::size_t>> labeled_ids; // (domain, local)
        {
            std::vector<std::size_t> picks(pooled_labeled_.size());
            std::iota(picks.begin(), picks.end(), std::size_t{0});
            if (pooled_labeled_.size() > static_cast<std::size_t>(tc_.batch_size)) {
                labeled_rng_->shuffle(picks);
                picks.resize(static_cast<std::size_t>(tc_.batch_size));
                std::sort(picks.begin(), picks.end());
            }
            for (std::size_t p : picks) {
                const PooledLabel& entry = pooled_labeled_[p];
                labeled_rows.push_back(forward_globals.size());
                labeled_labels.push_back(entry.label);
                labeled_ids.emplace_back(entry.domain, entry.local);
                forward_globals.push_back(
                    domain_data_[static_cast<std::size_t>(entry.domain)].globals[entry.local]);
            }
        }

        ForwardTape tape;
        const Matrix features = extract_features(state_.extractor, gather_rows(ds_, forward_globals), tape);
        Matrix grad_features(features.rows, features.cols);

        LossBreakdown losses;
        losses.cls = cls_loss(state_.classifiers, features, labeled_rows, labeled_labels,
                              ds_.n_classes, 1.0, grad_features, !tc_.block_cls_grad_to_weights);

        if (tc_.enable_ips || tc_.enable_cps)
            mps_loss(features, slices, state_.cluster_sets, ds_.n_sources, ds_.n_classes, tc_.ssl,
                     tc_.cps_direction, tc_.cps_all_clusterings, tc_.enable_ips, tc_.enable_cps,
                     tc_.lambda_mps, grad_features, &losses.ips, &losses.cps);

        std::vector<std::size_t> main_rows;
        for (const BatchSlice& slice : slices)
            main_rows.insert(main_rows.end(), slice.rows.begin(), slice.rows.end());

        if (tc_.enable_ssc && state_.supports_ready && ds_.n_sources >= 2) {
            bool all_nonempty = true;
            for (const SupportSet& s : state_.supports) all_nonempty &= !s.entries.empty();
            if (all_nonempty) {
                losses.ssc = ssc_loss(features, main_rows, state_.supports, state_.banks,
                                      ds_.n_classes, tc_.support, tc_.ssc_swap_roles, tc_.lambda_ssc,
                                      grad_features);
                losses.ssc_active = true;
            }
        }

        MiResult mi;
        std::vector<std::size_t> mi_rows;
        if (tc_.enable_mi) {
            for (const BatchSlice& slice : slices) {
                const DomainData& data = domain_data_[static_cast<std::size_t>(slice.domain_id)];
                for (std::size_t s = 0; s < slice.rows.size(); ++s) {
                    const std::size_t global = data.globals[slice.bank_indices[s]];
                    if (!ds_.samples[global].is_labeled) mi_rows.push_back(slice.rows[s]);
                }
            }
            mi = mi_loss(state_.classifiers, features, mi_rows, state_.trackers, tc_.lambda_mi,
                         grad_features, true);
            losses.mi = mi.loss;
        }

        if (t == 0) emit_metrics(losses); // before the first update

        backward(state_.extractor, tape, grad_features);
        sgd_step(state_.extractor, tc_.sgd);
        sgd_step(state_.classifiers, tc_.sgd);

        // Memory-bank momentum update for every sample forwarded this step.
        for (int dom = 0; dom < domains; ++dom) {
            const BatchSlice& slice = slices[static_cast<std::size_t>(dom)];
            for (std::size_t s = 0; s < slice.rows.size(); ++s)
                touch_bank(dom, slice.bank_indices[s], features.row(slice.rows[s]), t);
        }
        for (std::size_t s = 0; s < labeled_ids.size(); ++s)
            touch_bank(labeled_ids[s].first, labeled_ids[s].second, features.row(labeled_rows[s]), t);

        // Prior trackers move toward this step's batch marginal (from the
        // pre-update forward pass).
        if (tc_.enable_mi && !mi_rows.empty()) {
            for (std::size_t i = 0; i < state_.classifiers.size(); ++i)
                state_.trackers[i].update(mi.batch_mean[i]);
        }
        return losses;
    }

    void touch_bank(int dom, std::size_t local, std::span<const double> feature, int t) {
        std::vector<int>& stamps = bank_stamp_[static_cast<std::size_t>(dom)];
        if (stamps[local] == t) return;
        stamps[local] = t;
        momentum_update(state_.banks[static_cast<std::size_t>(dom)], local, feature);
    }

    void emit_metrics(const LossBreakdown& losses) {
        MetricsRecord record;
        record.step = state_.step;
        record.loss_cls = losses.cls;
        record.loss_ips = losses.ips;
        record.loss_cps = losses.cps;
        record.loss_ssc = losses.ssc;
        record.loss_mi = losses.mi;
        record.loss_total = losses.total(tc_);
        record.ssc_active = losses.ssc_active;
        record.degenerate_weight_classes = last_degenerate_;

        if (!ds_.eval_labels.empty()) {
            const auto [max_sim, ensemble] = evaluate(state_, ds_);
            record.acc_max_sim = max_sim;
            record.acc_ensemble = ensemble;
        } else {
            record.acc_max_sim = -1.0;
            record.acc_ensemble = -1.0;
        }

        if (state_.supports_ready) {
            for (int dom = 0; dom < ds_.n_sources; ++dom) {
                const SupportSet& support = state_.supports[static_cast<std::size_t>(dom)];
                record.support_sizes.push_back(support.entries.size());
                const DomainData& data = domain_data_[static_cast<std::size_t>(dom)];
                std::size_t pseudo = 0, correct = 0;
                if (!ds_.eval_labels.empty()) {
                    for (const SupportEntry& entry : support.entries) {
                        if (!entry.pseudo) continue;
                        ++pseudo;
                        if (ds_.eval_labels[data.globals[entry.sample_index]] == entry.label) ++correct;
                    }
                }
                record.pseudo_label_precision.push_back(
                    pseudo == 0 ? -1.0 : static_cast<double>(correct) / static_cast<double>(pseudo));
            }
        }
        metrics_.push_back(std::move(record));
    }

    struct PooledLabel {
        int domain = 0;
        std::size_t local = 0;
        int label = 0;
    };

    const MultiDomainDataset& ds_;
    RunConfig cfg_;
    TrainConfig tc_;
    int per_domain_quota_ = 0;
    std::vector<DomainData> domain_data_;
    std::vector<std::size_t> k_list_;
    bool need_clusters_ = false;
    bool need_supports_ = false;
    std::vector<PooledLabel> pooled_labeled_;

    TrainState state_;
    std::vector<Stream> streams_;
    std::unique_ptr<Rng> labeled_rng_;
    std::vector<std::vector<int>> bank_stamp_;
    std::vector<MetricsRecord> metrics_;
    int last_degenerate_ = 0;
};

TrainResult train(const MultiDomainDataset& ds, const RunConfig& cfg) {
    Trainer trainer(ds, cfg);
    return trainer.run();
}

std::pair<double, double> evaluate_model(const FeatureExtractor& extractor,
                                         std::span<const CosineClassifier> classifiers,
                                         const MultiDomainDataset& ds) {
    if (ds.eval_labels.empty()) throw DataError("evaluate: dataset has no eval labels");
    const std::vector<std::size_t> targets = ds.domain_indices(ds.target_domain());
    if (targets.empty()) throw DataError("evaluate: dataset has no target samples");

    const Matrix features = extract_features(extractor, gather_rows(ds, targets));
    std::size_t hits_max = 0, hits_ens = 0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        const int truth = ds.eval_labels[targets[r]];
        if (global_max_similarity_inference(classifiers, features.row(r)) == truth) ++hits_max;
        if (ensemble_inference(classifiers, features.row(r)) == truth) ++hits_ens;
    }
    const double n = static_cast<double>(targets.size());
    return {static_cast<double>(hits_max) / n, static_cast<double>(hits_ens) / n};
}

std::pair<double, double> evaluate(const TrainState& state, const MultiDomainDataset& ds) {
    return evaluate_model(state.extractor, state.classifiers, ds);
}

double source_only_baseline(const MultiDomainDataset& ds, const RunConfig& cfg) {
    RunConfig baseline = cfg;
    baseline.train.enable_ips = false;
    baseline.train.enable_cps = false;
    baseline.train.enable_ssc = false;
    baseline.train.enable_mi = false;
    baseline.train.enable_weight_refresh = false;
    TrainResult result = train(ds, baseline);
    return evaluate(result.state, ds).second;
}

std::vector<AblationRow> run_ablation(const MultiDomainDataset& ds, const RunConfig& cfg) {
    RunConfig stage = cfg;
    stage.train.enable_ips = false;
    stage.train.enable_cps = false;
    stage.train.enable_ssc = false;
    stage.train.enable_mi = false;
    stage.train.enable_weight_refresh = false;

    std::vector<AblationRow> rows;
    auto run_stage = [&](const std::string& name, bool use_max_sim) {
        TrainResult result = train(ds, stage);
        const auto [max_sim, ensemble] = evaluate(result.state, ds);
        rows.push_back({name, use_max_sim ? max_sim : ensemble});
    };

    run_stage("combined", false);
    stage.train.enable_weight_refresh = true;
    run_stage("+multi_classifier", true);
    stage.train.enable_ips = true;
    stage.train.enable_cps = true;
    run_stage("+l_mps", true);
    stage.train.enable_mi = true;
    run_stage("+l_mi", true);
    stage.train.enable_ssc = true;
    run_stage("+l_ssc", true);
    return rows;
}

} // namespace msfan
