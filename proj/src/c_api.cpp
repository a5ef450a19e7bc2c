#include "msfan/msfan.h"

#include <cstdio>
#include <cstring>
#include <memory>
#include <string>

#include "msfan/checkpoint.hpp"
#include "msfan/config.hpp"
#include "msfan/datagen.hpp"
#include "msfan/error.hpp"
#include "msfan/gradcheck.hpp"
#include "msfan/metrics.hpp"
#include "msfan/trainer.hpp"

struct msfan_config {
    msfan::RunConfig cfg;
};

struct msfan_dataset {
    msfan::MultiDomainDataset ds;
};

struct msfan_model {
    msfan::ModelState state;
};

namespace {

thread_local std::string g_last_error;

msfan_status set_error(const msfan::Error& e) {
    g_last_error = e.what();
    switch (e.code()) {
        case msfan::Status::config: return MSFAN_ERR_CONFIG;
        case msfan::Status::data: return MSFAN_ERR_DATA;
        case msfan::Status::numeric: return MSFAN_ERR_NUMERIC;
        default: return MSFAN_ERR_INTERNAL;
    }
}

template <typename Fn>
msfan_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return MSFAN_OK;
    } catch (const msfan::Error& e) {
        return set_error(e);
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MSFAN_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return MSFAN_ERR_INTERNAL;
    }
}

msfan_status require(bool ok, const char* message) {
    if (ok) return MSFAN_OK;
    g_last_error = message;
    return MSFAN_ERR_INTERNAL;
}

void copy_out(const std::string& text, char* buf, size_t buf_len) {
    if (!buf || buf_len == 0) return;
    const size_t n = std::min(text.size(), buf_len - 1);
    std::memcpy(buf, text.data(), n);
    buf[n] = '\0';
}

} // namespace

extern "C" {

const char* msfan_last_error(void) { return g_last_error.c_str(); }

msfan_status msfan_config_create(msfan_config** out) {
    if (require(out != nullptr, "config_create: null out") != MSFAN_OK) return MSFAN_ERR_INTERNAL;
    return guarded([&] { *out = new msfan_config(); });
}

msfan_status msfan_config_load(const char* path, msfan_config** out) {
    if (require(out && path, "config_load: null argument") != MSFAN_OK) return MSFAN_ERR_INTERNAL;
    return guarded([&] {
        auto cfg = std::make_unique<msfan_config>();
        cfg->cfg = msfan::load_config(path);
        *out = cfg.release();
    });
}

msfan_status msfan_config_set(msfan_config* cfg, const char* key, const char* value) {
    if (require(cfg && key && value, "config_set: null argument") != MSFAN_OK)
        return MSFAN_ERR_INTERNAL;
    return guarded([&] { msfan::set_config_key(cfg->cfg, key, value); });
}

msfan_status msfan_config_get(const msfan_config* cfg, const char* key, char* buf, size_t buf_len) {
    if (require(cfg && key, "config_get: null argument") != MSFAN_OK) return MSFAN_ERR_INTERNAL;
    return guarded([&] { copy_out(msfan::get_config_key(cfg->cfg, key), buf, buf_len); });
}

msfan_status msfan_config_validate(const msfan_config* cfg) {
    if (require(cfg != nullptr, "config_validate: null config") != MSFAN_OK)
        return MSFAN_ERR_INTERNAL;
    return guarded([&] { cfg->cfg.validate(); });
}

void msfan_config_free(msfan_config* cfg) { delete cfg; }

msfan_status msfan_dataset_generate(const msfan_config* cfg, msfan_dataset** out) {
    if (require(cfg && out, "dataset_generate: null argument") != MSFAN_OK)
        return MSFAN_ERR_INTERNAL;
    return guarded([&] {
        auto ds = std::make_unique<msfan_dataset>();
        ds->ds = msfan::generate_synthetic(cfg->cfg.generator);
        *out = ds.release();
    });
}

msfan_status msfan_dataset_save(const msfan_dataset* ds, const char* stem) {
    if (require(ds && stem, "dataset_save: null argument") != MSFAN_OK) return MSFAN_ERR_INTERNAL;
    return guarded([&] { msfan::save_dataset(ds->ds, stem); });
}

msfan_status msfan_dataset_load(const char* stem, msfan_dataset** out) {
    if (require(stem && out, "dataset_load: null argument") != MSFAN_OK) return MSFAN_ERR_INTERNAL;
    return guarded([&] {
        auto ds = std::make_unique<msfan_dataset>();
        ds->ds = msfan::load_dataset(stem);
        *out = ds.release();
    });
}

msfan_status msfan_dataset_info(const msfan_dataset* ds, uint32_t* n_sources, uint32_t* n_classes,
                                uint32_t* input_dim, uint64_t* n_samples) {
    if (require(ds != nullptr, "dataset_info: null dataset") != MSFAN_OK) return MSFAN_ERR_INTERNAL;
    if (n_sources) *n_sources = static_cast<uint32_t>(ds->ds.n_sources);
    if (n_classes) *n_classes = static_cast<uint32_t>(ds->ds.n_classes);
    if (input_dim) *input_dim = static_cast<uint32_t>(ds->ds.input_dim);
    if (n_samples) *n_samples = static_cast<uint64_t>(ds->ds.samples.size());
    g_last_error.clear();
    return MSFAN_OK;
}

void msfan_dataset_free(msfan_dataset* ds) { delete ds; }

msfan_status msfan_train(const msfan_config* cfg, const msfan_dataset* ds,
                         const char* metrics_path, msfan_model** out) {
    if (require(cfg && ds && out, "train: null argument") != MSFAN_OK) return MSFAN_ERR_INTERNAL;
    return guarded([&] {
        msfan::TrainResult result = msfan::train(ds->ds, cfg->cfg);
        if (metrics_path) msfan::write_metrics_jsonl(result.metrics, metrics_path);
        auto model = std::make_unique<msfan_model>();
        model->state = result.state.to_model(cfg->cfg);
        *out = model.release();
    });
}

msfan_status msfan_model_save(const msfan_model* model, const char* path) {
    if (require(model && path, "model_save: null argument") != MSFAN_OK) return MSFAN_ERR_INTERNAL;
    return guarded([&] { msfan::save_checkpoint(model->state, path); });
}

msfan_status msfan_model_load(const char* path, msfan_model** out) {
    if (require(path && out, "model_load: null argument") != MSFAN_OK) return MSFAN_ERR_INTERNAL;
    return guarded([&] {
        auto model = std::make_unique<msfan_model>();
        model->state = msfan::load_checkpoint(path);
        *out = model.release();
    });
}

void msfan_model_free(msfan_model* model) { delete model; }

msfan_status msfan_evaluate(const msfan_model* model, const msfan_dataset* ds,
                            double* acc_max_similarity, double* acc_ensemble) {
    if (require(model && ds, "evaluate: null argument") != MSFAN_OK) return MSFAN_ERR_INTERNAL;
    return guarded([&] {
        const auto [max_sim, ensemble] =
            msfan::evaluate_model(model->state.extractor, model->state.classifiers, ds->ds);
        if (acc_max_similarity) *acc_max_similarity = max_sim;
        if (acc_ensemble) *acc_ensemble = ensemble;
    });
}

msfan_status msfan_baseline(const msfan_config* cfg, const msfan_dataset* ds, double* accuracy) {
    if (require(cfg && ds && accuracy, "baseline: null argument") != MSFAN_OK)
        return MSFAN_ERR_INTERNAL;
    return guarded([&] { *accuracy = msfan::source_only_baseline(ds->ds, cfg->cfg); });
}

msfan_status msfan_ablation(const msfan_config* cfg, const msfan_dataset* ds, double* accuracies) {
    if (require(cfg && ds && accuracies, "ablation: null argument") != MSFAN_OK)
        return MSFAN_ERR_INTERNAL;
    return guarded([&] {
        const std::vector<msfan::AblationRow> rows = msfan::run_ablation(ds->ds, cfg->cfg);
        for (std::size_t i = 0; i < rows.size() && i < MSFAN_ABLATION_STAGES; ++i)
            accuracies[i] = rows[i].accuracy;
    });
}

const char* msfan_ablation_stage_name(int stage) {
    static const char* names[MSFAN_ABLATION_STAGES] = {"combined", "+multi_classifier", "+l_mps",
                                                       "+l_mi", "+l_ssc"};
    if (stage < 0 || stage >= MSFAN_ABLATION_STAGES) return "";
    return names[stage];
}

msfan_status msfan_gradient_check(uint64_t seed, int inject_fault, char* report, size_t report_len,
                                  double* max_rel_err) {
    bool passed = false;
    const msfan_status status = guarded([&] {
        const msfan::GradCheckReport result = msfan::run_gradient_checks(seed, inject_fault != 0);
        std::string text;
        char buf[64];
        for (const msfan::GradCheckEntry& entry : result.entries) {
            std::snprintf(buf, sizeof(buf), "%.3e", entry.max_rel_err);
            text += "loss " + entry.loss_name + " max_rel_err " + buf + "\n";
        }
        copy_out(text, report, report_len);
        if (max_rel_err) *max_rel_err = result.worst();
        passed = result.pass(msfan::kGradCheckTolerance);
    });
    if (status != MSFAN_OK) return status;
    if (!passed) {
        g_last_error = "gradient check exceeded tolerance";
        return MSFAN_ERR_NUMERIC;
    }
    return MSFAN_OK;
}

} // extern "C"
