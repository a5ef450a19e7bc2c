// msfan command-line tool. Talks to the library exclusively through the
// C API in msfan/msfan.h; exit codes mirror msfan_status.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "msfan/msfan.h"

namespace {

int fail(msfan_status status) {
    std::fprintf(stderr, "error: %s\n", msfan_last_error());
    return static_cast<int>(status);
}

struct ConfigHandle {
    msfan_config* ptr = nullptr;
    ~ConfigHandle() { msfan_config_free(ptr); }
};

struct DatasetHandle {
    msfan_dataset* ptr = nullptr;
    ~DatasetHandle() { msfan_dataset_free(ptr); }
};

struct ModelHandle {
    msfan_model* ptr = nullptr;
    ~ModelHandle() { msfan_model_free(ptr); }
};

// MSFAN_SEED overrides the config seed for generate/train/ablate.
msfan_status apply_env_seed(msfan_config* cfg) {
    const char* seed = std::getenv("MSFAN_SEED");
    if (!seed || !*seed) return MSFAN_OK;
    return msfan_config_set(cfg, "seed", seed);
}

msfan_status load_config(const std::string& path, ConfigHandle& cfg) {
    const msfan_status status =
        path.empty() ? msfan_config_create(&cfg.ptr) : msfan_config_load(path.c_str(), &cfg.ptr);
    if (status != MSFAN_OK) return status;
    return apply_env_seed(cfg.ptr);
}

int cmd_generate(const std::string& config_path, const std::string& out_stem) {
    ConfigHandle cfg;
    msfan_status status = load_config(config_path, cfg);
    if (status != MSFAN_OK) return fail(status);

    DatasetHandle ds;
    status = msfan_dataset_generate(cfg.ptr, &ds.ptr);
    if (status != MSFAN_OK) return fail(status);
    status = msfan_dataset_save(ds.ptr, out_stem.c_str());
    if (status != MSFAN_OK) return fail(status);

    uint64_t n_samples = 0;
    uint32_t n_sources = 0, n_classes = 0, input_dim = 0;
    msfan_dataset_info(ds.ptr, &n_sources, &n_classes, &input_dim, &n_samples);
    std::printf("wrote %s.csv and %s.eval.csv (%llu samples, %u sources, %u classes, dim %u)\n",
                out_stem.c_str(), out_stem.c_str(), static_cast<unsigned long long>(n_samples),
                n_sources, n_classes, input_dim);
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_stem,
              const std::string& metrics_out, const std::string& checkpoint_out, bool dry_run) {
    ConfigHandle cfg;
    msfan_status status = load_config(config_path, cfg);
    if (status != MSFAN_OK) return fail(status);
    status = msfan_config_validate(cfg.ptr);
    if (status != MSFAN_OK) return fail(status);
    if (dry_run) {
        std::printf("config ok\n");
        return 0;
    }

    DatasetHandle ds;
    status = msfan_dataset_load(data_stem.c_str(), &ds.ptr);
    if (status != MSFAN_OK) return fail(status);

    ModelHandle model;
    status = msfan_train(cfg.ptr, ds.ptr, metrics_out.empty() ? nullptr : metrics_out.c_str(),
                         &model.ptr);
    if (status != MSFAN_OK) return fail(status);

    if (!checkpoint_out.empty()) {
        status = msfan_model_save(model.ptr, checkpoint_out.c_str());
        if (status != MSFAN_OK) return fail(status);
    }

    double acc_max = 0.0, acc_ens = 0.0;
    status = msfan_evaluate(model.ptr, ds.ptr, &acc_max, &acc_ens);
    if (status != MSFAN_OK) return fail(status);
    std::printf("target accuracy: max_similarity %.4f ensemble %.4f\n", acc_max, acc_ens);
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_stem) {
    ModelHandle model;
    msfan_status status = msfan_model_load(checkpoint_path.c_str(), &model.ptr);
    if (status != MSFAN_OK) return fail(status);

    DatasetHandle ds;
    status = msfan_dataset_load(data_stem.c_str(), &ds.ptr);
    if (status != MSFAN_OK) return fail(status);

    double acc_max = 0.0, acc_ens = 0.0;
    status = msfan_evaluate(model.ptr, ds.ptr, &acc_max, &acc_ens);
    if (status != MSFAN_OK) return fail(status);
    std::printf("target accuracy: max_similarity %.4f ensemble %.4f\n", acc_max, acc_ens);
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_stem,
               const std::string& out_path) {
    ConfigHandle cfg;
    msfan_status status = load_config(config_path, cfg);
    if (status != MSFAN_OK) return fail(status);

    DatasetHandle ds;
    status = msfan_dataset_load(data_stem.c_str(), &ds.ptr);
    if (status != MSFAN_OK) return fail(status);

    double accuracies[MSFAN_ABLATION_STAGES] = {0};
    status = msfan_ablation(cfg.ptr, ds.ptr, accuracies);
    if (status != MSFAN_OK) return fail(status);

    std::string table = "stage,accuracy\n";
    char line[128];
    for (int s = 0; s < MSFAN_ABLATION_STAGES; ++s) {
        std::snprintf(line, sizeof(line), "%s,%.6f\n", msfan_ablation_stage_name(s), accuracies[s]);
        table += line;
    }
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) {
            std::fprintf(stderr, "error: cannot open %s for writing\n", out_path.c_str());
            return static_cast<int>(MSFAN_ERR_DATA);
        }
        out << table;
    }
    std::printf("%s", table.c_str());
    return 0;
}

int cmd_check_grad(unsigned long long seed, bool inject_fault) {
    char report[1024] = {0};
    double worst = 0.0;
    const msfan_status status =
        msfan_gradient_check(seed, inject_fault ? 1 : 0, report, sizeof(report), &worst);
    std::printf("%s", report);
    if (status == MSFAN_OK) {
        std::printf("gradient check passed (worst %.3e)\n", worst);
        return 0;
    }
    if (status == MSFAN_ERR_NUMERIC) {
        std::printf("gradient check FAILED (worst %.3e)\n", worst);
        return static_cast<int>(MSFAN_ERR_NUMERIC);
    }
    return fail(status);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MSFAN: multi-source few-shot domain adaptation on synthetic benchmarks"};
    app.require_subcommand(1);

    std::string config_path, out_stem, data_stem, metrics_out, checkpoint_out, checkpoint_path,
        ablate_out;
    bool dry_run = false, inject_fault = false;
    unsigned long long seed = 1;

    CLI::App* generate = app.add_subcommand("generate", "generate a synthetic dataset");
    generate->add_option("--config", config_path, "run config file (key=value)");
    generate->add_option("--out", out_stem, "output stem for <stem>.csv and <stem>.eval.csv")
        ->required();

    CLI::App* train = app.add_subcommand("train", "train MSFAN on a dataset");
    train->add_option("--config", config_path, "run config file (key=value)");
    train->add_option("--data", data_stem, "dataset stem");
    train->add_option("--metrics-out", metrics_out, "JSONL metrics output path");
    train->add_option("--checkpoint-out", checkpoint_out, "checkpoint output path");
    train->add_flag("--dry-run", dry_run, "validate the config and exit");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
    eval->add_option("--data", data_stem, "dataset stem")->required();

    CLI::App* ablate = app.add_subcommand("ablate", "run the component ablation pipeline");
    ablate->add_option("--config", config_path, "run config file (key=value)");
    ablate->add_option("--data", data_stem, "dataset stem")->required();
    ablate->add_option("--out", ablate_out, "CSV output path");

    CLI::App* check = app.add_subcommand("check-grad", "finite-difference gradient checks");
    check->add_option("--seed", seed, "random seed");
    check->add_flag("--inject-fault", inject_fault, "corrupt gradients to test the checker");

    CLI11_PARSE(app, argc, argv);

    if (generate->parsed()) return cmd_generate(config_path, out_stem);
    if (train->parsed()) {
        if (!dry_run && data_stem.empty()) {
            std::fprintf(stderr, "error: train requires --data\n");
            return static_cast<int>(MSFAN_ERR_DATA);
        }
        return cmd_train(config_path, data_stem, metrics_out, checkpoint_out, dry_run);
    }
    if (eval->parsed()) return cmd_eval(checkpoint_path, data_stem);
    if (ablate->parsed()) return cmd_ablate(config_path, data_stem, ablate_out);
    if (check->parsed()) return cmd_check_grad(seed, inject_fault);
    return MSFAN_ERR_INTERNAL;
}
