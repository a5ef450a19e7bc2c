#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msfan/datagen.hpp"
#include "msfan/numerics.hpp"
#include "msfan/ssl_losses.hpp"
#include "msfan/support.hpp"

namespace msfan {

struct MiConfig {
    double beta = 0.9; // moving-average momentum of the prior tracker

    void validate() const;
};

struct TrainConfig {
    int steps = 400;
    int batch_size = 64;
    int cluster_interval = 50;
    int metrics_interval = 10;
    std::uint64_t seed = 1;

    int feature_dim = 32;
    int hidden_dim = 64;

    SgdConfig sgd;
    double bank_eta = 0.5;

    // Empty means (n_classes, n_classes, 2*n_classes), resolved per dataset.
    std::vector<std::size_t> cluster_counts;
    int kmeans_restarts = 10;
    int kmeans_max_iters = 100;

    SslConfig ssl;
    SupportConfig support;
    MiConfig mi;
    double classifier_temperature = 0.05;

    double lambda_mps = 1.0;
    double lambda_ssc = 0.1;
    double lambda_mi = 0.1;

    bool enable_ips = true;
    bool enable_cps = true;
    bool enable_ssc = true;
    bool enable_mi = true;
    bool enable_weight_refresh = true;

    CpsDirection cps_direction = CpsDirection::src_to_tgt;
    bool cps_all_clusterings = false;
    bool ssc_swap_roles = false;
    bool block_cls_grad_to_weights = false;

    void validate() const;
    std::vector<std::size_t> resolved_cluster_counts(int n_classes) const;
};

// Everything the CLI subcommands need: generator plus trainer settings, one
// flat key=value file. Unknown keys are rejected by name.
struct RunConfig {
    GeneratorConfig generator;
    TrainConfig train;

    void validate() const;
};

// Accepts `key=value` lines, blank lines and `#` comments. Throws ConfigError
// naming the offending key on unknown keys or unparseable values.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_key(const RunConfig& cfg, const std::string& key);

// Sorted key=value dump; parse_config_text(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& cfg);
std::vector<std::string> config_keys();

} // namespace msfan
