#include "msfan/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "msfan/error.hpp"

namespace msfan {

void MiConfig::validate() const {
    if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("mi: beta must lie in [0,1)");
}

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("train: steps must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (cluster_interval < 1) throw ConfigError("train: cluster_interval must be >= 1");
    if (metrics_interval < 1) throw ConfigError("train: metrics_interval must be >= 1");
    if (feature_dim < 1 || hidden_dim < 1) throw ConfigError("train: network dims must be >= 1");
    if (!(sgd.learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (!(sgd.momentum >= 0.0 && sgd.momentum < 1.0))
        throw ConfigError("train: sgd_momentum must lie in [0,1)");
    if (!(bank_eta >= 0.0 && bank_eta <= 1.0)) throw ConfigError("train: bank_eta must lie in [0,1]");
    if (kmeans_restarts < 1) throw ConfigError("train: kmeans_restarts must be >= 1");
    if (kmeans_max_iters < 1) throw ConfigError("train: kmeans_max_iters must be >= 1");
    if (!(classifier_temperature > 0.0))
        throw ConfigError("train: classifier_temperature must be > 0");
    if (lambda_mps < 0.0 || lambda_ssc < 0.0 || lambda_mi < 0.0)
        throw ConfigError("train: loss weights must be >= 0");
    for (std::size_t k : cluster_counts)
        if (k == 0) throw ConfigError("train: cluster_counts entries must be >= 1");
    ssl.validate();
    support.validate();
    mi.validate();
}

std::vector<std::size_t> TrainConfig::resolved_cluster_counts(int n_classes) const {
    if (!cluster_counts.empty()) return cluster_counts;
    const std::size_t k = static_cast<std::size_t>(n_classes);
    return {k, k, 2 * k};
}

void RunConfig::validate() const {
    generator.validate();
    train.validate();
}

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct KeyHandler {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

int parse_int_value(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + value + "'");
    }
}

std::uint64_t parse_u64_value(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" + value + "'");
    }
}

double parse_double_value(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + value + "'");
    }
}

bool parse_bool_value(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: key '" + key + "' expects true/false, got '" + value + "'");
}

const std::map<std::string, KeyHandler>& handlers() {
    static const std::map<std::string, KeyHandler> table = [] {
        std::map<std::string, KeyHandler> t;
        auto reg_int = [&t](const std::string& key, auto getter) {
            t[key] = {[key, getter](RunConfig& c, const std::string& v) { *getter(c) = parse_int_value(key, v); },
                      [getter](const RunConfig& c) {
                          return std::to_string(*getter(const_cast<RunConfig&>(c)));
                      }};
        };
        auto reg_double = [&t](const std::string& key, auto getter) {
            t[key] = {[key, getter](RunConfig& c, const std::string& v) { *getter(c) = parse_double_value(key, v); },
                      [getter](const RunConfig& c) {
                          return format_double(*getter(const_cast<RunConfig&>(c)));
                      }};
        };
        auto reg_bool = [&t](const std::string& key, auto getter) {
            t[key] = {[key, getter](RunConfig& c, const std::string& v) { *getter(c) = parse_bool_value(key, v); },
                      [getter](const RunConfig& c) {
                          return *getter(const_cast<RunConfig&>(c)) ? "true" : "false";
                      }};
        };

        reg_int("sources", [](RunConfig& c) { return &c.generator.n_sources; });
        reg_int("classes", [](RunConfig& c) { return &c.generator.n_classes; });
        reg_int("input_dim", [](RunConfig& c) { return &c.generator.input_dim; });
        reg_int("samples_per_class", [](RunConfig& c) { return &c.generator.samples_per_class; });
        reg_int("shots_per_class", [](RunConfig& c) { return &c.generator.shots_per_class; });
        reg_double("class_separation", [](RunConfig& c) { return &c.generator.class_separation; });
        reg_double("domain_shift", [](RunConfig& c) { return &c.generator.domain_shift; });
        reg_double("noise_sigma", [](RunConfig& c) { return &c.generator.noise_sigma; });

        reg_int("steps", [](RunConfig& c) { return &c.train.steps; });
        reg_int("batch_size", [](RunConfig& c) { return &c.train.batch_size; });
        reg_int("cluster_interval", [](RunConfig& c) { return &c.train.cluster_interval; });
        reg_int("metrics_interval", [](RunConfig& c) { return &c.train.metrics_interval; });
        reg_int("feature_dim", [](RunConfig& c) { return &c.train.feature_dim; });
        reg_int("hidden_dim", [](RunConfig& c) { return &c.train.hidden_dim; });
        reg_int("kmeans_restarts", [](RunConfig& c) { return &c.train.kmeans_restarts; });
        reg_int("kmeans_max_iters", [](RunConfig& c) { return &c.train.kmeans_max_iters; });
        reg_double("learning_rate", [](RunConfig& c) { return &c.train.sgd.learning_rate; });
        reg_double("sgd_momentum", [](RunConfig& c) { return &c.train.sgd.momentum; });
        reg_double("bank_eta", [](RunConfig& c) { return &c.train.bank_eta; });
        reg_double("phi", [](RunConfig& c) { return &c.train.ssl.phi; });
        reg_double("margin", [](RunConfig& c) { return &c.train.ssl.margin; });
        reg_double("tau", [](RunConfig& c) { return &c.train.ssl.tau; });
        reg_double("support_threshold", [](RunConfig& c) { return &c.train.support.threshold; });
        reg_double("psi", [](RunConfig& c) { return &c.train.support.psi; });
        reg_double("mi_momentum", [](RunConfig& c) { return &c.train.mi.beta; });
        reg_double("classifier_temperature",
                   [](RunConfig& c) { return &c.train.classifier_temperature; });
        reg_double("lambda_mps", [](RunConfig& c) { return &c.train.lambda_mps; });
        reg_double("lambda_ssc", [](RunConfig& c) { return &c.train.lambda_ssc; });
        reg_double("lambda_mi", [](RunConfig& c) { return &c.train.lambda_mi; });
        reg_bool("enable_ips", [](RunConfig& c) { return &c.train.enable_ips; });
        reg_bool("enable_cps", [](RunConfig& c) { return &c.train.enable_cps; });
        reg_bool("enable_ssc", [](RunConfig& c) { return &c.train.enable_ssc; });
        reg_bool("enable_mi", [](RunConfig& c) { return &c.train.enable_mi; });
        reg_bool("enable_weight_refresh",
                 [](RunConfig& c) { return &c.train.enable_weight_refresh; });
        reg_bool("cps_all_clusterings", [](RunConfig& c) { return &c.train.cps_all_clusterings; });
        reg_bool("ssc_swap_roles", [](RunConfig& c) { return &c.train.ssc_swap_roles; });
        reg_bool("block_cls_grad_to_weights",
                 [](RunConfig& c) { return &c.train.block_cls_grad_to_weights; });

        // seed feeds both the generator and the trainer.
        t["seed"] = {[](RunConfig& c, const std::string& v) {
                         const std::uint64_t s = parse_u64_value("seed", v);
                         c.generator.seed = s;
                         c.train.seed = s;
                     },
                     [](const RunConfig& c) { return std::to_string(c.train.seed); }};

        t["cps_direction"] = {
            [](RunConfig& c, const std::string& v) {
                if (v == "src_to_tgt") c.train.cps_direction = CpsDirection::src_to_tgt;
                else if (v == "tgt_to_src") c.train.cps_direction = CpsDirection::tgt_to_src;
                else if (v == "both") c.train.cps_direction = CpsDirection::both;
                else throw ConfigError("config: key 'cps_direction' expects src_to_tgt/tgt_to_src/both, got '" + v + "'");
            },
            [](const RunConfig& c) -> std::string {
                switch (c.train.cps_direction) {
                    case CpsDirection::src_to_tgt: return "src_to_tgt";
                    case CpsDirection::tgt_to_src: return "tgt_to_src";
                    case CpsDirection::both: return "both";
                }
                return "src_to_tgt";
            }};

        t["cluster_counts"] = {
            [](RunConfig& c, const std::string& v) {
                std::vector<std::size_t> counts;
                if (v != "auto" && !v.empty()) {
                    std::stringstream stream(v);
                    std::string item;
                    while (std::getline(stream, item, ',')) {
                        const int k = parse_int_value("cluster_counts", item);
                        if (k < 1) throw ConfigError("config: key 'cluster_counts' entries must be >= 1");
                        counts.push_back(static_cast<std::size_t>(k));
                    }
                    if (counts.empty())
                        throw ConfigError("config: key 'cluster_counts' expects a comma list or 'auto'");
                }
                c.train.cluster_counts = std::move(counts);
            },
            [](const RunConfig& c) -> std::string {
                if (c.train.cluster_counts.empty()) return "auto";
                std::string out;
                for (std::size_t i = 0; i < c.train.cluster_counts.size(); ++i) {
                    if (i) out += ',';
                    out += std::to_string(c.train.cluster_counts[i]);
                }
                return out;
            }};
        return t;
    }();
    return table;
}

} // namespace

void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& table = handlers();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second.set(cfg, value);
}

std::string get_config_key(const RunConfig& cfg, const std::string& key) {
    const auto& table = handlers();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second.get(cfg);
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [key, handler] : handlers()) keys.push_back(key);
    return keys;
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::stringstream stream(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(stream, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::size_t comment = line.find('#');
        if (comment != std::string::npos) line.erase(comment);
        // trim
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t");
        line = line.substr(first, last - first + 1);

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value, got '" +
                              line + "'");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        auto strip = [](std::string& s) {
            const auto b = s.find_first_not_of(" \t");
            if (b == std::string::npos) {
                s.clear();
                return;
            }
            const auto e = s.find_last_not_of(" \t");
            s = s.substr(b, e - b + 1);
        };
        strip(key);
        strip(value);
        set_config_key(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream buffer;
    buffer << file.rdbuf();
    return parse_config_text(buffer.str());
}

std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    for (const std::string& key : config_keys()) {
        out += key;
        out += '=';
        out += get_config_key(cfg, key);
        out += '\n';
    }
    return out;
}

} // namespace msfan
