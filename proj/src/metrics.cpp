#include "msfan/metrics.hpp"

#include <fstream>

#include <json.hpp>

#include "msfan/error.hpp"

namespace msfan {

std::string to_jsonl(const MetricsRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["loss_cls"] = r.loss_cls;
    j["loss_ips"] = r.loss_ips;
    j["loss_cps"] = r.loss_cps;
    j["loss_ssc"] = r.loss_ssc;
    j["loss_mi"] = r.loss_mi;
    j["loss_total"] = r.loss_total;
    j["ssc_active"] = r.ssc_active;
    j["acc_max_sim"] = r.acc_max_sim;
    j["acc_ensemble"] = r.acc_ensemble;
    j["support_sizes"] = r.support_sizes;
    nlohmann::ordered_json precision = nlohmann::ordered_json::array();
    for (double p : r.pseudo_label_precision) {
        if (p < 0.0)
            precision.push_back(nullptr);
        else
            precision.push_back(p);
    }
    j["pseudo_label_precision"] = precision;
    j["degenerate_weight_classes"] = r.degenerate_weight_classes;
    return j.dump();
}

void write_metrics_jsonl(const std::vector<MetricsRecord>& records, const std::string& path) {
    std::ofstream file(path, std::ios::binary);
    if (!file) throw DataError("metrics: cannot open '" + path + "' for writing");
    for (const MetricsRecord& r : records) file << to_jsonl(r) << '\n';
    if (!file) throw DataError("metrics: write failure on '" + path + "'");
}

} // namespace msfan
