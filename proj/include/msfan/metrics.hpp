#pragma once

#include <string>
#include <vector>

namespace msfan {

// One training-progress snapshot, serialized as one JSON object per line.
struct MetricsRecord {
    int step = 0;
    double loss_cls = 0.0;
    double loss_ips = 0.0;
    double loss_cps = 0.0;
    double loss_ssc = 0.0;
    double loss_mi = 0.0;
    double loss_total = 0.0;
    bool ssc_active = false;
    double acc_max_sim = 0.0;
    double acc_ensemble = 0.0;
    std::vector<std::size_t> support_sizes;          // per source domain; empty before the first build
    std::vector<double> pseudo_label_precision;      // -1 when a domain has no pseudo entries
    int degenerate_weight_classes = 0;               // kept columns during the last refresh
};

std::string to_jsonl(const MetricsRecord& record);
void write_metrics_jsonl(const std::vector<MetricsRecord>& records, const std::string& path);

} // namespace msfan
