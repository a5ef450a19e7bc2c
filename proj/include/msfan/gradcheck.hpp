#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace msfan {

struct GradCheckEntry {
    std::string loss_name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    double worst() const {
        double w = 0.0;
        for (const GradCheckEntry& e : entries) w = std::max(w, e.max_rel_err);
        return w;
    }
    bool pass(double tol) const { return worst() < tol; }
};

// Compares analytic parameter gradients of every loss against central finite
// differences (step 1e-5) on small random instances. inject_fault corrupts the
// analytic gradients to prove the checker can fail.
GradCheckReport run_gradient_checks(std::uint64_t seed, bool inject_fault);

constexpr double kGradCheckTolerance = 1e-4;

} // namespace msfan
