#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "scriptgauge/tensor.hpp"

namespace scriptgauge {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool passed = true;
};

// Central-difference check of analytic gradients already stored in each
// parameter's grad buffer. loss_fn must recompute the scalar loss from the
// current parameter values with no side effects (dropout off, batch norm in
// a fixed mode). Relative error: |a - n| / max(|a|, |n|, 1e-8).
template <typename T>
GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::vector<Parameter<T>*>& params,
                           double h = 1e-5, double tol = 1e-5) {
    GradCheckReport report;
    for (auto* p : params) {
        GradCheckEntry entry;
        entry.name = p->name;
        for (std::size_t i = 0; i < p->value.data.size(); ++i) {
            const T saved = p->value.data[i];
            p->value.data[i] = saved + static_cast<T>(h);
            const double fp = loss_fn();
            p->value.data[i] = saved - static_cast<T>(h);
            const double fm = loss_fn();
            p->value.data[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = static_cast<double>(p->grad.data[i]);
            const double denom =
                std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            const double rel = std::fabs(analytic - numeric) / denom;
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        entry.passed = entry.max_rel_err < tol;
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.passed = report.passed && entry.passed;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

} // namespace scriptgauge
