#pragma once

// Finite-difference gradient oracle. Always runs in 64-bit: central
// differences are meaningless in float.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "treegpt/errors.hpp"
#include "treegpt/tensor.hpp"

namespace treegpt {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    long worst_index = -1;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double epsilon = 0.0;
    double tolerance = 0.0;
    bool passed = true;

    const GradCheckEntry* worst() const {
        const GradCheckEntry* w = nullptr;
        for (const auto& e : entries) {
            if (!w || e.max_rel_err > w->max_rel_err) w = &e;
        }
        return w;
    }
};

// loss_fn must rebuild the forward pass from the current parameter values on
// every call and be deterministic. Relative error per element is
// |analytic - numeric| / max(1, |analytic|, |numeric|).
inline GradCheckReport grad_check(
    const std::function<TensorPtr<double>(Graph<double>&)>& loss_fn,
    const std::vector<std::pair<std::string, TensorPtr<double>>>& params, double epsilon,
    double tolerance) {
    GradCheckReport report;
    report.epsilon = epsilon;
    report.tolerance = tolerance;

    for (auto& [name, p] : params) p->zero_grad();
    Graph<double> graph(true);
    auto loss = loss_fn(graph);
    if (loss->numel() != 1) {
        throw DimensionError("grad_check: loss must be scalar, got " + shape_str(loss->shape()));
    }
    if (!std::isfinite(loss->data[0])) {
        throw NumericError("grad_check: loss is not finite");
    }
    graph.backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& [name, p] : params) {
        p->ensure_grad();
        analytic.push_back(p->grad);
    }

    auto eval = [&](void) {
        Graph<double> g(false);
        auto l = loss_fn(g);
        if (!std::isfinite(l->data[0])) throw NumericError("grad_check: loss is not finite");
        return l->data[0];
    };

    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi].second;
        GradCheckEntry entry;
        entry.name = params[pi].first;
        for (long i = 0; i < p->numel(); ++i) {
            const double saved = p->data[i];
            p->data[i] = saved + epsilon;
            const double f_plus = eval();
            p->data[i] = saved - epsilon;
            const double f_minus = eval();
            p->data[i] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
            const double a = analytic[pi][i];
            const double rel =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = i;
            }
        }
        entry.passed = entry.max_rel_err < tolerance;
        report.passed = report.passed && entry.passed;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace treegpt
