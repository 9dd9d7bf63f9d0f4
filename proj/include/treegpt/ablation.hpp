#pragma once

// The six-configuration component study as a runnable matrix. Every run in a
// matrix shares the same initialization seed and data order, so result
// differences are attributable to the component flags alone.

#include <cstdint>
#include <cstdio>
#include <future>
#include <sstream>
#include <string>
#include <vector>

#include "treegpt/data.hpp"
#include "treegpt/errors.hpp"
#include "treegpt/model.hpp"
#include "treegpt/training.hpp"

namespace treegpt::ablation {

struct FlagSet {
    std::string name;
    bool edge_projection = false;
    bool gating = false;
    bool residual = false;
};

// Row order matches the component study table.
inline std::vector<FlagSet> study_configurations() {
    return {
        {"Edge Projection Only", true, false, false},
        {"Edge Proj + Gating", true, true, false},
        {"Edge Proj + Residual", true, false, true},
        {"All Components", true, true, true},
        {"Gating Only", false, true, false},
        {"Baseline TreeFFN", false, false, false},
    };
}

struct AblationRow {
    std::string config_name;
    bool edge_projection = false;
    bool gating = false;
    bool residual = false;
    double val_accuracy = 0.0;   // mean token accuracy over seeds
    double test_accuracy = 0.0;
    double training_seconds = 0.0;
    double val_spread = 0.0;  // max - min over seeds
    double test_spread = 0.0;
    int runs = 0;
};

struct AblationDataset {
    std::vector<data::TrainingExample> train_examples;
    std::vector<data::Task> val_tasks;
    std::vector<data::Task> test_tasks;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    bool timings_comparable = true;
};

template <class S>
AblationRow run_configuration(const FlagSet& flags, ModelConfig model_cfg,
                              const TrainConfig& train_cfg, const AblationDataset& dataset,
                              const std::vector<uint64_t>& seeds) {
    if (dataset.val_tasks.empty() || dataset.test_tasks.empty()) {
        throw ValueError("ablation: dataset needs held-out val and test splits");
    }
    model_cfg.treeffn.use_edge_projection = flags.edge_projection;
    model_cfg.treeffn.use_gating = flags.gating;
    model_cfg.treeffn.use_residual = flags.residual;

    AblationRow row;
    row.config_name = flags.name;
    row.edge_projection = flags.edge_projection;
    row.gating = flags.gating;
    row.residual = flags.residual;
    double val_min = 1.0, val_max = 0.0, test_min = 1.0, test_max = 0.0;
    for (uint64_t seed : seeds) {
        TrainConfig cfg = train_cfg;
        cfg.seed = seed;
        cfg.eval_every = 0;
        auto state = init_train_state<S>(model_cfg, cfg);
        const auto outcome = train(state, dataset.train_examples, {}, cfg);
        const auto val = evaluate(state.model, dataset.val_tasks);
        const auto test = evaluate(state.model, dataset.test_tasks);
        row.val_accuracy += val.token_accuracy;
        row.test_accuracy += test.token_accuracy;
        row.training_seconds += outcome.wall_seconds;
        val_min = std::min(val_min, val.token_accuracy);
        val_max = std::max(val_max, val.token_accuracy);
        test_min = std::min(test_min, test.token_accuracy);
        test_max = std::max(test_max, test.token_accuracy);
        ++row.runs;
    }
    row.val_accuracy /= row.runs;
    row.test_accuracy /= row.runs;
    row.val_spread = val_max - val_min;
    row.test_spread = test_max - test_min;
    return row;
}

// Sequential by default so wall-clock timings are comparable across rows; the
// parallel path trades that away for speed and says so in the report.
template <class S>
AblationReport run_matrix(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                          const AblationDataset& dataset, const std::vector<uint64_t>& seeds,
                          bool parallel = false) {
    if (seeds.empty()) throw ValueError("ablation: at least one seed required");
    const auto configs = study_configurations();
    AblationReport report;
    report.timings_comparable = !parallel;
    report.rows.resize(configs.size());

    auto run_one = [&](size_t i) {
        try {
            return run_configuration<S>(configs[i], model_cfg, train_cfg, dataset, seeds);
        } catch (const std::exception& e) {
            throw Error("ablation: configuration '" + configs[i].name +
                        "' failed: " + e.what());
        }
    };

    if (parallel) {
        std::vector<std::future<AblationRow>> futures;
        futures.reserve(configs.size());
        for (size_t i = 0; i < configs.size(); ++i) {
            futures.push_back(std::async(std::launch::async, run_one, i));
        }
        for (size_t i = 0; i < configs.size(); ++i) report.rows[i] = futures[i].get();
    } else {
        for (size_t i = 0; i < configs.size(); ++i) report.rows[i] = run_one(i);
    }
    return report;
}

enum class TableFormat { Text, Csv };

inline std::string render_table(const std::vector<AblationRow>& rows, TableFormat format) {
    if (rows.empty()) throw ValueError("render_table: no rows");
    std::ostringstream os;
    if (format == TableFormat::Csv) {
        os << "configuration,edge_projection,gating,residual,val_acc,test_acc,time_s,"
              "val_spread,test_spread,runs\n";
        for (const auto& r : rows) {
            os << r.config_name << ',' << (r.edge_projection ? 1 : 0) << ','
               << (r.gating ? 1 : 0) << ',' << (r.residual ? 1 : 0) << ','
               << format_double(r.val_accuracy) << ',' << format_double(r.test_accuracy) << ','
               << format_double(r.training_seconds) << ',' << format_double(r.val_spread) << ','
               << format_double(r.test_spread) << ',' << r.runs << '\n';
        }
        return os.str();
    }
    os << "Configuration         | Val Acc | Test Acc | Time(s)\n";
    os << "----------------------+---------+----------+--------\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-22s|  %.4f |   %.4f | %7.1f", r.config_name.c_str(),
                      r.val_accuracy, r.test_accuracy, r.training_seconds);
        os << buf;
        if (r.runs > 1) {
            std::snprintf(buf, sizeof(buf), "  (n=%d, val +-%.4f, test +-%.4f)", r.runs,
                          r.val_spread / 2.0, r.test_spread / 2.0);
            os << buf;
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace treegpt::ablation
