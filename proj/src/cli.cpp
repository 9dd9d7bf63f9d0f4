#include "treegpt/cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "treegpt/ablation.hpp"
#include "treegpt/checkpoint.hpp"
#include "treegpt/config.hpp"
#include "treegpt/data.hpp"
#include "treegpt/gradcheck.hpp"
#include "treegpt/model.hpp"
#include "treegpt/training.hpp"

namespace treegpt::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out;
    uint64_t seed = 0;
    bool seed_given = false;
};

void attach_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config_path, "Run configuration file");
    sub->add_option("--set", args.sets, "Override a config key, section.key=value")
        ->take_all()
        ->allow_extra_args(false);
    sub->add_option("--out", args.out, "Output directory for this run");
    sub->add_option("--seed", args.seed, "Random seed (overrides train.seed)")
        ->each([&args](const std::string&) { args.seed_given = true; });
}

// defaults < config file < --set < dedicated flags
RunConfig build_config(const CommonArgs& args, RunConfig base = {}) {
    RunConfig cfg = std::move(base);
    if (!args.config_path.empty()) load_config_file(cfg, args.config_path);
    apply_overrides(cfg, args.sets);
    if (args.seed_given) cfg.train.seed = args.seed;
    if (!args.out.empty()) cfg.out_dir = args.out;
    return cfg;
}

std::string resolve_out_dir(const RunConfig& cfg) {
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm_buf{};
    localtime_r(&now, &tm_buf);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm_buf);
    return std::string("runs/") + stamp + "-seed" + std::to_string(cfg.train.seed);
}

std::vector<data::TrainingExample> examples_from_tasks(const std::vector<data::Task>& tasks,
                                                       int max_seq_len) {
    std::vector<data::TrainingExample> examples;
    for (const auto& task : tasks) {
        for (const auto& pair : task.train_pairs) {
            examples.push_back(data::make_example(pair.input, pair.output, max_seq_len));
        }
    }
    return examples;
}

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(const RunConfig& cfg) {
    const auto family = data::family_from_string(cfg.data.family);
    if (cfg.data.count < 1) throw ConfigError("gen-data: data.count must be >= 1");
    if (cfg.data.eval_count < 0 || cfg.data.eval_count >= cfg.data.count) {
        throw ConfigError("gen-data: data.eval_count must be in [0, data.count)");
    }
    const auto tasks =
        data::generate_synthetic(family, cfg.train.seed, cfg.data.count, cfg.data.synth);

    const std::string out = resolve_out_dir(cfg);
    const int eval_count = cfg.data.eval_count;
    const int train_count = cfg.data.count - eval_count;

    ordered_json manifest;
    manifest["family"] = cfg.data.family;
    manifest["seed"] = cfg.train.seed;
    manifest["count"] = cfg.data.count;
    manifest["eval_count"] = eval_count;
    ordered_json train_files = ordered_json::array();
    ordered_json eval_files = ordered_json::array();

    if (eval_count > 0) {
        fs::create_directories(fs::path(out) / "train");
        fs::create_directories(fs::path(out) / "eval");
    } else {
        fs::create_directories(out);
    }
    for (int i = 0; i < cfg.data.count; ++i) {
        const bool is_eval = i >= train_count;
        std::string rel = tasks[i].task_id + ".json";
        if (eval_count > 0) rel = (is_eval ? "eval/" : "train/") + rel;
        data::write_task_file((fs::path(out) / rel).string(), tasks[i]);
        (is_eval ? eval_files : train_files).push_back(rel);
    }
    manifest["files"] = std::move(train_files);
    if (eval_count > 0) manifest["eval_files"] = std::move(eval_files);

    std::ofstream mf(fs::path(out) / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("gen-data: cannot write manifest in '" + out + "'");
    mf << manifest.dump(1) << "\n";

    std::cout << "gen-data: wrote " << train_count << " train";
    if (eval_count > 0) std::cout << " + " << eval_count << " eval";
    std::cout << " " << cfg.data.family << " tasks to " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

template <class S>
int run_train(const RunConfig& cfg) {
    if (cfg.data.train_dir.empty()) {
        throw ConfigError("train: data.train_dir is required");
    }
    const auto train_tasks = data::load_tasks_from_dir(cfg.data.train_dir);
    if (train_tasks.empty()) {
        throw ValueError("train: no tasks found in '" + cfg.data.train_dir + "'");
    }
    std::vector<data::Task> eval_tasks = train_tasks;
    if (!cfg.data.eval_dir.empty()) {
        eval_tasks = data::load_tasks_from_dir(cfg.data.eval_dir);
        if (eval_tasks.empty()) {
            throw ValueError("train: no tasks found in '" + cfg.data.eval_dir + "'");
        }
    }

    TrainState<S> state;
    if (!cfg.resume_path.empty()) {
        state = load_train_checkpoint<S>(cfg.resume_path);
    } else {
        state = init_train_state<S>(cfg.model, cfg.train);
    }
    const auto examples = examples_from_tasks(train_tasks, state.model.config.max_seq_len);

    const std::string out = resolve_out_dir(cfg);
    fs::create_directories(out);
    const std::string metrics_path = (fs::path(out) / "metrics.csv").string();
    std::ofstream csv(metrics_path, std::ios::app);
    if (!csv) throw IoError("train: cannot open '" + metrics_path + "'");
    if (csv.tellp() == 0) write_metrics_header(csv);

    std::cout << "train: " << examples.size() << " sequences from " << train_tasks.size()
              << " tasks, " << parameter_count(state.model.config) << " parameters, steps "
              << state.step << ".." << cfg.train.total_steps << "\n";

    const auto result = train(state, examples, eval_tasks, cfg.train, &csv,
                              (fs::path(out) / "checkpoint").string());
    csv.flush();
    save_train_checkpoint((fs::path(out) / "checkpoint-final.ckpt").string(), state);

    ordered_json summary;
    summary["steps"] = state.step;
    summary["final_loss"] = result.final_loss;
    if (result.has_eval) {
        summary["token_accuracy"] = result.last_eval.token_accuracy;
        summary["exact_match"] = result.last_eval.exact_match;
    }
    summary["parameter_count"] = parameter_count(state.model.config);
    summary["parameter_count_actual"] = state.model.parameter_count_actual();
    summary["messages_per_step"] = result.messages_per_step;
    summary["wall_seconds"] = result.wall_seconds;
    summary["precision"] = checkpoint::dtype_tag<S>();
    std::ofstream sf(fs::path(out) / "summary.json", std::ios::trunc);
    sf << summary.dump(1) << "\n";

    std::cout << "train: done, final loss " << format_double(result.final_loss);
    if (result.has_eval) {
        std::cout << ", token_acc " << result.last_eval.token_accuracy << ", exact_match "
                  << result.last_eval.exact_match;
    }
    std::cout << ", outputs in " << out << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    if (cfg.precision == Precision::F32) return run_train<float>(cfg);
    return run_train<double>(cfg);
}

// ---------------------------------------------------------------------------
// eval

template <class S>
int run_eval(const checkpoint::File& file, const std::vector<data::Task>& tasks,
             const std::string& out_dir) {
    const auto model = checkpoint::load_model<S>(file);
    const auto result = evaluate(model, tasks);

    std::ostringstream report;
    report << "task_id,pairs,exact_pairs,masked,correct,token_acc\n";
    for (const auto& t : result.per_task) {
        const double acc = t.masked_positions > 0 ? static_cast<double>(t.correct_positions) /
                                                        static_cast<double>(t.masked_positions)
                                                  : 0.0;
        report << t.task_id << ',' << t.pairs << ',' << t.exact_pairs << ','
               << t.masked_positions << ',' << t.correct_positions << ','
               << format_double(acc) << '\n';
    }
    std::cout << report.str();
    std::cout << "eval: token_accuracy " << format_double(result.token_accuracy)
              << " exact_match " << format_double(result.exact_match) << " over "
              << result.pairs << " test pairs\n";

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream rf(fs::path(out_dir) / "eval_report.csv", std::ios::trunc);
        rf << report.str();
        ordered_json summary;
        summary["token_accuracy"] = result.token_accuracy;
        summary["exact_match"] = result.exact_match;
        summary["pairs"] = result.pairs;
        summary["masked_positions"] = result.masked_positions;
        std::ofstream sf(fs::path(out_dir) / "eval_summary.json", std::ios::trunc);
        sf << summary.dump(1) << "\n";
    }
    return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& ckpt_path,
             const std::string& data_dir) {
    const auto file = checkpoint::read_file(ckpt_path);

    // Any model.* override must agree with what the checkpoint was trained
    // with; the checkpoint's own config always drives evaluation.
    bool has_model_override = false;
    for (const auto& s : common.sets) {
        if (s.rfind("model.", 0) == 0) has_model_override = true;
    }
    if (has_model_override) {
        RunConfig from_ckpt;
        from_ckpt.model = checkpoint::config_from_meta(file);
        const std::string* precision = file.find_meta("precision");
        if (precision) from_ckpt.precision = precision_from_string(*precision);
        RunConfig overridden = from_ckpt;
        apply_overrides(overridden, common.sets);
        if (!(overridden.model == from_ckpt.model) ||
            overridden.precision != from_ckpt.precision) {
            throw ConfigError("eval: model overrides conflict with the checkpoint config");
        }
    }

    const auto tasks = data::load_tasks_from_dir(data_dir);
    if (tasks.empty()) {
        throw ValueError("eval: no tasks found in '" + data_dir + "'");
    }
    const std::string* precision = file.find_meta("precision");
    if (precision && *precision == "f32") return run_eval<float>(file, tasks, common.out);
    return run_eval<double>(file, tasks, common.out);
}

// ---------------------------------------------------------------------------
// gradcheck

RunConfig gradcheck_defaults() {
    RunConfig cfg;
    cfg.model.treeffn.hidden_dim = 8;
    cfg.model.treeffn.edge_dim = 4;
    cfg.model.treeffn.iterations = 1;
    cfg.model.num_layers = 1;
    cfg.model.max_seq_len = 16;
    return cfg;
}

int cmd_gradcheck(const RunConfig& cfg, double tolerance, double epsilon, int seq_len) {
    constexpr long kParameterCap = 50000;
    const long count = parameter_count(cfg.model);
    if (count > kParameterCap) {
        throw ConfigError("gradcheck: config has " + std::to_string(count) +
                          " parameters, cap is " + std::to_string(kParameterCap) +
                          "; central differences cost two forwards per parameter, use a tiny "
                          "config");
    }
    if (seq_len < 2 || seq_len > cfg.model.max_seq_len) {
        throw ConfigError("gradcheck: seq_len must be in [2, max_seq_len]");
    }
    // Always 64-bit; finite differences are meaningless in float.
    auto model = TreeGPTModel<double>::init(cfg.model, cfg.train.seed);
    std::mt19937_64 rng(cfg.train.seed ^ 0xda3e39cb94b95bdbULL);
    std::uniform_int_distribution<int> token(0, cfg.model.vocab_size - 1);
    std::vector<int> tokens(static_cast<size_t>(seq_len));
    std::vector<int> targets(static_cast<size_t>(seq_len));
    for (auto& t : tokens) t = token(rng);
    for (auto& t : targets) t = token(rng);
    const std::vector<uint8_t> ones(static_cast<size_t>(seq_len), 1);

    auto loss_fn = [&](Graph<double>& g) {
        const auto fwd = model.forward_batch(g, tokens, ones, 1, seq_len);
        return ops::cross_entropy(g, fwd.logits, targets, ones);
    };
    const auto report = grad_check(loss_fn, model.named_parameters(), epsilon, tolerance);

    std::printf("gradcheck: %ld parameters, seq_len %d, eps %g, tol %g\n", count, seq_len,
                epsilon, tolerance);
    for (const auto& e : report.entries) {
        std::printf("  %-40s max_rel_err %.3e  %s\n", e.name.c_str(), e.max_rel_err,
                    e.passed ? "PASS" : "FAIL");
    }
    const auto* worst = report.worst();
    std::printf("gradcheck: %s (worst %s, %.3e)\n", report.passed ? "PASS" : "FAIL",
                worst ? worst->name.c_str() : "-", worst ? worst->max_rel_err : 0.0);
    return report.passed ? 0 : 2;
}

// ---------------------------------------------------------------------------
// ablate

template <class S>
int run_ablate(const RunConfig& cfg) {
    const auto family = data::family_from_string(cfg.data.family);
    const int held = cfg.data.eval_count > 0 ? cfg.data.eval_count
                                             : std::max(1, cfg.data.count / 5);
    const int total = cfg.data.count + 2 * held;
    const auto tasks = data::generate_synthetic(family, cfg.train.seed, total, cfg.data.synth);

    ablation::AblationDataset dataset;
    dataset.train_examples = examples_from_tasks(
        {tasks.begin(), tasks.begin() + cfg.data.count}, cfg.model.max_seq_len);
    dataset.val_tasks.assign(tasks.begin() + cfg.data.count,
                             tasks.begin() + cfg.data.count + held);
    dataset.test_tasks.assign(tasks.begin() + cfg.data.count + held, tasks.end());

    std::cout << "ablate: " << dataset.train_examples.size() << " train sequences, " << held
              << " val tasks, " << held << " test tasks, seeds";
    for (auto s : cfg.ablation.seeds) std::cout << " " << s;
    std::cout << ", " << cfg.train.total_steps << " steps per run\n";

    const auto report = ablation::run_matrix<S>(cfg.model, cfg.train, dataset,
                                                cfg.ablation.seeds, cfg.ablation.parallel);
    const std::string text = ablation::render_table(report.rows, ablation::TableFormat::Text);
    const std::string csv = ablation::render_table(report.rows, ablation::TableFormat::Csv);

    const std::string out = resolve_out_dir(cfg);
    fs::create_directories(out);
    std::ofstream tf(fs::path(out) / "ablation_report.txt", std::ios::trunc);
    tf << text;
    if (!report.timings_comparable) tf << "note: parallel runs, timings not comparable\n";
    std::ofstream cf(fs::path(out) / "ablation.csv", std::ios::trunc);
    cf << csv;

    std::cout << text;
    if (!report.timings_comparable) {
        std::cout << "note: parallel runs, timings not comparable\n";
    }
    std::cout << "ablate: reports written to " << out << "\n";
    return 0;
}

int cmd_ablate(const RunConfig& cfg) {
    if (cfg.precision == Precision::F32) return run_ablate<float>(cfg);
    return run_ablate<double>(cfg);
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"TreeGPT: attention-free TreeFFN encoder-decoder on ARC-style grid tasks"};
    app.require_subcommand(1);

    CommonArgs gen_args;
    std::string gen_family;
    int gen_count = -1;
    int gen_split = -1;
    auto* gen = app.add_subcommand("gen-data", "Generate synthetic task files");
    attach_common(gen, gen_args);
    gen->add_option("--family", gen_family, "copy | color_map | pattern_tiling | rect_fill");
    gen->add_option("--count", gen_count, "Number of tasks");
    gen->add_option("--split", gen_split, "Hold out this many tasks into an eval/ split");

    CommonArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    attach_common(train_cmd, train_args);

    CommonArgs eval_args;
    std::string eval_ckpt, eval_data;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a task directory");
    attach_common(eval_cmd, eval_args);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "Directory of task files")->required();

    CommonArgs gc_args;
    double gc_tol = 1e-4, gc_eps = 1e-5;
    int gc_seq_len = 6;
    auto* gc = app.add_subcommand("gradcheck",
                                  "Check analytic gradients against central differences");
    attach_common(gc, gc_args);
    gc->add_option("--tol", gc_tol, "Max relative error tolerated");
    gc->add_option("--eps", gc_eps, "Finite-difference step");
    gc->add_option("--seq-len", gc_seq_len, "Token sequence length");

    CommonArgs ab_args;
    auto* ab = app.add_subcommand("ablate", "Run the six-configuration component study");
    attach_common(ab, ab_args);

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    static const char* name = "treegpt";
    argv.push_back(name);
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            RunConfig cfg = build_config(gen_args);
            if (!gen_family.empty()) {
                try {
                    data::family_from_string(gen_family);
                } catch (const ValueError& e) {
                    throw ConfigError(e.what());
                }
                cfg.data.family = gen_family;
            }
            if (gen_count >= 0) cfg.data.count = gen_count;
            if (gen_split >= 0) cfg.data.eval_count = gen_split;
            return cmd_gen_data(cfg);
        }
        if (*train_cmd) {
            RunConfig cfg = build_config(train_args);
            cfg.validate();
            return cmd_train(cfg);
        }
        if (*eval_cmd) {
            return cmd_eval(eval_args, eval_ckpt, eval_data);
        }
        if (*gc) {
            RunConfig cfg = build_config(gc_args, gradcheck_defaults());
            cfg.validate();
            return cmd_gradcheck(cfg, gc_tol, gc_eps, gc_seq_len);
        }
        if (*ab) {
            RunConfig cfg = build_config(ab_args);
            cfg.validate();
            return cmd_ablate(cfg);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace treegpt::cli
