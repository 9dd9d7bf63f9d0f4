#pragma once

// AdamW with decoupled weight decay, linear-warmup cosine learning-rate
// schedule, the masked-loss training loop, and token/exact-match evaluation.
//
// Training feeds the model the inference-mode canvas (MASK in the whole
// output region) and scores the logits against the true tokens at the loss
// positions. Feeding the true output tokens as model input would let the
// network learn the identity map at the scored positions and collapse at
// inference time, so train and inference conditions are kept identical.
//
// Everything is deterministic in (config, seed): initialization, data order,
// and the metrics stream. Resuming from a checkpoint reproduces the
// uninterrupted run exactly because the data RNG, epoch permutation, cursor,
// and optimizer moments are all checkpointed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "treegpt/checkpoint.hpp"
#include "treegpt/data.hpp"
#include "treegpt/errors.hpp"
#include "treegpt/model.hpp"
#include "treegpt/ops.hpp"

namespace treegpt {

struct TrainConfig {
    long total_steps = 1500;
    long warmup_steps = 100;
    double lr_max = 3e-4;
    double lr_min = 1e-5;
    int batch_size = 8;
    uint64_t seed = 42;
    long eval_every = 100;
    double grad_clip_norm = 1.0;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long checkpoint_every = 0;  // 0 keeps only the final checkpoint

    void validate() const {
        if (total_steps < 1) throw ConfigError("train: total_steps must be >= 1");
        if (warmup_steps < 0 || warmup_steps >= total_steps) {
            throw ConfigError("train: warmup_steps must be in [0, total_steps)");
        }
        if (lr_min > lr_max) throw ConfigError("train: lr_min must be <= lr_max");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (eval_every < 0) throw ConfigError("train: eval_every must be >= 0");
        if (grad_clip_norm <= 0) throw ConfigError("train: grad_clip_norm must be > 0");
    }
};

// Linear warmup 0 -> lr_max over warmup_steps, then cosine decay to lr_min at
// total_steps. The three anchor points (0, warmup end, total) are exact.
inline double lr_at(long step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.total_steps) {
        throw ValueError("lr_at: step " + std::to_string(step) + " outside [0, " +
                         std::to_string(cfg.total_steps) + "]");
    }
    if (step < cfg.warmup_steps) {
        return cfg.lr_max * (static_cast<double>(step) / static_cast<double>(cfg.warmup_steps));
    }
    if (step == cfg.warmup_steps) return cfg.lr_max;
    if (step == cfg.total_steps) return cfg.lr_min;
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(M_PI * progress));
}

// ---------------------------------------------------------------------------
// AdamW

template <class S>
struct AdamWState {
    std::vector<std::vector<S>> m;
    std::vector<std::vector<S>> v;
    long step = 0;  // completed optimizer steps

    template <class Params>
    static AdamWState init(const Params& params) {
        AdamWState st;
        st.m.reserve(params.size());
        st.v.reserve(params.size());
        for (const auto& [name, t] : params) {
            st.m.emplace_back(t->data.size(), S(0));
            st.v.emplace_back(t->data.size(), S(0));
        }
        return st;
    }
};

inline bool decay_exempt(const std::string& name) {
    return name.find("embedding") != std::string::npos;
}

// Bias-corrected Adam update with decoupled decay:
//   theta <- theta - lr * (mhat / (sqrt(vhat) + eps) + weight_decay * theta)
// Embedding tables are exempt from decay. Bias corrections are recomputed
// from the step count so a resumed run is bit-identical.
template <class S>
void adamw_step(const std::vector<std::pair<std::string, TensorPtr<S>>>& params,
                AdamWState<S>& state, const TrainConfig& hp, double lr) {
    if (state.m.size() != params.size()) {
        throw DimensionError("adamw: state tracks " + std::to_string(state.m.size()) +
                             " tensors, got " + std::to_string(params.size()));
    }
    const long t = state.step + 1;
    const S beta1 = static_cast<S>(hp.beta1);
    const S beta2 = static_cast<S>(hp.beta2);
    const S bc1 = static_cast<S>(1.0 - std::pow(hp.beta1, static_cast<double>(t)));
    const S bc2 = static_cast<S>(1.0 - std::pow(hp.beta2, static_cast<double>(t)));
    const S eps = static_cast<S>(hp.eps);
    const S step_size = static_cast<S>(lr);

    for (size_t pi = 0; pi < params.size(); ++pi) {
        const auto& [name, p] = params[pi];
        p->ensure_grad();
        if (p->grad.size() != state.m[pi].size()) {
            throw DimensionError("adamw: parameter '" + name + "' changed size");
        }
        if (!kernels::all_finite(p->grad.data(), p->numel())) {
            throw NumericError("adamw: non-finite gradient in parameter '" + name + "'");
        }
        const S wd = decay_exempt(name) ? S(0) : static_cast<S>(hp.weight_decay);
        S* theta = p->data.data();
        const S* g = p->grad.data();
        S* m = state.m[pi].data();
        S* v = state.v[pi].data();
        const long n = p->numel();
        for (long i = 0; i < n; ++i) {
            m[i] = beta1 * m[i] + (S(1) - beta1) * g[i];
            v[i] = beta2 * v[i] + (S(1) - beta2) * g[i] * g[i];
            const S mhat = m[i] / bc1;
            const S vhat = v[i] / bc2;
            theta[i] -= step_size * (mhat / (std::sqrt(vhat) + eps) + wd * theta[i]);
        }
    }
    state.step = t;
}

// Scales all gradients so the global L2 norm is at most max_norm.
// Returns the pre-clip norm. The norm accumulates in double either way.
template <class S>
double clip_gradients(const std::vector<std::pair<std::string, TensorPtr<S>>>& params,
                      double max_norm) {
    double sq = 0.0;
    for (const auto& [name, p] : params) {
        p->ensure_grad();
        for (long i = 0; i < p->numel(); ++i) {
            const double gi = static_cast<double>(p->grad[i]);
            sq += gi * gi;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const S scale = static_cast<S>(max_norm / norm);
        for (const auto& [name, p] : params) {
            for (auto& gi : p->grad) gi *= scale;
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalTaskResult {
    std::string task_id;
    int pairs = 0;
    int exact_pairs = 0;
    long masked_positions = 0;
    long correct_positions = 0;
};

struct EvalResult {
    double token_accuracy = 0.0;
    double exact_match = 0.0;
    long masked_positions = 0;
    long correct_positions = 0;
    int pairs = 0;
    int exact_pairs = 0;
    std::vector<EvalTaskResult> per_task;
};

template <class S>
int argmax_row(const TensorT<S>& logits, int row) {
    const int v = logits.shape()[1];
    const S* r = logits.data.data() + static_cast<long>(row) * v;
    int best = 0;
    for (int j = 1; j < v; ++j) {
        if (r[j] > r[best]) best = j;
    }
    return best;
}

// Token accuracy micro-averages over all loss-masked positions; exact match
// counts test pairs whose masked positions are all correct. Inference feeds
// the MASK canvas, never the true outputs.
template <class S>
EvalResult evaluate(const TreeGPTModel<S>& model, const std::vector<data::Task>& tasks) {
    if (tasks.empty()) throw ValueError("evaluate: no tasks");
    EvalResult result;
    for (const auto& task : tasks) {
        EvalTaskResult tr;
        tr.task_id = task.task_id;
        for (const auto& pair : task.test_pairs) {
            const auto ex = data::make_example(pair.input, pair.output, model.config.max_seq_len);
            Graph<S> graph(false);
            const auto fwd = model.forward(graph, ex.input_tokens, ex.pad_mask);
            bool all_correct = true;
            for (size_t i = 0; i < ex.length(); ++i) {
                if (!ex.loss_mask[i]) continue;
                ++tr.masked_positions;
                const int pred = argmax_row(*fwd.logits, static_cast<int>(i));
                if (pred == ex.target_tokens[i]) {
                    ++tr.correct_positions;
                } else {
                    all_correct = false;
                }
            }
            ++tr.pairs;
            if (all_correct) ++tr.exact_pairs;
        }
        result.masked_positions += tr.masked_positions;
        result.correct_positions += tr.correct_positions;
        result.pairs += tr.pairs;
        result.exact_pairs += tr.exact_pairs;
        result.per_task.push_back(std::move(tr));
    }
    if (result.masked_positions > 0) {
        result.token_accuracy = static_cast<double>(result.correct_positions) /
                                static_cast<double>(result.masked_positions);
    }
    if (result.pairs > 0) {
        result.exact_match =
            static_cast<double>(result.exact_pairs) / static_cast<double>(result.pairs);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Training loop

struct MetricsRow {
    long step = 0;
    double lr = 0.0;
    double loss = 0.0;
    bool has_eval = false;
    double token_accuracy = 0.0;
    double exact_match = 0.0;
};

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_metrics_header(std::ostream& os) { os << "step,lr,loss,token_acc,exact_match\n"; }

inline void write_metrics_row(std::ostream& os, const MetricsRow& row) {
    os << row.step << ',' << format_double(row.lr) << ',' << format_double(row.loss) << ',';
    if (row.has_eval) {
        os << format_double(row.token_accuracy) << ',' << format_double(row.exact_match);
    } else {
        os << ',';
    }
    os << '\n';
}

template <class S>
struct TrainState {
    TreeGPTModel<S> model;
    AdamWState<S> optimizer;
    std::mt19937_64 data_rng;
    std::vector<int64_t> permutation;
    int64_t cursor = 0;
    long step = 0;
};

template <class S>
void save_train_checkpoint(const std::string& path, const TrainState<S>& state);

template <class S>
TrainState<S> init_train_state(const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
    train_cfg.validate();
    TrainState<S> state;
    state.model = TreeGPTModel<S>::init(model_cfg, train_cfg.seed);
    state.optimizer = AdamWState<S>::init(state.model.named_parameters());
    state.data_rng.seed(train_cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    return state;
}

struct TrainResult {
    std::vector<MetricsRow> rows;
    double final_loss = 0.0;
    bool has_eval = false;
    EvalResult last_eval;
    double wall_seconds = 0.0;
    long messages_per_step = 0;  // from the last step's forward
};

template <class S>
TrainResult train(TrainState<S>& state, const std::vector<data::TrainingExample>& examples,
                  const std::vector<data::Task>& eval_tasks, const TrainConfig& cfg,
                  std::ostream* metrics_csv = nullptr,
                  const std::string& checkpoint_prefix = "") {
    cfg.validate();
    if (examples.empty()) throw ValueError("train: dataset is empty");
    const auto params = state.model.named_parameters();
    const auto t_start = std::chrono::steady_clock::now();

    if (state.permutation.empty()) {
        state.permutation.resize(examples.size());
        std::iota(state.permutation.begin(), state.permutation.end(), 0);
        std::shuffle(state.permutation.begin(), state.permutation.end(), state.data_rng);
        state.cursor = 0;
    }

    auto next_indices = [&](int count) {
        std::vector<int> indices;
        indices.reserve(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) {
            if (state.cursor >= static_cast<int64_t>(state.permutation.size())) {
                std::shuffle(state.permutation.begin(), state.permutation.end(), state.data_rng);
                state.cursor = 0;
            }
            indices.push_back(static_cast<int>(state.permutation[state.cursor++]));
        }
        return indices;
    };

    TrainResult result;
    for (long step = state.step; step < cfg.total_steps; ++step) {
        const double lr = lr_at(step, cfg);
        const auto indices = next_indices(cfg.batch_size);
        int pad_to = 1;
        for (int idx : indices) {
            pad_to = std::max(pad_to, static_cast<int>(examples[idx].length()));
        }
        const auto batch = data::make_batch(examples, indices, pad_to);

        Graph<S> graph(true);
        TensorPtr<S> loss;
        ForwardResult<S> fwd;
        try {
            fwd = state.model.forward_batch(graph, batch.input_tokens, batch.pad_mask,
                                            batch.batch, batch.seq_len);
            loss = ops::cross_entropy(graph, fwd.logits, batch.target_tokens, batch.loss_mask);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (training step " + std::to_string(step) +
                               ")");
        }
        result.messages_per_step = fwd.messages;

        state.model.zero_grad();
        graph.backward(loss);
        clip_gradients(params, cfg.grad_clip_norm);
        adamw_step(params, state.optimizer, cfg, lr);
        state.step = step + 1;

        MetricsRow row;
        row.step = step;
        row.lr = lr;
        row.loss = static_cast<double>(loss->data[0]);
        const bool eval_now =
            !eval_tasks.empty() && ((cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) ||
                                    step + 1 == cfg.total_steps);
        if (eval_now) {
            const EvalResult eval = evaluate(state.model, eval_tasks);
            row.has_eval = true;
            row.token_accuracy = eval.token_accuracy;
            row.exact_match = eval.exact_match;
            result.last_eval = eval;
            result.has_eval = true;
        }
        result.final_loss = row.loss;
        result.rows.push_back(row);
        if (metrics_csv) write_metrics_row(*metrics_csv, row);

        if (!checkpoint_prefix.empty() && cfg.checkpoint_every > 0 &&
            (step + 1) % cfg.checkpoint_every == 0 && step + 1 != cfg.total_steps) {
            save_train_checkpoint(checkpoint_prefix + "-step" + std::to_string(step + 1) +
                                      ".ckpt",
                                  state);
        }
    }
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

// ---------------------------------------------------------------------------
// Checkpointing of the full training state

template <class S>
void save_train_checkpoint(const std::string& path, const TrainState<S>& state) {
    checkpoint::File file;
    file.meta.emplace_back("precision", checkpoint::dtype_tag<S>());
    checkpoint::put_config_meta(file, state.model.config);
    file.meta.emplace_back("train.step", std::to_string(state.step));
    file.meta.emplace_back("train.optimizer_step", std::to_string(state.optimizer.step));
    file.meta.emplace_back("train.cursor", std::to_string(state.cursor));
    {
        std::ostringstream os;
        os << state.data_rng;
        file.meta.emplace_back("train.data_rng", os.str());
    }
    checkpoint::append_model_tensors(file, state.model);
    const auto params = state.model.named_parameters();
    for (size_t i = 0; i < params.size(); ++i) {
        checkpoint::RawTensor m;
        m.name = "opt.m." + params[i].first;
        m.dtype = checkpoint::dtype_tag<S>();
        m.shape = {static_cast<int>(state.optimizer.m[i].size())};
        m.bytes.resize(state.optimizer.m[i].size() * sizeof(S));
        std::memcpy(m.bytes.data(), state.optimizer.m[i].data(), m.bytes.size());
        file.tensors.push_back(std::move(m));
        checkpoint::RawTensor v;
        v.name = "opt.v." + params[i].first;
        v.dtype = checkpoint::dtype_tag<S>();
        v.shape = {static_cast<int>(state.optimizer.v[i].size())};
        v.bytes.resize(state.optimizer.v[i].size() * sizeof(S));
        std::memcpy(v.bytes.data(), state.optimizer.v[i].data(), v.bytes.size());
        file.tensors.push_back(std::move(v));
    }
    if (!state.permutation.empty()) {
        file.tensors.push_back(checkpoint::pack_i64("train.permutation", state.permutation));
    }
    checkpoint::write_file(path, file);
}

template <class S>
TrainState<S> load_train_checkpoint(const std::string& path) {
    const checkpoint::File file = checkpoint::read_file(path);
    TrainState<S> state;
    state.model = checkpoint::load_model<S>(file);
    const auto params = state.model.named_parameters();
    state.optimizer = AdamWState<S>::init(params);
    auto get = [&](const std::string& key) -> const std::string& {
        const std::string* v = file.find_meta(key);
        if (!v) {
            throw CheckpointTruncatedError("checkpoint: missing training key '" + key + "'");
        }
        return *v;
    };
    state.step = std::stol(get("train.step"));
    state.optimizer.step = std::stol(get("train.optimizer_step"));
    state.cursor = std::stol(get("train.cursor"));
    {
        std::istringstream is(get("train.data_rng"));
        is >> state.data_rng;
        if (!is) throw CheckpointTruncatedError("checkpoint: malformed data_rng state");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        const auto* m = file.find_tensor("opt.m." + params[i].first);
        const auto* v = file.find_tensor("opt.v." + params[i].first);
        if (!m || !v) {
            throw CheckpointTruncatedError("checkpoint: missing optimizer state for '" +
                                           params[i].first + "'");
        }
        if (m->bytes.size() != state.optimizer.m[i].size() * sizeof(S) ||
            v->bytes.size() != state.optimizer.v[i].size() * sizeof(S)) {
            throw CheckpointShapeError("checkpoint: optimizer state for '" + params[i].first +
                                       "' has the wrong size");
        }
        std::memcpy(state.optimizer.m[i].data(), m->bytes.data(), m->bytes.size());
        std::memcpy(state.optimizer.v[i].data(), v->bytes.data(), v->bytes.size());
    }
    if (const auto* perm = file.find_tensor("train.permutation")) {
        state.permutation = checkpoint::unpack_i64(*perm);
    }
    return state;
}

}  // namespace treegpt
