#pragma once

// Line-by-line scalar transcription of the bidirectional TreeFFN
// encoder-decoder forward pass, written with plain loops and no tensor or
// tape machinery. It exists so the production forward can be checked
// bit-for-bit against an independent, transparent rendering of the
// algorithm:
//
//   H <- token embedding + position embedding
//   for each layer:
//       E_enc <- {(i, i+1) : i = 0..N-2}
//       H_enc <- TreeFFN(H, E_enc)        // forward chain, T iterations
//       H     <- H + H_enc
//       E_dec <- {(i, i-1) : i = N-1..1}
//       H_dec <- TreeFFN(H, E_dec)        // backward chain, T iterations
//       H     <- H + H_dec
//   logits <- H * W_head + b_head
//
// where TreeFFN(H, E) returns the accumulated per-node update (the delta).
// Floating-point operations deliberately mirror the production kernel
// evaluation order: every dot product runs over the inner index ascending,
// biases are added after the full product, and states are re-formed as
// input + delta each iteration.

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "treegpt/model.hpp"

namespace reference {

using treegpt::ModelConfig;
using treegpt::TreeGPTModel;

struct Cell {
    const std::vector<double>* edge_embedding;
    const std::vector<double>* proj_w;
    const std::vector<double>* proj_b;
    const std::vector<double>* w1;
    const std::vector<double>* b1;
    const std::vector<double>* w2;
    const std::vector<double>* b2;
    const std::vector<double>* gate_w;
    const std::vector<double>* gate_b;
};

inline Cell cell_view(const treegpt::TreeFFNWeights<double>& w) {
    return {&w.edge_embedding->data, &w.edge_projection.w->data, &w.edge_projection.b->data,
            &w.message_in.w->data,   &w.message_in.b->data,      &w.message_out.w->data,
            &w.message_out.b->data,  &w.gate.w->data,            &w.gate.b->data};
}

inline double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y[j] = sum_p x[p] * w[p][j], then + b[j]
inline void ref_linear(const std::vector<double>& x, const std::vector<double>& w,
                       const std::vector<double>& b, int in, int out, std::vector<double>& y) {
    y.assign(static_cast<size_t>(out), 0.0);
    for (int p = 0; p < in; ++p) {
        const double xp = x[static_cast<size_t>(p)];
        for (int j = 0; j < out; ++j) y[static_cast<size_t>(j)] += xp * w[static_cast<size_t>(p) * out + j];
    }
    for (int j = 0; j < out; ++j) y[static_cast<size_t>(j)] += b[static_cast<size_t>(j)];
}

// Returns the accumulated update (delta) of one TreeFFN application over the
// given edge list. states is H at call time; both are [n x d] row-major.
inline std::vector<double> ref_treeffn_delta(const std::vector<double>& input, int n,
                                             const Cell& cell,
                                             const std::vector<std::pair<int, int>>& edges,
                                             const treegpt::TreeFFNConfig& cfg) {
    const int d = cfg.hidden_dim;
    const int e = cfg.edge_dim;
    const int h = cfg.message_hidden_dim();

    std::vector<double> delta(static_cast<size_t>(n) * d, 0.0);
    if (edges.empty()) return delta;

    // Edge feature, projected once per call when enabled.
    std::vector<double> feature(*cell.edge_embedding);
    if (cfg.use_edge_projection) {
        std::vector<double> projected;
        ref_linear(*cell.edge_embedding, *cell.proj_w, *cell.proj_b, e, e, projected);
        feature = projected;
    }

    std::vector<double> states = input;
    std::vector<double> mlp_in(static_cast<size_t>(2 * d + e));
    std::vector<double> hidden, msg, gate_in(static_cast<size_t>(2 * d)), gate;
    bool first = true;
    for (int t = 0; t < cfg.iterations; ++t) {
        std::vector<double> update(static_cast<size_t>(n) * d, 0.0);
        for (const auto& [src, dst] : edges) {
            // message input: [h_src ; h_dst ; feature]
            for (int c = 0; c < d; ++c) mlp_in[static_cast<size_t>(c)] = states[static_cast<size_t>(src) * d + c];
            for (int c = 0; c < d; ++c) mlp_in[static_cast<size_t>(d + c)] = states[static_cast<size_t>(dst) * d + c];
            for (int c = 0; c < e; ++c) mlp_in[static_cast<size_t>(2 * d + c)] = feature[static_cast<size_t>(c)];
            ref_linear(mlp_in, *cell.w1, *cell.b1, 2 * d + e, h, hidden);
            for (auto& v : hidden) v = v > 0.0 ? v : 0.0;
            ref_linear(hidden, *cell.w2, *cell.b2, h, d, msg);
            if (cfg.use_gating) {
                // gate input: [h_dst ; h_src], the receiving node first
                for (int c = 0; c < d; ++c) gate_in[static_cast<size_t>(c)] = states[static_cast<size_t>(dst) * d + c];
                for (int c = 0; c < d; ++c) gate_in[static_cast<size_t>(d + c)] = states[static_cast<size_t>(src) * d + c];
                ref_linear(gate_in, *cell.gate_w, *cell.gate_b, 2 * d, d, gate);
                for (int c = 0; c < d; ++c) msg[static_cast<size_t>(c)] = ref_sigmoid(gate[static_cast<size_t>(c)]) * msg[static_cast<size_t>(c)];
            }
            for (int c = 0; c < d; ++c) update[static_cast<size_t>(dst) * d + c] += msg[static_cast<size_t>(c)];
        }
        if (cfg.use_residual || first) {
            delta = update;
            first = false;
        } else {
            for (size_t i = 0; i < delta.size(); ++i) delta[i] += update[i];
        }
        for (size_t i = 0; i < states.size(); ++i) states[i] = input[i] + delta[i];
    }
    return delta;
}

// Full forward pass: embeddings, layers, output head. Returns row-major
// [n x vocab] logits.
inline std::vector<double> ref_forward(const TreeGPTModel<double>& model,
                                       const std::vector<int>& tokens) {
    const ModelConfig& cfg = model.config;
    const int n = static_cast<int>(tokens.size());
    const int d = cfg.hidden_dim();

    std::vector<double> h(static_cast<size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < d; ++c) {
            double v = model.token_embedding->data[static_cast<size_t>(tokens[static_cast<size_t>(i)]) * d + c];
            if (cfg.use_position_embedding) {
                v += model.position_embedding->data[static_cast<size_t>(i) * d + c];
            }
            h[static_cast<size_t>(i) * d + c] = v;
        }
    }

    std::vector<std::pair<int, int>> enc_edges, dec_edges;
    for (int i = 0; i + 1 < n; ++i) enc_edges.emplace_back(i, i + 1);
    for (int i = n - 1; i >= 1; --i) dec_edges.emplace_back(i, i - 1);

    for (const auto& layer : model.layers) {
        if (cfg.combination == treegpt::CombinationMode::Sequential) {
            const auto h_enc =
                ref_treeffn_delta(h, n, cell_view(layer.encoder), enc_edges, cfg.treeffn);
            for (size_t i = 0; i < h.size(); ++i) h[i] = h[i] + h_enc[i];
            const auto h_dec =
                ref_treeffn_delta(h, n, cell_view(layer.decoder), dec_edges, cfg.treeffn);
            for (size_t i = 0; i < h.size(); ++i) h[i] = h[i] + h_dec[i];
        } else {
            const auto h_enc =
                ref_treeffn_delta(h, n, cell_view(layer.encoder), enc_edges, cfg.treeffn);
            const auto h_dec =
                ref_treeffn_delta(h, n, cell_view(layer.decoder), dec_edges, cfg.treeffn);
            for (size_t i = 0; i < h.size(); ++i) h[i] = (h[i] + h_enc[i]) + h_dec[i];
        }
    }

    const int v = cfg.vocab_size;
    std::vector<double> logits(static_cast<size_t>(n) * v, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int p = 0; p < d; ++p) {
            const double hp = h[static_cast<size_t>(i) * d + p];
            for (int j = 0; j < v; ++j) {
                logits[static_cast<size_t>(i) * v + j] += hp * model.output_head.w->data[static_cast<size_t>(p) * v + j];
            }
        }
        for (int j = 0; j < v; ++j) logits[static_cast<size_t>(i) * v + j] += model.output_head.b->data[static_cast<size_t>(j)];
    }
    return logits;
}

}  // namespace reference
