#pragma once

// The TreeFFN cell: message passing along directed adjacent connections of a
// token chain, iterated a fixed number of times. Three components can be
// toggled independently for ablation:
//
//   edge projection  - learned linear map applied to the edge feature before
//                      it enters the message MLP; off feeds the raw feature
//   gated aggregation - sigmoid gate computed from the endpoint states,
//                      multiplied into each message; off sums messages as-is
//   residual         - each iteration re-anchors the state to the cell input
//                      (state = input + update); off chains additively
//                      (state = previous + update)
//
// Messages on edge (u, v) update node v. Within one iteration all messages
// are computed from the pre-iteration states before any state changes
// (synchronous update), so the pass is order-independent and every message
// is independently computable in parallel.
//
// Edge features carry no per-pair data on a chain; each cell owns one
// learned feature vector shared by all of its edges.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "treegpt/errors.hpp"
#include "treegpt/ops.hpp"
#include "treegpt/tensor.hpp"

namespace treegpt {

enum class EdgeDirection { Forward, Backward };

struct EdgeSet {
    EdgeDirection direction = EdgeDirection::Forward;
    std::vector<std::pair<int, int>> edges;  // (source, target)
};

// Forward: {(i, i+1) : 0 <= i <= n-2}, ascending.
// Backward: {(i, i-1) : n-1 >= i >= 1}, descending. n = 1 gives no edges.
inline EdgeSet build_edges(int n, EdgeDirection direction) {
    if (n < 1) throw ValueError("build_edges: sequence length must be >= 1");
    EdgeSet set;
    set.direction = direction;
    if (n > 1) set.edges.reserve(static_cast<size_t>(n) - 1);
    if (direction == EdgeDirection::Forward) {
        for (int i = 0; i + 1 < n; ++i) set.edges.emplace_back(i, i + 1);
    } else {
        for (int i = n - 1; i >= 1; --i) set.edges.emplace_back(i, i - 1);
    }
    return set;
}

struct TreeFFNConfig {
    int hidden_dim = 256;
    int edge_dim = 64;
    int iterations = 2;
    bool use_edge_projection = true;
    bool use_gating = true;
    bool use_residual = true;

    // Width of the message MLP's hidden layer.
    int message_hidden_dim() const { return 2 * hidden_dim; }

    bool operator==(const TreeFFNConfig&) const = default;

    void validate() const {
        if (hidden_dim < 1 || edge_dim < 1) {
            throw ConfigError("treeffn: dims must be >= 1");
        }
        if (iterations < 1) throw ConfigError("treeffn: iterations must be >= 1");
    }
};

template <class S>
struct Linear {
    TensorPtr<S> w;  // [in x out]
    TensorPtr<S> b;  // [out]

    static Linear init(int in, int out, std::mt19937_64& rng) {
        Linear l;
        l.w = TensorT<S>::zeros({in, out}, true);
        l.b = TensorT<S>::zeros({out}, true);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& x : l.w->data) x = static_cast<S>(dist(rng));
        return l;
    }

    TensorPtr<S> apply(Graph<S>& g, const TensorPtr<S>& x) const {
        return ops::add(g, ops::matmul(g, x, w), b);
    }
};

// All tensors are allocated regardless of the component flags so that every
// ablation variant draws the identical initialization stream; disabled
// components simply never touch their weights in the forward pass.
template <class S>
struct TreeFFNWeights {
    TensorPtr<S> edge_embedding;  // [edge_dim]
    Linear<S> edge_projection;    // edge_dim -> edge_dim
    Linear<S> message_in;         // (2d + edge_dim) -> 2d
    Linear<S> message_out;        // 2d -> d
    Linear<S> gate;               // 2d -> d

    static TreeFFNWeights init(const TreeFFNConfig& cfg, std::mt19937_64& rng) {
        cfg.validate();
        TreeFFNWeights w;
        const int d = cfg.hidden_dim, e = cfg.edge_dim, h = cfg.message_hidden_dim();
        w.edge_embedding = TensorT<S>::zeros({e}, true);
        std::normal_distribution<double> emb(0.0, 0.02);
        for (auto& x : w.edge_embedding->data) x = static_cast<S>(emb(rng));
        w.edge_projection = Linear<S>::init(e, e, rng);
        w.message_in = Linear<S>::init(2 * d + e, h, rng);
        w.message_out = Linear<S>::init(h, d, rng);
        w.gate = Linear<S>::init(2 * d, d, rng);
        return w;
    }

    template <class Fn>
    void for_each_param(const std::string& prefix, Fn&& fn) const {
        fn(prefix + ".edge_embedding", edge_embedding);
        fn(prefix + ".edge_projection.w", edge_projection.w);
        fn(prefix + ".edge_projection.b", edge_projection.b);
        fn(prefix + ".message_in.w", message_in.w);
        fn(prefix + ".message_in.b", message_in.b);
        fn(prefix + ".message_out.w", message_out.w);
        fn(prefix + ".message_out.b", message_out.b);
        fn(prefix + ".gate.w", gate.w);
        fn(prefix + ".gate.b", gate.b);
    }
};

namespace detail {

// Edge feature fed to the message MLP: projected or raw per the flag.
template <class S>
TensorPtr<S> edge_feature(Graph<S>& g, const TreeFFNWeights<S>& w, const TreeFFNConfig& cfg) {
    if (!cfg.use_edge_projection) return w.edge_embedding;
    auto row = ops::reshape(g, w.edge_embedding, {1, cfg.edge_dim});
    return ops::reshape(g, w.edge_projection.apply(g, row), {cfg.edge_dim});
}

// Batched messages for all edges: MLP([h_src ; h_dst ; e]) with an optional
// sigmoid gate computed from (h_dst, h_src) — the receiving node first.
template <class S>
TensorPtr<S> edge_messages(Graph<S>& g, const TensorPtr<S>& states,
                           const std::vector<int>& srcs, const std::vector<int>& dsts,
                           const TensorPtr<S>& feature_rows, const TreeFFNWeights<S>& w,
                           const TreeFFNConfig& cfg) {
    auto h_src = ops::gather_rows(g, states, srcs);
    auto h_dst = ops::gather_rows(g, states, dsts);
    auto mlp_in = ops::concat(g, {h_src, h_dst, feature_rows}, 1);
    auto hidden = ops::relu(g, w.message_in.apply(g, mlp_in));
    auto messages = w.message_out.apply(g, hidden);
    if (cfg.use_gating) {
        auto gate_in = ops::concat(g, {h_dst, h_src}, 1);
        auto gates = ops::sigmoid(g, w.gate.apply(g, gate_in));
        messages = ops::mul(g, gates, messages);
    }
    return messages;
}

}  // namespace detail

template <class S>
struct TreeFFNResult {
    TensorPtr<S> states;  // [N x d] updated node states
    TensorPtr<S> delta;   // [N x d] states - input, tracked exactly
    long messages = 0;    // message computations performed
};

// Core cell over an explicit (already masked) edge list. The input rows of
// padded or unreached positions pass through bit-identically because the
// delta never touches them.
template <class S>
TreeFFNResult<S> treeffn_forward_edges(Graph<S>& g, const TensorPtr<S>& input,
                                       const std::vector<std::pair<int, int>>& edges,
                                       const TreeFFNWeights<S>& w, const TreeFFNConfig& cfg) {
    cfg.validate();
    if (input->rank() != 2 || input->shape()[1] != cfg.hidden_dim) {
        throw DimensionError("treeffn: input " + shape_str(input->shape()) +
                             " does not match hidden_dim " + std::to_string(cfg.hidden_dim));
    }
    const int n = input->shape()[0];

    TreeFFNResult<S> result;
    if (edges.empty()) {
        result.states = input;
        result.delta = TensorT<S>::zeros({n, cfg.hidden_dim});
        return result;
    }

    std::vector<int> srcs(edges.size()), dsts(edges.size());
    for (size_t i = 0; i < edges.size(); ++i) {
        srcs[i] = edges[i].first;
        dsts[i] = edges[i].second;
    }

    // The edge feature is iteration-invariant; compute it once per call.
    auto feature = detail::edge_feature(g, w, cfg);
    auto feature_rows = ops::broadcast_row(g, feature, static_cast<int>(edges.size()));

    TensorPtr<S> states = input;
    TensorPtr<S> delta;
    for (int t = 0; t < cfg.iterations; ++t) {
        TensorPtr<S> messages;
        try {
            messages = detail::edge_messages(g, states, srcs, dsts, feature_rows, w, cfg);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (treeffn iteration " +
                               std::to_string(t) + ")");
        }
        auto update = ops::scatter_rows(g, n, dsts, messages);
        if (cfg.use_residual || !delta) {
            delta = update;
        } else {
            delta = ops::add(g, delta, update);
        }
        states = ops::add(g, input, delta);
        result.messages += static_cast<long>(edges.size());
    }
    result.states = states;
    result.delta = delta;
    return result;
}

// Spec-level entry: builds from an EdgeSet and a padding mask. Edges touching
// a padded position are dropped before any message is computed.
template <class S>
TreeFFNResult<S> treeffn_forward(Graph<S>& g, const TensorPtr<S>& input, const EdgeSet& edge_set,
                                 const TreeFFNWeights<S>& w, const TreeFFNConfig& cfg,
                                 const std::vector<uint8_t>& pad_mask) {
    const int n = input->shape()[0];
    if (static_cast<int>(pad_mask.size()) != n) {
        throw DimensionError("treeffn: pad mask length " + std::to_string(pad_mask.size()) +
                             " for input " + shape_str(input->shape()));
    }
    std::vector<std::pair<int, int>> live;
    live.reserve(edge_set.edges.size());
    for (auto [src, dst] : edge_set.edges) {
        if (src < 0 || src >= n || dst < 0 || dst >= n) {
            throw ValueError("treeffn: edge (" + std::to_string(src) + ", " +
                             std::to_string(dst) + ") out of range for n=" + std::to_string(n));
        }
        if (pad_mask[src] && pad_mask[dst]) live.emplace_back(src, dst);
    }
    return treeffn_forward_edges(g, input, live, w, cfg);
}

template <class S>
TreeFFNResult<S> treeffn_forward(Graph<S>& g, const TensorPtr<S>& input, const EdgeSet& edge_set,
                                 const TreeFFNWeights<S>& w, const TreeFFNConfig& cfg) {
    std::vector<uint8_t> all_real(static_cast<size_t>(input->shape()[0]), 1);
    return treeffn_forward(g, input, edge_set, w, cfg, all_real);
}

// Single-edge message, mostly useful for tests and hand evaluation:
// MLP([h_src ; h_dst ; e]) for one edge, returning a rank-1 vector.
template <class S>
TensorPtr<S> message(Graph<S>& g, const TensorPtr<S>& h_src, const TensorPtr<S>& h_dst,
                     const TreeFFNWeights<S>& w, const TreeFFNConfig& cfg) {
    if (h_src->rank() != 1 || h_dst->rank() != 1 || h_src->shape()[0] != cfg.hidden_dim ||
        h_dst->shape()[0] != cfg.hidden_dim) {
        throw DimensionError("message: endpoint states must be rank-1 of dim " +
                             std::to_string(cfg.hidden_dim) + ", got " +
                             shape_str(h_src->shape()) + " and " + shape_str(h_dst->shape()));
    }
    auto feature = detail::edge_feature(g, w, cfg);
    auto s = ops::reshape(g, h_src, {1, cfg.hidden_dim});
    auto d = ops::reshape(g, h_dst, {1, cfg.hidden_dim});
    auto f = ops::reshape(g, feature, {1, cfg.edge_dim});
    auto mlp_in = ops::concat(g, {s, d, f}, 1);
    auto hidden = ops::relu(g, w.message_in.apply(g, mlp_in));
    auto out = w.message_out.apply(g, hidden);
    return ops::reshape(g, out, {cfg.hidden_dim});
}

// Gated sum of the messages arriving at one node. h_sources must align with
// messages one-to-one. An empty message list yields the zero vector.
template <class S>
TensorPtr<S> aggregate(Graph<S>& g, const std::vector<TensorPtr<S>>& messages,
                       const TensorPtr<S>& h_node, const std::vector<TensorPtr<S>>& h_sources,
                       const TreeFFNWeights<S>& w, const TreeFFNConfig& cfg) {
    if (messages.size() != h_sources.size()) {
        throw DimensionError("aggregate: " + std::to_string(messages.size()) + " messages vs " +
                             std::to_string(h_sources.size()) + " source states");
    }
    auto acc = TensorT<S>::zeros({cfg.hidden_dim});
    TensorPtr<S> out = acc;
    for (size_t i = 0; i < messages.size(); ++i) {
        TensorPtr<S> m = messages[i];
        if (cfg.use_gating) {
            auto node_row = ops::reshape(g, h_node, {1, cfg.hidden_dim});
            auto src_row = ops::reshape(g, h_sources[i], {1, cfg.hidden_dim});
            auto gate_in = ops::concat(g, {node_row, src_row}, 1);
            auto gate = ops::sigmoid(g, w.gate.apply(g, gate_in));
            m = ops::mul(g, ops::reshape(g, gate, {cfg.hidden_dim}), m);
        }
        out = ops::add(g, out, m);
    }
    return out;
}

}  // namespace treegpt
