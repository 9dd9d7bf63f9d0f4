#pragma once

// TreeGPT: token + position embeddings, L layers of bidirectional TreeFFN
// cells (forward-edge encoder, backward-edge decoder), and a linear output
// head. No attention anywhere.
//
// Two layer combinations exist. Sequential folds the encoder update into the
// states before the decoder runs; parallel computes both cells from the same
// states and adds both deltas. Sequential is the default.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "treegpt/errors.hpp"
#include "treegpt/ops.hpp"
#include "treegpt/tensor.hpp"
#include "treegpt/treeffn.hpp"

namespace treegpt {

enum class CombinationMode { Sequential, Parallel };

inline std::string to_string(CombinationMode m) {
    return m == CombinationMode::Sequential ? "sequential" : "parallel";
}

inline CombinationMode combination_from_string(const std::string& s) {
    if (s == "sequential") return CombinationMode::Sequential;
    if (s == "parallel") return CombinationMode::Parallel;
    throw ConfigError("unknown combination mode '" + s + "' (sequential|parallel)");
}

struct ModelConfig {
    int vocab_size = 16;
    int max_seq_len = 2048;
    int num_layers = 2;
    bool use_position_embedding = true;
    CombinationMode combination = CombinationMode::Sequential;
    TreeFFNConfig treeffn;

    int hidden_dim() const { return treeffn.hidden_dim; }

    bool operator==(const ModelConfig&) const = default;

    void validate() const {
        if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
        if (num_layers < 1) throw ConfigError("model: num_layers must be >= 1");
        if (max_seq_len < 2) throw ConfigError("model: max_seq_len must be >= 2");
        treeffn.validate();
    }
};

// Closed-form parameter count, kept independent of the allocation code so the
// walk-the-weights oracle in the tests has something to disagree with.
inline long parameter_count(const ModelConfig& cfg) {
    const long d = cfg.hidden_dim();
    const long e = cfg.treeffn.edge_dim;
    const long h = cfg.treeffn.message_hidden_dim();
    const long v = cfg.vocab_size;
    const long cell = e                    // edge embedding
                      + e * e + e          // edge projection
                      + (2 * d + e) * h + h  // message MLP in
                      + h * d + d          // message MLP out
                      + 2 * d * d + d;     // gate
    return v * d                           // token embedding
           + static_cast<long>(cfg.max_seq_len) * d  // position embedding
           + 2 * cfg.num_layers * cell
           + d * v + v;                    // output head
}

// Messages computed by one full forward over an unpadded length-n sequence:
// 2 cells per layer, iterations messages rounds each, n-1 edges per round.
inline long count_messages(const ModelConfig& cfg, int n) {
    if (n < 1) throw ValueError("count_messages: n must be >= 1");
    return 2L * cfg.num_layers * cfg.treeffn.iterations * (n - 1);
}

template <class S>
struct ForwardResult {
    TensorPtr<S> logits;  // [batch*seq_len x vocab]
    long messages = 0;
};

template <class S>
struct LayerWeights {
    TreeFFNWeights<S> encoder;
    TreeFFNWeights<S> decoder;
};

template <class S>
class TreeGPTModel {
  public:
    ModelConfig config;
    TensorPtr<S> token_embedding;     // [V x d]
    TensorPtr<S> position_embedding;  // [max_seq_len x d]
    std::vector<LayerWeights<S>> layers;
    Linear<S> output_head;  // d -> V

    // Parameters are created and initialized in a fixed order from a single
    // stream, so two models with the same config shapes and seed are
    // identical regardless of component flags.
    static TreeGPTModel init(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        TreeGPTModel m;
        m.config = cfg;
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> emb(0.0, 0.02);
        const int d = cfg.hidden_dim();
        m.token_embedding = TensorT<S>::zeros({cfg.vocab_size, d}, true);
        for (auto& x : m.token_embedding->data) x = static_cast<S>(emb(rng));
        m.position_embedding = TensorT<S>::zeros({cfg.max_seq_len, d}, true);
        for (auto& x : m.position_embedding->data) x = static_cast<S>(emb(rng));
        m.layers.reserve(static_cast<size_t>(cfg.num_layers));
        for (int l = 0; l < cfg.num_layers; ++l) {
            LayerWeights<S> lw;
            lw.encoder = TreeFFNWeights<S>::init(cfg.treeffn, rng);
            lw.decoder = TreeFFNWeights<S>::init(cfg.treeffn, rng);
            m.layers.push_back(std::move(lw));
        }
        m.output_head = Linear<S>::init(d, cfg.vocab_size, rng);
        return m;
    }

    std::vector<std::pair<std::string, TensorPtr<S>>> named_parameters() const {
        std::vector<std::pair<std::string, TensorPtr<S>>> out;
        out.emplace_back("token_embedding", token_embedding);
        out.emplace_back("position_embedding", position_embedding);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string base = "layer" + std::to_string(l);
            layers[l].encoder.for_each_param(
                base + ".encoder",
                [&](const std::string& n, const TensorPtr<S>& t) { out.emplace_back(n, t); });
            layers[l].decoder.for_each_param(
                base + ".decoder",
                [&](const std::string& n, const TensorPtr<S>& t) { out.emplace_back(n, t); });
        }
        out.emplace_back("output_head.w", output_head.w);
        out.emplace_back("output_head.b", output_head.b);
        return out;
    }

    long parameter_count_actual() const {
        long total = 0;
        for (const auto& [name, t] : named_parameters()) total += t->numel();
        return total;
    }

    void zero_grad() const {
        for (const auto& [name, t] : named_parameters()) t->zero_grad();
    }

    // tokens/pad_mask are row-major [batch x seq_len]. Within a batch, edges
    // only ever connect positions of the same sequence, so the whole batch
    // runs as one node set with a block-diagonal edge list.
    ForwardResult<S> forward_batch(Graph<S>& g, const std::vector<int>& tokens,
                                   const std::vector<uint8_t>& pad_mask, int batch,
                                   int seq_len) const {
        if (batch < 1 || seq_len < 1 ||
            tokens.size() != static_cast<size_t>(batch) * static_cast<size_t>(seq_len) ||
            pad_mask.size() != tokens.size()) {
            throw DimensionError("forward: tokens/pad sizes do not match batch " +
                                 std::to_string(batch) + " x seq_len " +
                                 std::to_string(seq_len));
        }
        if (seq_len > config.max_seq_len) {
            throw ValueError("forward: sequence length " + std::to_string(seq_len) +
                             " exceeds max_seq_len " + std::to_string(config.max_seq_len));
        }
        for (int id : tokens) {
            if (id < 0 || id >= config.vocab_size) {
                throw ValueError("forward: token id " + std::to_string(id) +
                                 " outside vocabulary of size " +
                                 std::to_string(config.vocab_size));
            }
        }

        auto h = ops::gather_rows(g, token_embedding, tokens);
        if (config.use_position_embedding) {
            std::vector<int> positions(tokens.size());
            for (int s = 0; s < batch; ++s) {
                for (int i = 0; i < seq_len; ++i) {
                    positions[static_cast<size_t>(s) * seq_len + i] = i;
                }
            }
            h = ops::add(g, h, ops::gather_rows(g, position_embedding, positions));
        }

        const auto enc_edges = batch_edges(pad_mask, batch, seq_len, EdgeDirection::Forward);
        const auto dec_edges = batch_edges(pad_mask, batch, seq_len, EdgeDirection::Backward);

        ForwardResult<S> result;
        for (const auto& layer : layers) {
            if (config.combination == CombinationMode::Sequential) {
                auto enc = treeffn_forward_edges(g, h, enc_edges, layer.encoder, config.treeffn);
                result.messages += enc.messages;
                h = enc.states;
                auto dec = treeffn_forward_edges(g, h, dec_edges, layer.decoder, config.treeffn);
                result.messages += dec.messages;
                h = dec.states;
            } else {
                auto enc = treeffn_forward_edges(g, h, enc_edges, layer.encoder, config.treeffn);
                auto dec = treeffn_forward_edges(g, h, dec_edges, layer.decoder, config.treeffn);
                result.messages += enc.messages + dec.messages;
                h = ops::add(g, ops::add(g, h, enc.delta), dec.delta);
            }
        }
        result.logits = output_head.apply(g, h);
        return result;
    }

    ForwardResult<S> forward(Graph<S>& g, const std::vector<int>& tokens,
                             const std::vector<uint8_t>& pad_mask) const {
        return forward_batch(g, tokens, pad_mask, 1, static_cast<int>(tokens.size()));
    }

    ForwardResult<S> forward(Graph<S>& g, const std::vector<int>& tokens) const {
        return forward(g, tokens, std::vector<uint8_t>(tokens.size(), 1));
    }

  private:
    static std::vector<std::pair<int, int>> batch_edges(const std::vector<uint8_t>& pad_mask,
                                                        int batch, int seq_len,
                                                        EdgeDirection direction) {
        std::vector<std::pair<int, int>> edges;
        if (seq_len > 1) edges.reserve(static_cast<size_t>(batch) * (seq_len - 1));
        const EdgeSet base = build_edges(seq_len, direction);
        for (int s = 0; s < batch; ++s) {
            const int offset = s * seq_len;
            for (auto [src, dst] : base.edges) {
                if (pad_mask[offset + src] && pad_mask[offset + dst]) {
                    edges.emplace_back(offset + src, offset + dst);
                }
            }
        }
        return edges;
    }
};

}  // namespace treegpt
