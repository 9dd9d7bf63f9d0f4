#pragma once

// Versioned checkpoint container: a text header (format version, ordered
// key/value metadata, tensor manifest with name/dtype/shape/byte offset)
// followed by raw little-endian tensor bytes. Writing is deterministic, so
// save -> load -> save reproduces the file byte for byte.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "treegpt/errors.hpp"
#include "treegpt/model.hpp"

namespace treegpt::checkpoint {

inline constexpr const char* kMagic = "treegpt-checkpoint";
inline constexpr int kVersion = 1;

struct RawTensor {
    std::string name;
    std::string dtype;  // f32 | f64 | i64
    std::vector<int> shape;
    std::vector<unsigned char> bytes;

    long numel() const {
        long n = 1;
        for (int d : shape) n *= d;
        return n;
    }
};

struct File {
    std::vector<std::pair<std::string, std::string>> meta;  // ordered
    std::vector<RawTensor> tensors;

    const std::string* find_meta(const std::string& key) const {
        for (const auto& [k, v] : meta) {
            if (k == key) return &v;
        }
        return nullptr;
    }
    const RawTensor* find_tensor(const std::string& name) const {
        for (const auto& t : tensors) {
            if (t.name == name) return &t;
        }
        return nullptr;
    }
};

inline size_t dtype_size(const std::string& dtype) {
    if (dtype == "f32") return 4;
    if (dtype == "f64") return 8;
    if (dtype == "i64") return 8;
    throw CheckpointVersionError("checkpoint: unknown dtype '" + dtype + "'");
}

template <class S>
const char* dtype_tag() {
    if constexpr (sizeof(S) == 4) {
        return "f32";
    } else {
        return "f64";
    }
}

template <class S>
RawTensor pack_tensor(const std::string& name, const TensorT<S>& t) {
    RawTensor raw;
    raw.name = name;
    raw.dtype = dtype_tag<S>();
    raw.shape = t.shape();
    raw.bytes.resize(t.data.size() * sizeof(S));
    std::memcpy(raw.bytes.data(), t.data.data(), raw.bytes.size());
    return raw;
}

inline RawTensor pack_i64(const std::string& name, const std::vector<int64_t>& values) {
    RawTensor raw;
    raw.name = name;
    raw.dtype = "i64";
    raw.shape = {static_cast<int>(values.size())};
    raw.bytes.resize(values.size() * sizeof(int64_t));
    std::memcpy(raw.bytes.data(), values.data(), raw.bytes.size());
    return raw;
}

inline std::vector<int64_t> unpack_i64(const RawTensor& raw) {
    if (raw.dtype != "i64") {
        throw CheckpointShapeError("checkpoint: tensor '" + raw.name + "' has dtype " +
                                   raw.dtype + ", expected i64");
    }
    std::vector<int64_t> values(raw.bytes.size() / sizeof(int64_t));
    std::memcpy(values.data(), raw.bytes.data(), raw.bytes.size());
    return values;
}

// Copies raw bytes into an existing tensor, enforcing dtype and shape.
template <class S>
void unpack_into(const RawTensor& raw, TensorT<S>& t) {
    if (raw.dtype != dtype_tag<S>()) {
        throw CheckpointShapeError("checkpoint: tensor '" + raw.name + "' has dtype " +
                                   raw.dtype + ", expected " + dtype_tag<S>());
    }
    if (raw.shape != t.shape()) {
        throw CheckpointShapeError("checkpoint: tensor '" + raw.name + "' has shape " +
                                   shape_str(raw.shape) + ", expected " + shape_str(t.shape()));
    }
    if (raw.bytes.size() != t.data.size() * sizeof(S)) {
        throw CheckpointTruncatedError("checkpoint: tensor '" + raw.name +
                                       "' carries the wrong number of bytes");
    }
    std::memcpy(t.data.data(), raw.bytes.data(), raw.bytes.size());
}

inline void write_file(const std::string& path, const File& file) {
    std::ostringstream header;
    header << kMagic << " v" << kVersion << "\n";
    header << "meta " << file.meta.size() << "\n";
    for (const auto& [k, v] : file.meta) header << k << " " << v << "\n";
    header << "tensors " << file.tensors.size() << "\n";
    size_t offset = 0;
    for (const auto& t : file.tensors) {
        header << t.name << " " << t.dtype << " " << t.shape.size();
        for (int d : t.shape) header << " " << d;
        header << " " << offset << " " << t.bytes.size() << "\n";
        offset += t.bytes.size();
    }
    header << "end\n";

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& t : file.tensors) {
        out.write(reinterpret_cast<const char*>(t.bytes.data()),
                  static_cast<std::streamsize>(t.bytes.size()));
    }
    out.flush();
    if (!out) throw IoError("checkpoint: write to '" + path + "' failed");
}

inline File read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw CheckpointTruncatedError("checkpoint: empty file");
    {
        std::istringstream ls(line);
        std::string magic, version;
        ls >> magic >> version;
        if (magic != kMagic) {
            throw CheckpointVersionError("checkpoint: bad magic '" + magic + "'");
        }
        if (version != "v" + std::to_string(kVersion)) {
            throw CheckpointVersionError("checkpoint: unsupported version '" + version +
                                         "', expected v" + std::to_string(kVersion));
        }
    }

    File file;
    if (!std::getline(in, line)) throw CheckpointTruncatedError("checkpoint: missing meta count");
    size_t meta_count = 0;
    {
        std::istringstream ls(line);
        std::string word;
        ls >> word >> meta_count;
        if (word != "meta") throw CheckpointTruncatedError("checkpoint: malformed meta header");
    }
    for (size_t i = 0; i < meta_count; ++i) {
        if (!std::getline(in, line)) {
            throw CheckpointTruncatedError("checkpoint: truncated meta section");
        }
        const auto space = line.find(' ');
        if (space == std::string::npos) {
            throw CheckpointTruncatedError("checkpoint: malformed meta line '" + line + "'");
        }
        file.meta.emplace_back(line.substr(0, space), line.substr(space + 1));
    }

    if (!std::getline(in, line)) {
        throw CheckpointTruncatedError("checkpoint: missing tensor count");
    }
    size_t tensor_count = 0;
    {
        std::istringstream ls(line);
        std::string word;
        ls >> word >> tensor_count;
        if (word != "tensors") {
            throw CheckpointTruncatedError("checkpoint: malformed tensor header");
        }
    }
    struct Entry {
        RawTensor tensor;
        size_t offset = 0;
        size_t size = 0;
    };
    std::vector<Entry> entries(tensor_count);
    for (auto& entry : entries) {
        if (!std::getline(in, line)) {
            throw CheckpointTruncatedError("checkpoint: truncated tensor manifest");
        }
        std::istringstream ls(line);
        size_t rank = 0;
        ls >> entry.tensor.name >> entry.tensor.dtype >> rank;
        entry.tensor.shape.resize(rank);
        for (auto& d : entry.tensor.shape) ls >> d;
        ls >> entry.offset >> entry.size;
        if (!ls) {
            throw CheckpointTruncatedError("checkpoint: malformed manifest line '" + line + "'");
        }
        dtype_size(entry.tensor.dtype);
    }
    if (!std::getline(in, line) || line != "end") {
        throw CheckpointTruncatedError("checkpoint: missing end-of-header marker");
    }

    std::vector<char> blob((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    for (auto& entry : entries) {
        if (entry.offset + entry.size > blob.size()) {
            throw CheckpointTruncatedError("checkpoint: tensor '" + entry.tensor.name +
                                           "' extends past end of file");
        }
        entry.tensor.bytes.assign(blob.begin() + static_cast<long>(entry.offset),
                                  blob.begin() + static_cast<long>(entry.offset + entry.size));
        file.tensors.push_back(std::move(entry.tensor));
    }
    return file;
}

// ---------------------------------------------------------------------------
// Model-level helpers. Training-state fields ride along in the same container
// (see training.hpp for the save/resume entry points).

inline void put_config_meta(File& file, const ModelConfig& cfg) {
    auto put = [&](const std::string& k, const std::string& v) { file.meta.emplace_back(k, v); };
    put("model.vocab_size", std::to_string(cfg.vocab_size));
    put("model.max_seq_len", std::to_string(cfg.max_seq_len));
    put("model.num_layers", std::to_string(cfg.num_layers));
    put("model.use_position_embedding", cfg.use_position_embedding ? "1" : "0");
    put("model.combination", to_string(cfg.combination));
    put("model.hidden_dim", std::to_string(cfg.treeffn.hidden_dim));
    put("model.edge_dim", std::to_string(cfg.treeffn.edge_dim));
    put("model.iterations", std::to_string(cfg.treeffn.iterations));
    put("model.use_edge_projection", cfg.treeffn.use_edge_projection ? "1" : "0");
    put("model.use_gating", cfg.treeffn.use_gating ? "1" : "0");
    put("model.use_residual", cfg.treeffn.use_residual ? "1" : "0");
}

inline ModelConfig config_from_meta(const File& file) {
    auto get = [&](const std::string& key) -> const std::string& {
        const std::string* v = file.find_meta(key);
        if (!v) throw CheckpointTruncatedError("checkpoint: missing config key '" + key + "'");
        return *v;
    };
    ModelConfig cfg;
    cfg.vocab_size = std::stoi(get("model.vocab_size"));
    cfg.max_seq_len = std::stoi(get("model.max_seq_len"));
    cfg.num_layers = std::stoi(get("model.num_layers"));
    cfg.use_position_embedding = get("model.use_position_embedding") == "1";
    cfg.combination = combination_from_string(get("model.combination"));
    cfg.treeffn.hidden_dim = std::stoi(get("model.hidden_dim"));
    cfg.treeffn.edge_dim = std::stoi(get("model.edge_dim"));
    cfg.treeffn.iterations = std::stoi(get("model.iterations"));
    cfg.treeffn.use_edge_projection = get("model.use_edge_projection") == "1";
    cfg.treeffn.use_gating = get("model.use_gating") == "1";
    cfg.treeffn.use_residual = get("model.use_residual") == "1";
    return cfg;
}

template <class S>
void append_model_tensors(File& file, const TreeGPTModel<S>& model) {
    for (const auto& [name, t] : model.named_parameters()) {
        file.tensors.push_back(pack_tensor(name, *t));
    }
}

template <class S>
void load_model_tensors(const File& file, TreeGPTModel<S>& model) {
    for (auto& [name, t] : model.named_parameters()) {
        const RawTensor* raw = file.find_tensor(name);
        if (!raw) {
            throw CheckpointTruncatedError("checkpoint: missing tensor '" + name + "'");
        }
        unpack_into(*raw, *t);
    }
}

template <class S>
void save_model(const std::string& path, const TreeGPTModel<S>& model) {
    File file;
    file.meta.emplace_back("precision", dtype_tag<S>());
    put_config_meta(file, model.config);
    append_model_tensors(file, model);
    write_file(path, file);
}

template <class S>
TreeGPTModel<S> load_model(const File& file) {
    const std::string* precision = file.find_meta("precision");
    if (!precision) throw CheckpointTruncatedError("checkpoint: missing precision");
    if (*precision != dtype_tag<S>()) {
        throw CheckpointShapeError("checkpoint: stores precision " + *precision +
                                   ", requested " + dtype_tag<S>());
    }
    ModelConfig cfg = config_from_meta(file);
    auto model = TreeGPTModel<S>::init(cfg, 0);
    load_model_tensors(file, model);
    return model;
}

template <class S>
TreeGPTModel<S> load_model(const std::string& path) {
    return load_model<S>(read_file(path));
}

}  // namespace treegpt::checkpoint
