#include "treegpt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace treegpt {

std::string to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision precision_from_string(const std::string& s) {
    if (s == "f32") return Precision::F32;
    if (s == "f64") return Precision::F64;
    throw ConfigError("unknown precision '" + s + "' (f32|f64)");
}

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

long parse_long(const std::string& key, const std::string& value) {
    long v = 0;
    const char* first = value.data();
    const char* last = value.data() + value.size();
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{} || res.ptr != last) {
        throw ConfigError("config: key '" + key + "' needs an integer, got '" + value + "'");
    }
    return v;
}

int parse_int(const std::string& key, const std::string& value) {
    return static_cast<int>(parse_long(key, value));
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    uint64_t v = 0;
    const char* first = value.data();
    const char* last = value.data() + value.size();
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{} || res.ptr != last) {
        throw ConfigError("config: key '" + key + "' needs an unsigned integer, got '" + value +
                          "'");
    }
    return v;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        size_t consumed = 0;
        const double v = std::stod(value, &consumed);
        if (consumed != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' needs a number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true" || value == "on") return true;
    if (value == "0" || value == "false" || value == "off") return false;
    throw ConfigError("config: key '" + key + "' needs a boolean, got '" + value + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& registry() {
    static const std::map<std::string, Setter> table = {
        {"model.vocab_size",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.vocab_size = parse_int(k, v);
         }},
        {"model.hidden_dim",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.treeffn.hidden_dim = parse_int(k, v);
         }},
        {"model.num_layers",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.num_layers = parse_int(k, v);
         }},
        {"model.iterations",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.treeffn.iterations = parse_int(k, v);
         }},
        {"model.edge_dim",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.treeffn.edge_dim = parse_int(k, v);
         }},
        {"model.max_seq_len",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.max_seq_len = parse_int(k, v);
         }},
        {"model.use_edge_projection",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.treeffn.use_edge_projection = parse_bool(k, v);
         }},
        {"model.use_gating",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.treeffn.use_gating = parse_bool(k, v);
         }},
        {"model.use_residual",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.treeffn.use_residual = parse_bool(k, v);
         }},
        {"model.use_position_embedding",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.use_position_embedding = parse_bool(k, v);
         }},
        {"model.combination",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.model.combination = combination_from_string(v);
         }},
        {"model.precision",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.precision = precision_from_string(v);
         }},
        {"train.total_steps",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.total_steps = parse_long(k, v);
         }},
        {"train.warmup_steps",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.warmup_steps = parse_long(k, v);
         }},
        {"train.lr_max",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.lr_max = parse_double(k, v);
         }},
        {"train.lr_min",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.lr_min = parse_double(k, v);
         }},
        {"train.batch_size",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.batch_size = parse_int(k, v);
         }},
        {"train.seed",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.seed = parse_u64(k, v);
         }},
        {"train.eval_every",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.eval_every = parse_long(k, v);
         }},
        {"train.grad_clip_norm",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.grad_clip_norm = parse_double(k, v);
         }},
        {"train.weight_decay",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.weight_decay = parse_double(k, v);
         }},
        {"train.beta1",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.beta1 = parse_double(k, v);
         }},
        {"train.beta2",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.beta2 = parse_double(k, v);
         }},
        {"train.eps",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.eps = parse_double(k, v);
         }},
        {"train.checkpoint_every",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.checkpoint_every = parse_long(k, v);
         }},
        {"train.resume",
         [](RunConfig& c, const std::string&, const std::string& v) { c.resume_path = v; }},
        {"data.train_dir",
         [](RunConfig& c, const std::string&, const std::string& v) { c.data.train_dir = v; }},
        {"data.eval_dir",
         [](RunConfig& c, const std::string&, const std::string& v) { c.data.eval_dir = v; }},
        {"data.family",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             try {
                 data::family_from_string(v);
             } catch (const ValueError& e) {
                 throw ConfigError("config: key '" + k + "': " + e.what());
             }
             c.data.family = v;
         }},
        {"data.count",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.count = parse_int(k, v);
         }},
        {"data.eval_count",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.eval_count = parse_int(k, v);
         }},
        {"data.rows_min",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.synth.rows_min = parse_int(k, v);
         }},
        {"data.rows_max",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.synth.rows_max = parse_int(k, v);
         }},
        {"data.cols_min",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.synth.cols_min = parse_int(k, v);
         }},
        {"data.cols_max",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.synth.cols_max = parse_int(k, v);
         }},
        {"data.train_pairs",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.synth.train_pairs = parse_int(k, v);
         }},
        {"data.test_pairs",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.synth.test_pairs = parse_int(k, v);
         }},
        {"data.out_dir",
         [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
        {"ablation.seeds",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.ablation.seeds = parse_seed_list(v);
         }},
        {"ablation.parallel",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.ablation.parallel = parse_bool(k, v);
         }},
    };
    return table;
}

}  // namespace

void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& table = registry();
    const auto it = table.find(key);
    if (it == table.end()) {
        throw ConfigError("config: unknown key '" + key + "'");
    }
    it->second(cfg, key, value);
}

void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                                  ": malformed section header '" + t + "'");
            }
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) {
                throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                                  ": empty section name");
            }
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                              ": expected key = value, got '" + t + "'");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) + ": empty key");
        }
        if (section.empty()) {
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) + ": key '" +
                              key + "' outside any [section]");
        }
        set_config_key(cfg, section + "." + key, value);
    }
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: override '" + item + "' must look like section.key=value");
        }
        set_config_key(cfg, trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
    }
}

std::vector<uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<uint64_t> seeds;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string t = trim(item);
        if (t.empty()) continue;
        seeds.push_back(parse_u64("ablation.seeds", t));
    }
    if (seeds.empty()) throw ConfigError("config: ablation.seeds is empty");
    return seeds;
}

}  // namespace treegpt
