#pragma once

// Flat key-value run configuration with sections mirroring the module names.
// Precedence: built-in defaults < config file < command-line overrides.
// Unknown keys are hard errors; silent typos in experiment configs are how
// reproducibility dies.

#include <cstdint>
#include <string>
#include <vector>

#include "treegpt/data.hpp"
#include "treegpt/errors.hpp"
#include "treegpt/model.hpp"
#include "treegpt/training.hpp"

namespace treegpt {

enum class Precision { F32, F64 };

std::string to_string(Precision p);
Precision precision_from_string(const std::string& s);

struct DataOptions {
    std::string train_dir;
    std::string eval_dir;
    std::string family = "color_map";
    int count = 100;
    int eval_count = 0;  // written to a separate eval/ split by gen-data
    data::SynthOptions synth;
};

struct AblationOptions {
    std::vector<uint64_t> seeds = {1, 2};
    bool parallel = false;
};

struct RunConfig {
    ModelConfig model;        // model.edge_dim etc. live inside model.treeffn
    Precision precision = Precision::F64;
    TrainConfig train;
    DataOptions data;
    AblationOptions ablation;
    std::string resume_path;  // train.resume
    std::string out_dir;      // empty means runs/<timestamp>-seed<seed>

    void validate() const {
        model.validate();
        train.validate();
    }
};

// All known keys, e.g. "model.hidden_dim". An unknown key or unparsable
// value throws ConfigError naming the key.
void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

// INI-style file: [section] headers, key = value lines, # or ; comments.
void load_config_file(RunConfig& cfg, const std::string& path);

// Overrides of the form section.key=value (the --set flag).
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

std::vector<uint64_t> parse_seed_list(const std::string& csv);

}  // namespace treegpt
