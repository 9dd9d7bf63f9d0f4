#include "treegpt/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

namespace treegpt::data {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void validate_grid(const Grid& grid, const std::string& location) {
    if (grid.rows < 1 || grid.cols < 1) {
        throw ValueError(location + ": empty grid");
    }
    if (grid.rows > 30 || grid.cols > 30) {
        throw ValueError(location + ": grid size " + std::to_string(grid.rows) + "x" +
                         std::to_string(grid.cols) + " exceeds 30x30");
    }
    if (grid.cells.size() != static_cast<size_t>(grid.rows) * grid.cols) {
        throw ValueError(location + ": cell count " + std::to_string(grid.cells.size()) +
                         " does not match " + std::to_string(grid.rows) + "x" +
                         std::to_string(grid.cols));
    }
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) {
            const int v = grid.at(r, c);
            if (v < 0 || v >= vocab::kColors) {
                throw ValueError(location + ": cell value " + std::to_string(v) + " at row " +
                                 std::to_string(r) + " col " + std::to_string(c) +
                                 " out of range [0, 9]");
            }
        }
    }
}

void validate_task(const Task& task, const std::string& location) {
    if (task.train_pairs.empty()) throw ValueError(location + ": no train pairs");
    if (task.test_pairs.empty()) throw ValueError(location + ": no test pairs");
    for (size_t i = 0; i < task.train_pairs.size(); ++i) {
        validate_grid(task.train_pairs[i].input,
                      location + " train[" + std::to_string(i) + "].input");
        validate_grid(task.train_pairs[i].output,
                      location + " train[" + std::to_string(i) + "].output");
    }
    for (size_t i = 0; i < task.test_pairs.size(); ++i) {
        validate_grid(task.test_pairs[i].input,
                      location + " test[" + std::to_string(i) + "].input");
        validate_grid(task.test_pairs[i].output,
                      location + " test[" + std::to_string(i) + "].output");
    }
}

void TokenSequence::validate() const {
    if (tokens.size() != loss_mask.size() || tokens.size() != pad_mask.size()) {
        throw ValueError("token sequence: mask lengths do not match token count");
    }
    bool any_loss = false;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (loss_mask[i] && !pad_mask[i]) {
            throw ValueError("token sequence: loss position " + std::to_string(i) +
                             " is not a real position");
        }
        any_loss = any_loss || loss_mask[i];
    }
    if (!any_loss) throw ValueError("token sequence: no loss positions");
}

TokenSequence tokenize_pair(const Grid& input, const Grid& output, TokenizeMode mode,
                            int max_seq_len) {
    validate_grid(input, "tokenize input");
    validate_grid(output, "tokenize output");

    const long length = 1                                              // BOS
                        + static_cast<long>(input.rows) * (input.cols + 1)   // cells + ROW_SEPs
                        + 1                                            // IO_SEP
                        + static_cast<long>(output.rows) * (output.cols + 1) // output region
                        + 1;                                           // EOS
    if (length > max_seq_len) {
        throw ValueError("tokenize: sequence length " + std::to_string(length) +
                         " exceeds max_seq_len " + std::to_string(max_seq_len));
    }

    TokenSequence seq;
    seq.tokens.reserve(static_cast<size_t>(length));
    seq.tokens.push_back(vocab::kBos);
    for (int r = 0; r < input.rows; ++r) {
        for (int c = 0; c < input.cols; ++c) seq.tokens.push_back(input.at(r, c));
        seq.tokens.push_back(vocab::kRowSep);
    }
    seq.tokens.push_back(vocab::kIoSep);
    const size_t output_region_start = seq.tokens.size();
    for (int r = 0; r < output.rows; ++r) {
        for (int c = 0; c < output.cols; ++c) seq.tokens.push_back(output.at(r, c));
        seq.tokens.push_back(vocab::kRowSep);
    }
    seq.tokens.push_back(vocab::kEos);

    seq.pad_mask.assign(seq.tokens.size(), 1);
    seq.loss_mask.assign(seq.tokens.size(), 0);
    for (size_t i = output_region_start; i < seq.tokens.size(); ++i) {
        seq.loss_mask[i] = 1;
        if (mode == TokenizeMode::Inference) seq.tokens[i] = vocab::kMask;
    }
    seq.validate();
    return seq;
}

namespace {

Grid parse_grid_tokens(const std::vector<int>& tokens, size_t& pos, int terminator,
                       const char* which) {
    Grid grid;
    std::vector<int> row;
    while (true) {
        if (pos >= tokens.size()) {
            throw ValueError(std::string("detokenize: ") + which + " region ends prematurely");
        }
        const int t = tokens[pos];
        if (t == terminator) {
            if (!row.empty()) {
                throw ValueError(std::string("detokenize: ") + which +
                                 " row not closed by ROW_SEP");
            }
            if (grid.rows == 0) {
                throw ValueError(std::string("detokenize: ") + which + " grid is empty");
            }
            ++pos;
            return grid;
        }
        if (t == vocab::kRowSep) {
            if (row.empty()) {
                throw ValueError(std::string("detokenize: ") + which + " has an empty row");
            }
            if (grid.rows == 0) {
                grid.cols = static_cast<int>(row.size());
            } else if (static_cast<int>(row.size()) != grid.cols) {
                throw ValueError(std::string("detokenize: ") + which + " has ragged rows");
            }
            grid.cells.insert(grid.cells.end(), row.begin(), row.end());
            ++grid.rows;
            row.clear();
            ++pos;
            continue;
        }
        if (t < 0 || t >= vocab::kColors) {
            throw ValueError(std::string("detokenize: unexpected token ") + std::to_string(t) +
                             " in " + which + " region at position " + std::to_string(pos));
        }
        row.push_back(t);
        ++pos;
    }
}

}  // namespace

GridPair detokenize(const std::vector<int>& tokens) {
    if (tokens.empty() || tokens[0] != vocab::kBos) {
        throw ValueError("detokenize: sequence does not start with BOS");
    }
    size_t pos = 1;
    GridPair pair;
    pair.input = parse_grid_tokens(tokens, pos, vocab::kIoSep, "input");
    pair.output = parse_grid_tokens(tokens, pos, vocab::kEos, "output");
    if (pos != tokens.size()) {
        throw ValueError("detokenize: trailing tokens after EOS");
    }
    validate_grid(pair.input, "detokenize input");
    validate_grid(pair.output, "detokenize output");
    return pair;
}

TrainingExample make_example(const Grid& input, const Grid& output, int max_seq_len) {
    const TokenSequence target = tokenize_pair(input, output, TokenizeMode::Train, max_seq_len);
    const TokenSequence canvas =
        tokenize_pair(input, output, TokenizeMode::Inference, max_seq_len);
    TrainingExample ex;
    ex.input_tokens = canvas.tokens;
    ex.target_tokens = target.tokens;
    ex.loss_mask = target.loss_mask;
    ex.pad_mask = target.pad_mask;
    return ex;
}

TokenBatch make_batch(const std::vector<TrainingExample>& examples,
                      const std::vector<int>& indices, int pad_to) {
    if (indices.empty()) throw ValueError("batch: no sequences");
    TokenBatch batch;
    batch.batch = static_cast<int>(indices.size());
    batch.seq_len = pad_to;
    const size_t total = static_cast<size_t>(batch.batch) * pad_to;
    batch.input_tokens.assign(total, vocab::kPad);
    batch.target_tokens.assign(total, vocab::kPad);
    batch.loss_mask.assign(total, 0);
    batch.pad_mask.assign(total, 0);
    for (int s = 0; s < batch.batch; ++s) {
        const TrainingExample& ex = examples.at(static_cast<size_t>(indices[s]));
        if (ex.length() > static_cast<size_t>(pad_to)) {
            throw ValueError("batch: sequence of length " + std::to_string(ex.length()) +
                             " exceeds pad_to " + std::to_string(pad_to));
        }
        const size_t base = static_cast<size_t>(s) * pad_to;
        for (size_t i = 0; i < ex.length(); ++i) {
            batch.input_tokens[base + i] = ex.input_tokens[i];
            batch.target_tokens[base + i] = ex.target_tokens[i];
            batch.loss_mask[base + i] = ex.loss_mask[i];
            batch.pad_mask[base + i] = ex.pad_mask[i];
        }
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Synthetic generators

std::string to_string(TaskFamily family) {
    switch (family) {
        case TaskFamily::Copy: return "copy";
        case TaskFamily::ColorMap: return "color_map";
        case TaskFamily::PatternTiling: return "pattern_tiling";
        case TaskFamily::RectFill: return "rect_fill";
    }
    throw ValueError("unknown task family");
}

std::vector<std::string> family_names() {
    return {"copy", "color_map", "pattern_tiling", "rect_fill"};
}

TaskFamily family_from_string(const std::string& name) {
    if (name == "copy") return TaskFamily::Copy;
    if (name == "color_map") return TaskFamily::ColorMap;
    if (name == "pattern_tiling") return TaskFamily::PatternTiling;
    if (name == "rect_fill") return TaskFamily::RectFill;
    std::string valid;
    for (const auto& n : family_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ValueError("unknown task family '" + name + "' (valid: " + valid + ")");
}

namespace {

int rand_in(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Grid random_grid(std::mt19937_64& rng, const SynthOptions& opt) {
    Grid g;
    g.rows = rand_in(rng, opt.rows_min, opt.rows_max);
    g.cols = rand_in(rng, opt.cols_min, opt.cols_max);
    g.cells.resize(static_cast<size_t>(g.rows) * g.cols);
    for (auto& c : g.cells) c = rand_in(rng, 0, vocab::kColors - 1);
    return g;
}

std::vector<int> random_color_permutation(std::mt19937_64& rng) {
    std::vector<int> perm(vocab::kColors);
    std::iota(perm.begin(), perm.end(), 0);
    const std::vector<int> identity = perm;
    do {
        std::shuffle(perm.begin(), perm.end(), rng);
    } while (perm == identity);
    return perm;
}

GridPair make_pair(TaskFamily family, std::mt19937_64& rng, const SynthOptions& opt,
                   const std::vector<int>& color_perm, int tile_rows, int tile_cols,
                   int factor_r, int factor_c) {
    GridPair pair;
    switch (family) {
        case TaskFamily::Copy: {
            pair.input = random_grid(rng, opt);
            pair.output = pair.input;
            break;
        }
        case TaskFamily::ColorMap: {
            pair.input = random_grid(rng, opt);
            pair.output = pair.input;
            for (auto& c : pair.output.cells) c = color_perm[static_cast<size_t>(c)];
            break;
        }
        case TaskFamily::PatternTiling: {
            Grid motif;
            motif.rows = tile_rows;
            motif.cols = tile_cols;
            motif.cells.resize(static_cast<size_t>(tile_rows) * tile_cols);
            for (auto& c : motif.cells) c = rand_in(rng, 0, vocab::kColors - 1);
            pair.input = motif;
            pair.output.rows = tile_rows * factor_r;
            pair.output.cols = tile_cols * factor_c;
            pair.output.cells.resize(static_cast<size_t>(pair.output.rows) * pair.output.cols);
            for (int r = 0; r < pair.output.rows; ++r) {
                for (int c = 0; c < pair.output.cols; ++c) {
                    pair.output.at(r, c) = motif.at(r % tile_rows, c % tile_cols);
                }
            }
            break;
        }
        case TaskFamily::RectFill: {
            const int rows = rand_in(rng, std::max(opt.rows_min, 4), std::max(opt.rows_max, 5));
            const int cols = rand_in(rng, std::max(opt.cols_min, 4), std::max(opt.cols_max, 5));
            Grid g;
            g.rows = rows;
            g.cols = cols;
            g.cells.assign(static_cast<size_t>(rows) * cols, 0);
            const int border = rand_in(rng, 1, vocab::kColors - 1);
            const int height = rand_in(rng, 3, rows);
            const int width = rand_in(rng, 3, cols);
            const int top = rand_in(rng, 0, rows - height);
            const int left = rand_in(rng, 0, cols - width);
            for (int r = top; r < top + height; ++r) {
                for (int c = left; c < left + width; ++c) {
                    const bool edge =
                        r == top || r == top + height - 1 || c == left || c == left + width - 1;
                    if (edge) g.at(r, c) = border;
                }
            }
            pair.input = g;
            pair.output = g;
            for (int r = top + 1; r < top + height - 1; ++r) {
                for (int c = left + 1; c < left + width - 1; ++c) {
                    pair.output.at(r, c) = border;
                }
            }
            break;
        }
    }
    return pair;
}

}  // namespace

std::vector<Task> generate_synthetic(TaskFamily family, uint64_t seed, int count,
                                     const SynthOptions& options) {
    if (count < 1) throw ValueError("generate_synthetic: count must be >= 1");
    if (options.rows_min < 1 || options.cols_min < 1 || options.rows_max > 30 ||
        options.cols_max > 30 || options.rows_min > options.rows_max ||
        options.cols_min > options.cols_max) {
        throw ValueError("generate_synthetic: invalid size range");
    }
    if (options.train_pairs < 1 || options.test_pairs < 1) {
        throw ValueError("generate_synthetic: tasks need at least one train and one test pair");
    }

    std::mt19937_64 rng(seed);
    std::vector<int> color_perm;
    if (family == TaskFamily::ColorMap) color_perm = random_color_permutation(rng);

    std::vector<Task> tasks;
    tasks.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        Task task;
        task.task_id = to_string(family) + "_s" + std::to_string(seed) + "_" +
                       std::to_string(i);
        int tile_rows = 1, tile_cols = 1, factor_r = 2, factor_c = 2;
        if (family == TaskFamily::PatternTiling) {
            tile_rows = rand_in(rng, 1, std::min(3, options.rows_max));
            tile_cols = rand_in(rng, 1, std::min(3, options.cols_max));
            factor_r = rand_in(rng, 2, 3);
            factor_c = rand_in(rng, 2, 3);
        }
        for (int p = 0; p < options.train_pairs; ++p) {
            task.train_pairs.push_back(make_pair(family, rng, options, color_perm, tile_rows,
                                                 tile_cols, factor_r, factor_c));
        }
        for (int p = 0; p < options.test_pairs; ++p) {
            task.test_pairs.push_back(make_pair(family, rng, options, color_perm, tile_rows,
                                                tile_cols, factor_r, factor_c));
        }
        validate_task(task, task.task_id);
        tasks.push_back(std::move(task));
    }
    return tasks;
}

// ---------------------------------------------------------------------------
// ARC JSON

namespace {

Grid grid_from_json(const ordered_json& j, const std::string& location) {
    if (!j.is_array()) throw IoError(location + ": grid is not an array");
    Grid g;
    g.rows = static_cast<int>(j.size());
    for (size_t r = 0; r < j.size(); ++r) {
        const auto& row = j[r];
        if (!row.is_array()) {
            throw IoError(location + ": row " + std::to_string(r) + " is not an array");
        }
        if (r == 0) {
            g.cols = static_cast<int>(row.size());
        } else if (static_cast<int>(row.size()) != g.cols) {
            throw ValueError(location + ": ragged rows (row " + std::to_string(r) + " has " +
                             std::to_string(row.size()) + " cells, expected " +
                             std::to_string(g.cols) + ")");
        }
        for (size_t c = 0; c < row.size(); ++c) {
            if (!row[c].is_number_integer()) {
                throw IoError(location + ": cell at row " + std::to_string(r) + " col " +
                              std::to_string(c) + " is not an integer");
            }
            g.cells.push_back(row[c].get<int>());
        }
    }
    validate_grid(g, location);
    return g;
}

std::vector<GridPair> pairs_from_json(const ordered_json& j, const std::string& location) {
    if (!j.is_array() || j.empty()) {
        throw ValueError(location + ": missing or empty pair array");
    }
    std::vector<GridPair> pairs;
    for (size_t i = 0; i < j.size(); ++i) {
        const auto& item = j[i];
        const std::string base = location + "[" + std::to_string(i) + "]";
        if (!item.is_object() || !item.contains("input") || !item.contains("output")) {
            throw IoError(base + ": pair must have input and output grids");
        }
        GridPair pair;
        pair.input = grid_from_json(item["input"], base + ".input");
        pair.output = grid_from_json(item["output"], base + ".output");
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

ordered_json grid_to_json(const Grid& g) {
    ordered_json rows = ordered_json::array();
    for (int r = 0; r < g.rows; ++r) {
        ordered_json row = ordered_json::array();
        for (int c = 0; c < g.cols; ++c) row.push_back(g.at(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

Task load_arc_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path + ": cannot open file");
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("train") || !j.contains("test")) {
        throw IoError(path + ": task must be an object with train and test arrays");
    }
    Task task;
    task.task_id = fs::path(path).stem().string();
    task.train_pairs = pairs_from_json(j["train"], path + " train");
    task.test_pairs = pairs_from_json(j["test"], path + " test");
    validate_task(task, path);
    return task;
}

void write_task_file(const std::string& path, const Task& task) {
    ordered_json j;
    ordered_json train = ordered_json::array();
    for (const auto& p : task.train_pairs) {
        train.push_back({{"input", grid_to_json(p.input)}, {"output", grid_to_json(p.output)}});
    }
    ordered_json test = ordered_json::array();
    for (const auto& p : task.test_pairs) {
        test.push_back({{"input", grid_to_json(p.input)}, {"output", grid_to_json(p.output)}});
    }
    j["train"] = std::move(train);
    j["test"] = std::move(test);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(path + ": cannot open file for writing");
    out << j.dump() << "\n";
    if (!out) throw IoError(path + ": write failed");
}

std::vector<Task> load_tasks_from_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError(dir + ": not a directory");
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const auto name = entry.path().filename().string();
        if (entry.path().extension() == ".json" && name != "manifest.json") {
            files.push_back(entry.path().string());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<Task> tasks;
    tasks.reserve(files.size());
    for (const auto& f : files) tasks.push_back(load_arc_file(f));
    return tasks;
}

}  // namespace treegpt::data
