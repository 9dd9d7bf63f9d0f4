#pragma once

// ARC-style task handling: grids of color codes 0-9, few-shot tasks of
// input/output grid pairs, tokenization to flat id sequences, synthetic task
// generators, and batching with padding + loss masks.
//
// Serialization scheme (single source of truth):
//   ids 0-9   color codes
//   10 PAD    padding, never a real position
//   11 BOS    sequence start
//   12 EOS    sequence end, after the output region
//   13 ROW_SEP terminates every grid row, input and output
//   14 IO_SEP  separates input region from output region
//   15 MASK   inference-mode placeholder for the whole output region
//
// Layout: BOS, input cells row by row with ROW_SEP after each row, IO_SEP,
// output region, EOS. In train mode the output region holds the true output
// tokens; in inference mode every output-region slot (cells, ROW_SEPs, EOS)
// is MASK and the model fills them in one non-autoregressive pass. The loss
// mask covers exactly the output region in both modes, so shape mistakes in
// the separators are scored too. Inference requires the output dimensions to
// size the canvas; shape prediction is out of scope.

#include <cstdint>
#include <string>
#include <vector>

#include "treegpt/errors.hpp"

namespace treegpt::data {

namespace vocab {
inline constexpr int kColors = 10;
inline constexpr int kPad = 10;
inline constexpr int kBos = 11;
inline constexpr int kEos = 12;
inline constexpr int kRowSep = 13;
inline constexpr int kIoSep = 14;
inline constexpr int kMask = 15;
inline constexpr int kSize = 16;
}  // namespace vocab

struct Grid {
    int rows = 0;
    int cols = 0;
    std::vector<int> cells;  // row-major, values in [0, 9]

    int at(int r, int c) const { return cells[static_cast<size_t>(r) * cols + c]; }
    int& at(int r, int c) { return cells[static_cast<size_t>(r) * cols + c]; }
    bool operator==(const Grid& other) const = default;
};

// location is prefixed to every error message, e.g. "tasks/demo.json train[0].input".
void validate_grid(const Grid& grid, const std::string& location);

struct GridPair {
    Grid input;
    Grid output;
};

struct Task {
    std::string task_id;
    std::vector<GridPair> train_pairs;
    std::vector<GridPair> test_pairs;
};

void validate_task(const Task& task, const std::string& location);

struct TokenSequence {
    std::vector<int> tokens;
    std::vector<uint8_t> loss_mask;  // scored positions
    std::vector<uint8_t> pad_mask;   // real positions

    void validate() const;
};

enum class TokenizeMode { Train, Inference };

TokenSequence tokenize_pair(const Grid& input, const Grid& output, TokenizeMode mode,
                            int max_seq_len);

// Inverse of train-mode tokenization. Throws on any structural violation.
GridPair detokenize(const std::vector<int>& tokens);

// What the training loop and the evaluator consume: the inference-mode
// canvas as model input, the train-mode tokens as targets.
struct TrainingExample {
    std::vector<int> input_tokens;   // MASK canvas
    std::vector<int> target_tokens;  // ground truth
    std::vector<uint8_t> loss_mask;
    std::vector<uint8_t> pad_mask;

    size_t length() const { return input_tokens.size(); }
};

TrainingExample make_example(const Grid& input, const Grid& output, int max_seq_len);

struct TokenBatch {
    int batch = 0;
    int seq_len = 0;
    std::vector<int> input_tokens;   // batch * seq_len, PAD on the right
    std::vector<int> target_tokens;  // PAD at padded positions
    std::vector<uint8_t> loss_mask;  // false at padded positions
    std::vector<uint8_t> pad_mask;   // false at padded positions
};

TokenBatch make_batch(const std::vector<TrainingExample>& examples,
                      const std::vector<int>& indices, int pad_to);

// ---------------------------------------------------------------------------
// Synthetic task families mirroring the benchmark's task types.

enum class TaskFamily { Copy, ColorMap, PatternTiling, RectFill };

std::string to_string(TaskFamily family);
TaskFamily family_from_string(const std::string& name);
std::vector<std::string> family_names();

struct SynthOptions {
    int rows_min = 1;
    int rows_max = 4;
    int cols_min = 1;
    int cols_max = 4;
    int train_pairs = 3;
    int test_pairs = 1;
};

// Deterministic in (family, seed, count, options). color_map draws one
// non-identity color permutation per call and applies it to every task in
// the call, so a held-out split from the same call tests generalization to
// new grids under a consistent mapping rule. rect_fill fills each hollow
// rectangle's interior with its own border color, keeping the rule a pure
// function of the input.
std::vector<Task> generate_synthetic(TaskFamily family, uint64_t seed, int count,
                                     const SynthOptions& options = {});

// ---------------------------------------------------------------------------
// ARC JSON files: {"train": [{"input": [[...]], "output": [[...]]}], "test": [...]}.

Task load_arc_file(const std::string& path);
void write_task_file(const std::string& path, const Task& task);

// All *.json files in the directory except manifest.json, sorted by filename.
std::vector<Task> load_tasks_from_dir(const std::string& dir);

}  // namespace treegpt::data
