#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "treegpt/data.hpp"

using namespace treegpt;
using namespace treegpt::data;
namespace fs = std::filesystem;

namespace {

Grid make_grid(int rows, int cols, std::vector<int> cells) {
    Grid g;
    g.rows = rows;
    g.cols = cols;
    g.cells = std::move(cells);
    return g;
}

Grid random_grid(std::mt19937_64& rng, int max_dim = 30) {
    std::uniform_int_distribution<int> dim(1, max_dim);
    std::uniform_int_distribution<int> color(0, 9);
    Grid g;
    g.rows = dim(rng);
    g.cols = dim(rng);
    g.cells.resize(static_cast<size_t>(g.rows) * g.cols);
    for (auto& c : g.cells) c = color(rng);
    return g;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("treegpt_data_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string serialize_tasks(const std::vector<Task>& tasks) {
    std::ostringstream os;
    for (const auto& t : tasks) {
        os << t.task_id << ';';
        for (const auto& p : t.train_pairs) {
            os << p.input.rows << 'x' << p.input.cols << ':';
            for (int c : p.input.cells) os << c;
            os << '>';
            for (int c : p.output.cells) os << c;
            os << '|';
        }
    }
    return os.str();
}

}  // namespace

TEST_CASE("grid validation rejects bad grids") {
    CHECK_THROWS_WITH_AS(validate_grid(make_grid(0, 0, {}), "here"),
                         doctest::Contains("empty grid"), ValueError);
    CHECK_THROWS_WITH_AS(validate_grid(make_grid(1, 1, {10}), "here"),
                         doctest::Contains("cell value 10"), ValueError);
    CHECK_NOTHROW(validate_grid(make_grid(1, 2, {0, 9}), "here"));
}

TEST_CASE("tokenize follows the documented layout") {
    const auto in = make_grid(1, 1, {3});
    const auto out = make_grid(1, 1, {5});
    const auto seq = tokenize_pair(in, out, TokenizeMode::Train, 2048);
    CHECK(seq.tokens == std::vector<int>{vocab::kBos, 3, vocab::kRowSep, vocab::kIoSep, 5,
                                         vocab::kRowSep, vocab::kEos});
    CHECK(seq.loss_mask == std::vector<uint8_t>{0, 0, 0, 0, 1, 1, 1});
    CHECK(seq.pad_mask == std::vector<uint8_t>(7, 1));
}

TEST_CASE("inference mode masks the entire output region") {
    const auto in = make_grid(1, 2, {3, 4});
    const auto out = make_grid(1, 2, {5, 6});
    const auto seq = tokenize_pair(in, out, TokenizeMode::Inference, 2048);
    CHECK(seq.tokens == std::vector<int>{vocab::kBos, 3, 4, vocab::kRowSep, vocab::kIoSep,
                                         vocab::kMask, vocab::kMask, vocab::kMask, vocab::kMask});
    const auto train_seq = tokenize_pair(in, out, TokenizeMode::Train, 2048);
    CHECK(seq.loss_mask == train_seq.loss_mask);
    CHECK(seq.tokens.size() == train_seq.tokens.size());
}

TEST_CASE("the 30x30 extreme fits the default budget") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> color(0, 9);
    Grid g;
    g.rows = 30;
    g.cols = 30;
    g.cells.resize(900);
    for (auto& c : g.cells) c = color(rng);
    const auto seq = tokenize_pair(g, g, TokenizeMode::Train, 2048);
    CHECK(seq.tokens.size() == 1863);  // 1 + 30*31 + 1 + 30*31 + 1
    CHECK_THROWS_AS(tokenize_pair(g, g, TokenizeMode::Train, 1000), ValueError);
}

TEST_CASE("tokenize/detokenize round-trips random grid pairs") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const auto in = random_grid(rng, 8);
        const auto out = random_grid(rng, 8);
        const auto seq = tokenize_pair(in, out, TokenizeMode::Train, 2048);
        seq.validate();
        const auto pair = detokenize(seq.tokens);
        CHECK(pair.input == in);
        CHECK(pair.output == out);
    }
}

TEST_CASE("detokenize rejects structural garbage") {
    CHECK_THROWS_AS(detokenize({vocab::kIoSep}), ValueError);
    CHECK_THROWS_AS(detokenize({vocab::kBos, 1, vocab::kIoSep, 2, vocab::kRowSep, vocab::kEos}),
                    ValueError);  // input row unterminated
    CHECK_THROWS_AS(detokenize({vocab::kBos, vocab::kIoSep, 1, vocab::kRowSep, vocab::kEos}),
                    ValueError);  // empty input grid
}

TEST_CASE("batching pads on the right and masks padding out") {
    const auto ex = make_example(make_grid(1, 1, {3}), make_grid(1, 1, {5}), 64);  // length 7
    const auto batch = make_batch({ex}, {0}, 10);
    CHECK(batch.seq_len == 10);
    for (int i = 7; i < 10; ++i) {
        CHECK(batch.input_tokens[i] == vocab::kPad);
        CHECK(batch.pad_mask[i] == 0);
        CHECK(batch.loss_mask[i] == 0);
    }
    CHECK(batch.pad_mask[6] == 1);

    SUBCASE("equal-length sequences need no padding") {
        const auto b2 = make_batch({ex, ex}, {0, 1}, 7);
        CHECK(b2.input_tokens.size() == 14);
        for (auto m : b2.pad_mask) CHECK(m == 1);
    }
    SUBCASE("oversize sequences are rejected") {
        CHECK_THROWS_AS(make_batch({ex}, {0}, 6), ValueError);
    }
}

TEST_CASE("copy family: output equals input everywhere") {
    const auto tasks = generate_synthetic(TaskFamily::Copy, 11, 5);
    for (const auto& task : tasks) {
        for (const auto& p : task.train_pairs) CHECK(p.output == p.input);
        for (const auto& p : task.test_pairs) CHECK(p.output == p.input);
    }
}

TEST_CASE("color_map family: permutation recovered from one pair explains the rest") {
    const auto tasks = generate_synthetic(TaskFamily::ColorMap, 12, 6);
    for (const auto& task : tasks) {
        // recover the mapping from the first train pair
        std::vector<int> mapping(10, -1);
        const auto& first = task.train_pairs.front();
        for (size_t i = 0; i < first.input.cells.size(); ++i) {
            mapping[static_cast<size_t>(first.input.cells[i])] = first.output.cells[i];
        }
        bool nontrivial = false;
        for (int c = 0; c < 10; ++c) {
            if (mapping[c] >= 0 && mapping[c] != c) nontrivial = true;
        }
        CHECK(nontrivial);  // identity permutations are excluded
        auto check_pair = [&](const GridPair& p) {
            CHECK(p.output.rows == p.input.rows);
            CHECK(p.output.cols == p.input.cols);
            for (size_t i = 0; i < p.input.cells.size(); ++i) {
                const int from = p.input.cells[i];
                if (mapping[static_cast<size_t>(from)] >= 0) {
                    CHECK(p.output.cells[i] == mapping[static_cast<size_t>(from)]);
                } else {
                    mapping[static_cast<size_t>(from)] = p.output.cells[i];
                }
            }
        };
        for (const auto& p : task.train_pairs) check_pair(p);
        for (const auto& p : task.test_pairs) check_pair(p);
    }
}

TEST_CASE("pattern_tiling family: output is the motif tiled") {
    const auto tasks = generate_synthetic(TaskFamily::PatternTiling, 13, 5);
    for (const auto& task : tasks) {
        for (const auto& p : task.train_pairs) {
            CHECK(p.output.rows % p.input.rows == 0);
            CHECK(p.output.cols % p.input.cols == 0);
            for (int r = 0; r < p.output.rows; ++r) {
                for (int c = 0; c < p.output.cols; ++c) {
                    CHECK(p.output.at(r, c) == p.input.at(r % p.input.rows, c % p.input.cols));
                }
            }
        }
    }
}

TEST_CASE("rect_fill family: interiors take the border color") {
    const auto tasks = generate_synthetic(TaskFamily::RectFill, 14, 5);
    for (const auto& task : tasks) {
        for (const auto& p : task.train_pairs) {
            CHECK(p.output.rows == p.input.rows);
            CHECK(p.output.cols == p.input.cols);
            // every output cell is either unchanged or filled with the border color
            int border = 0;
            for (int c : p.input.cells) {
                if (c != 0) border = c;
            }
            int filled = 0;
            for (size_t i = 0; i < p.input.cells.size(); ++i) {
                if (p.output.cells[i] != p.input.cells[i]) {
                    CHECK(p.input.cells[i] == 0);
                    CHECK(p.output.cells[i] == border);
                    ++filled;
                }
            }
            CHECK(filled > 0);  // hollow rectangles always have an interior
        }
    }
}

TEST_CASE("generators are pure functions of (family, seed, count)") {
    for (auto family : {TaskFamily::Copy, TaskFamily::ColorMap, TaskFamily::PatternTiling,
                        TaskFamily::RectFill}) {
        const auto a = generate_synthetic(family, 99, 4);
        const auto b = generate_synthetic(family, 99, 4);
        CHECK(serialize_tasks(a) == serialize_tasks(b));
        const auto c = generate_synthetic(family, 100, 4);
        CHECK(serialize_tasks(a) != serialize_tasks(c));
    }
}

TEST_CASE("ARC JSON files load, validate, and round-trip") {
    TempDir dir;
    const auto path = (dir.path / "mini.json").string();

    SUBCASE("minimal well-formed task") {
        std::ofstream(path) << R"({"train":[{"input":[[1]],"output":[[2]]}],)"
                            << R"("test":[{"input":[[1]],"output":[[2]]}]})";
        const auto task = load_arc_file(path);
        CHECK(task.task_id == "mini");
        CHECK(task.train_pairs.size() == 1);
        CHECK(task.test_pairs.size() == 1);
        CHECK(task.train_pairs[0].input.at(0, 0) == 1);
    }
    SUBCASE("out-of-range cell value") {
        std::ofstream(path) << R"({"train":[{"input":[[10]],"output":[[2]]}],)"
                            << R"("test":[{"input":[[1]],"output":[[2]]}]})";
        CHECK_THROWS_WITH_AS(load_arc_file(path), doctest::Contains("cell value 10"),
                             ValueError);
    }
    SUBCASE("ragged rows") {
        std::ofstream(path) << R"({"train":[{"input":[[1,2],[3]],"output":[[2]]}],)"
                            << R"("test":[{"input":[[1]],"output":[[2]]}]})";
        CHECK_THROWS_WITH_AS(load_arc_file(path), doctest::Contains("ragged"), ValueError);
    }
    SUBCASE("empty grid") {
        std::ofstream(path) << R"({"train":[{"input":[],"output":[[2]]}],)"
                            << R"("test":[{"input":[[1]],"output":[[2]]}]})";
        CHECK_THROWS_AS(load_arc_file(path), ValueError);
    }
    SUBCASE("malformed JSON") {
        std::ofstream(path) << "{not json";
        CHECK_THROWS_WITH_AS(load_arc_file(path), doctest::Contains("malformed"), IoError);
    }
    SUBCASE("write then load preserves the task") {
        const auto tasks = generate_synthetic(TaskFamily::ColorMap, 15, 3);
        for (const auto& t : tasks) {
            write_task_file((dir.path / (t.task_id + ".json")).string(), t);
        }
        fs::remove(path);  // not part of this subcase
        const auto loaded = load_tasks_from_dir(dir.path.string());
        REQUIRE(loaded.size() == tasks.size());
        for (size_t i = 0; i < tasks.size(); ++i) {
            CHECK(loaded[i].task_id == tasks[i].task_id);
            CHECK(loaded[i].train_pairs.size() == tasks[i].train_pairs.size());
            for (size_t p = 0; p < tasks[i].train_pairs.size(); ++p) {
                CHECK(loaded[i].train_pairs[p].input == tasks[i].train_pairs[p].input);
                CHECK(loaded[i].train_pairs[p].output == tasks[i].train_pairs[p].output);
            }
        }
    }
}

TEST_CASE("written task files are byte-identical across invocations") {
    TempDir dir;
    const auto tasks = generate_synthetic(TaskFamily::RectFill, 21, 2);
    const auto p1 = (dir.path / "a.json").string();
    const auto p2 = (dir.path / "b.json").string();
    write_task_file(p1, tasks[0]);
    write_task_file(p2, tasks[0]);
    std::ifstream f1(p1), f2(p2);
    const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
}
