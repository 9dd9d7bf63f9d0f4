#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "treegpt/ablation.hpp"
#include "treegpt/cli.hpp"
#include "treegpt/config.hpp"
#include "treegpt/data.hpp"

using namespace treegpt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() /
               (tag + "_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ablation::AblationDataset tiny_dataset() {
    const auto tasks = data::generate_synthetic(data::TaskFamily::ColorMap, 3, 6,
                                                {1, 2, 1, 2, 2, 1});
    ablation::AblationDataset ds;
    for (int i = 0; i < 4; ++i) {
        for (const auto& p : tasks[i].train_pairs) {
            ds.train_examples.push_back(data::make_example(p.input, p.output, 32));
        }
    }
    ds.val_tasks = {tasks[4]};
    ds.test_tasks = {tasks[5]};
    return ds;
}

}  // namespace

TEST_CASE("the six study configurations cover the component table exactly") {
    const auto configs = ablation::study_configurations();
    REQUIRE(configs.size() == 6);
    CHECK(configs[0].name == "Edge Projection Only");
    CHECK(configs[0].edge_projection);
    CHECK_FALSE(configs[0].gating);
    CHECK_FALSE(configs[0].residual);
    CHECK(configs[1].name == "Edge Proj + Gating");
    CHECK((configs[1].edge_projection && configs[1].gating && !configs[1].residual));
    CHECK(configs[2].name == "Edge Proj + Residual");
    CHECK((configs[2].edge_projection && !configs[2].gating && configs[2].residual));
    CHECK(configs[3].name == "All Components");
    CHECK((configs[3].edge_projection && configs[3].gating && configs[3].residual));
    CHECK(configs[4].name == "Gating Only");
    CHECK((!configs[4].edge_projection && configs[4].gating && !configs[4].residual));
    CHECK(configs[5].name == "Baseline TreeFFN");
    CHECK((!configs[5].edge_projection && !configs[5].gating && !configs[5].residual));
    // no duplicate flag combinations
    for (size_t i = 0; i < configs.size(); ++i) {
        for (size_t j = i + 1; j < configs.size(); ++j) {
            const bool same = configs[i].edge_projection == configs[j].edge_projection &&
                              configs[i].gating == configs[j].gating &&
                              configs[i].residual == configs[j].residual;
            CHECK_FALSE(same);
        }
    }
}

TEST_CASE("run_matrix produces six rows with controlled seeds") {
    ModelConfig mc;
    mc.treeffn.hidden_dim = 8;
    mc.treeffn.edge_dim = 4;
    mc.treeffn.iterations = 1;
    mc.num_layers = 1;
    mc.max_seq_len = 32;
    TrainConfig tc;
    tc.total_steps = 6;
    tc.warmup_steps = 2;
    tc.batch_size = 4;

    const auto report =
        ablation::run_matrix<double>(mc, tc, tiny_dataset(), {1, 2}, /*parallel=*/false);
    REQUIRE(report.rows.size() == 6);
    CHECK(report.timings_comparable);
    for (const auto& row : report.rows) {
        CHECK(row.runs == 2);
        CHECK(row.val_accuracy >= 0.0);
        CHECK(row.val_accuracy <= 1.0);
        CHECK(row.test_accuracy >= 0.0);
        CHECK(row.test_accuracy <= 1.0);
        CHECK(row.training_seconds > 0.0);
    }
    CHECK(report.rows[0].config_name == "Edge Projection Only");
    CHECK(report.rows[5].config_name == "Baseline TreeFFN");
}

TEST_CASE("render_table emits both formats faithfully") {
    std::vector<ablation::AblationRow> rows(1);
    rows[0].config_name = "All Components";
    rows[0].edge_projection = rows[0].gating = rows[0].residual = true;
    rows[0].val_accuracy = 0.875;
    rows[0].test_accuracy = 0.75;
    rows[0].training_seconds = 12.5;
    rows[0].runs = 1;

    const auto text = ablation::render_table(rows, ablation::TableFormat::Text);
    CHECK(text.find("Configuration") != std::string::npos);
    CHECK(text.find("Val Acc") != std::string::npos);
    CHECK(text.find("Test Acc") != std::string::npos);
    CHECK(text.find("Time(s)") != std::string::npos);
    CHECK(text.find("All Components") != std::string::npos);

    const auto csv = ablation::render_table(rows, ablation::TableFormat::Csv);
    std::istringstream is(csv);
    std::string header, line;
    std::getline(is, header);
    std::getline(is, line);
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 10);
    CHECK(cells[0] == "All Components");
    CHECK(std::stod(cells[4]) == 0.875);
    CHECK(std::stod(cells[5]) == 0.75);
    CHECK(std::stod(cells[6]) == 12.5);
    CHECK(std::stoi(cells[9]) == 1);

    CHECK_THROWS_AS(ablation::render_table({}, ablation::TableFormat::Text), ValueError);
}

TEST_CASE("row order is preserved from input") {
    std::vector<ablation::AblationRow> rows(3);
    rows[0].config_name = "zeta";
    rows[1].config_name = "alpha";
    rows[2].config_name = "middle";
    const auto csv = ablation::render_table(rows, ablation::TableFormat::Csv);
    CHECK(csv.find("zeta") < csv.find("alpha"));
    CHECK(csv.find("alpha") < csv.find("middle"));
}

TEST_CASE("config precedence: defaults < file < command line") {
    TempDir dir("treegpt_cfg");
    const auto cfg_path = dir.path / "run.cfg";
    std::ofstream(cfg_path) << "# comment line\n"
                            << "[model]\n"
                            << "hidden_dim = 32\n"
                            << "[train]\n"
                            << "total_steps = 50\n"
                            << "seed = 5\n";

    RunConfig cfg;  // defaults
    CHECK(cfg.train.total_steps == 1500);
    load_config_file(cfg, cfg_path.string());
    CHECK(cfg.model.treeffn.hidden_dim == 32);
    CHECK(cfg.train.total_steps == 50);
    apply_overrides(cfg, {"train.total_steps=60", "model.hidden_dim=16"});
    CHECK(cfg.train.total_steps == 60);
    CHECK(cfg.model.treeffn.hidden_dim == 16);
    CHECK(cfg.train.seed == 5);  // untouched by overrides
}

TEST_CASE("unknown config keys and malformed values are hard errors") {
    RunConfig cfg;
    CHECK_THROWS_WITH_AS(set_config_key(cfg, "model.hidden_dims", "8"),
                         doctest::Contains("model.hidden_dims"), ConfigError);
    CHECK_THROWS_AS(set_config_key(cfg, "train.lr_max", "fast"), ConfigError);
    CHECK_THROWS_AS(apply_overrides(cfg, {"model.hidden_dim"}), ConfigError);
    CHECK_THROWS_AS(set_config_key(cfg, "data.family", "nonsense"), ConfigError);

    TempDir dir("treegpt_cfg_bad");
    const auto cfg_path = dir.path / "bad.cfg";
    std::ofstream(cfg_path) << "[mystery]\nkey = 1\n";
    CHECK_THROWS_AS(load_config_file(cfg, cfg_path.string()), ConfigError);
}

TEST_CASE("seed list parsing") {
    CHECK(parse_seed_list("1,2,3") == std::vector<uint64_t>{1, 2, 3});
    CHECK(parse_seed_list(" 7 , 8 ") == std::vector<uint64_t>{7, 8});
    CHECK_THROWS_AS(parse_seed_list(""), ConfigError);
    CHECK_THROWS_AS(parse_seed_list("1,x"), ConfigError);
}

TEST_CASE("gen-data writes valid, deterministic task files") {
    TempDir out1("treegpt_gen1");
    TempDir out2("treegpt_gen2");
    const std::vector<std::string> base = {"gen-data", "--family", "copy", "--count", "10",
                                           "--seed", "4"};
    auto with_out = [&](const std::string& dir) {
        auto args = base;
        args.push_back("--out");
        args.push_back(dir);
        return args;
    };
    CHECK(cli::run(with_out(out1.str())) == 0);
    CHECK(cli::run(with_out(out2.str())) == 0);

    const auto tasks = data::load_tasks_from_dir(out1.str());
    CHECK(tasks.size() == 10);  // every file passes load validation

    // same invocation twice gives byte-identical files
    int compared = 0;
    for (const auto& entry : fs::directory_iterator(out1.path)) {
        const auto other = out2.path / entry.path().filename();
        REQUIRE(fs::exists(other));
        CHECK(slurp(entry.path()) == slurp(other));
        ++compared;
    }
    CHECK(compared == 11);  // 10 tasks + manifest
}

TEST_CASE("gen-data rejects unknown families with a usage error") {
    TempDir out("treegpt_gen_bad");
    const int code =
        cli::run({"gen-data", "--family", "bogus", "--count", "2", "--out", out.str()});
    CHECK(code == 1);
}

TEST_CASE("gen-data split writes train and eval subdirectories") {
    TempDir out("treegpt_gen_split");
    CHECK(cli::run({"gen-data", "--family", "color_map", "--count", "8", "--split", "3",
                    "--seed", "6", "--out", out.str()}) == 0);
    CHECK(data::load_tasks_from_dir((out.path / "train").string()).size() == 5);
    CHECK(data::load_tasks_from_dir((out.path / "eval").string()).size() == 3);
}

TEST_CASE("cli: train smoke run emits metrics, summary, and checkpoint") {
    TempDir dir("treegpt_cli_train");
    const auto datadir = dir.path / "tasks";
    fs::create_directories(datadir);
    for (const auto& t : data::generate_synthetic(data::TaskFamily::Copy, 8, 4)) {
        data::write_task_file((datadir / (t.task_id + ".json")).string(), t);
    }
    const auto outdir = (dir.path / "run").string();
    const int code = cli::run({"train", "--seed", "3", "--out", outdir,
                               "--set", "data.train_dir=" + datadir.string(),
                               "--set", "model.hidden_dim=8", "--set", "model.edge_dim=4",
                               "--set", "model.max_seq_len=64",
                               "--set", "train.total_steps=20",
                               "--set", "train.warmup_steps=5",
                               "--set", "train.batch_size=4",
                               "--set", "train.eval_every=10"});
    CHECK(code == 0);

    const auto metrics = slurp(fs::path(outdir) / "metrics.csv");
    CHECK(metrics.find("step,lr,loss,token_acc,exact_match") == 0);
    int lines = 0;
    for (char c : metrics) lines += c == '\n';
    CHECK(lines == 21);  // header + 20 steps
    CHECK(fs::exists(fs::path(outdir) / "summary.json"));
    CHECK(fs::exists(fs::path(outdir) / "checkpoint-final.ckpt"));

    SUBCASE("eval runs against the produced checkpoint") {
        const int eval_code =
            cli::run({"eval", "--checkpoint", (fs::path(outdir) / "checkpoint-final.ckpt").string(),
                      "--data", datadir.string()});
        CHECK(eval_code == 0);
    }
    SUBCASE("eval on an empty directory is an explicit error") {
        const auto empty = dir.path / "empty";
        fs::create_directories(empty);
        const int eval_code =
            cli::run({"eval", "--checkpoint", (fs::path(outdir) / "checkpoint-final.ckpt").string(),
                      "--data", empty.string()});
        CHECK(eval_code == 2);
    }
    SUBCASE("eval rejects conflicting model overrides") {
        const int eval_code =
            cli::run({"eval", "--checkpoint", (fs::path(outdir) / "checkpoint-final.ckpt").string(),
                      "--data", datadir.string(), "--set", "model.hidden_dim=99"});
        CHECK(eval_code == 1);
    }
}

TEST_CASE("cli: gradcheck tiny run passes and the parameter cap refuses big configs") {
    CHECK(cli::run({"gradcheck", "--seed", "1"}) == 0);
    // tolerance too tight: clean failure, not a crash
    CHECK(cli::run({"gradcheck", "--seed", "1", "--tol", "1e-14"}) == 2);
    // cap exceeded: refusal with explanation
    CHECK(cli::run({"gradcheck", "--set", "model.hidden_dim=256",
                    "--set", "model.max_seq_len=2048"}) == 1);
}

TEST_CASE("cli: missing data directory is a runtime error") {
    TempDir dir("treegpt_cli_missing");
    const int code = cli::run({"train", "--out", (dir.path / "o").string(), "--set",
                               "data.train_dir=" + (dir.path / "nope").string(),
                               "--set", "train.total_steps=2",
                               "--set", "train.warmup_steps=0"});
    CHECK(code == 2);
}

TEST_CASE("cli: unknown config key exits with usage error") {
    const int code = cli::run({"train", "--set", "train.total_stepz=5"});
    CHECK(code == 1);
}
