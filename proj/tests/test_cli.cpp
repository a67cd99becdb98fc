#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "multipar/cli.hpp"

using namespace multipar;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& sub = "") const {
    return sub.empty() ? path.string() : (path / sub).string();
  }
};

void write_tiny_config(const std::string& path, std::size_t epochs = 2) {
  nlohmann::json j = {
      {"model",
       {{"persons", 2},
        {"timesteps", 12},
        {"feature_dim", 6},
        {"d_x", 8},
        {"heads", 2},
        {"layers", 1},
        {"d_ffn", 16},
        {"lstm_hidden", 8},
        {"seed", 5}}},
      {"optimizer",
       {{"lr0", 1e-3}, {"epochs", epochs}, {"batch_size", 8}}},
      {"focal", {{"alpha", 2.0}}},
      {"train", {{"oversample", true}, {"val_fraction", 0.3}}}};
  std::ofstream out(path);
  out << j.dump(2);
}

void write_tiny_spec(const std::string& path) {
  nlohmann::json j = {{"persons", 2},     {"timesteps", 12},
                      {"feature_dim", 6}, {"lag_min", 1},
                      {"lag_max", 2},     {"event_len", 5},
                      {"windows_per_group", 4}, {"seed", 9}};
  std::ofstream out(path);
  out << j.dump(2);
}

}  // namespace

TEST_CASE("cli config: sections parse, unknown keys rejected") {
  TempDir dir("multipar_cli_cfg");
  write_tiny_config(dir.str("config.json"));
  const cli::FullConfig cfg = cli::load_full_config(dir.str("config.json"));
  CHECK(cfg.model.persons == 2);
  CHECK(cfg.model.d_x == 8);
  CHECK(cfg.optimizer.epochs == 2);
  CHECK(cfg.focal.alpha == 2.0);
  CHECK(cfg.train.val_fraction == 0.3);

  std::ofstream bad(dir.str("bad.json"));
  bad << R"({"model": {"persns": 2}})";
  bad.close();
  CHECK_THROWS_AS(cli::load_full_config(dir.str("bad.json")), ConfigError);
}

TEST_CASE("cli generate: default spec produces loadable files, n = 0 errors") {
  TempDir dir("multipar_cli_gen");
  cli::cmd_generate("default", 8, dir.str());
  CHECK(fs::exists(dir.path / "dataset.jsonl"));
  CHECK(fs::exists(dir.path / "truth.jsonl"));
  CHECK(fs::exists(dir.path / "spec.json"));
  CHECK(fs::exists(dir.path / "manifest.json"));
  CHECK(load_jsonl(dir.str("dataset.jsonl")).size() == 8);
  CHECK(load_truth_jsonl(dir.str("truth.jsonl")).size() == 8);

  CHECK_THROWS_AS(cli::cmd_generate("default", 0, dir.str()), ConfigError);
  CHECK_THROWS_AS(cli::cmd_generate("no_such_file.json", 4, dir.str()),
                  ConfigError);
}

TEST_CASE("cli generate: imbalance preset hits the documented frequencies") {
  TempDir dir("multipar_cli_imb");
  cli::cmd_generate("imbalance", 600, dir.str());
  const auto windows = load_jsonl(dir.str("dataset.jsonl"));
  std::array<double, 4> freq{};
  double total = 0.0;
  for (const GroupWindow& w : windows)
    for (int label : w.labels) {
      freq[static_cast<std::size_t>(label)] += 1.0;
      total += 1.0;
    }
  for (double& f : freq) f /= total;
  CHECK(std::abs(freq[3] - 0.802) < 0.02);
  CHECK(std::abs(freq[2] - 0.183) < 0.02);
  CHECK(std::abs(freq[1] - 0.013) < 0.02);
  CHECK(std::abs(freq[0] - 0.002) < 0.02);
}

TEST_CASE("cli train/eval/export-attention round trip") {
  TempDir dir("multipar_cli_train");
  write_tiny_spec(dir.str("spec.json"));
  cli::cmd_generate(dir.str("spec.json"), 20, dir.str("data"));
  write_tiny_config(dir.str("config.json"));

  const cli::TrainCommandResult r1 = cli::cmd_train(
      dir.str("config.json"), dir.str("data/dataset.jsonl"), dir.str("run"));
  CHECK(fs::exists(fs::path(r1.checkpoint_path)));
  CHECK(fs::exists(fs::path(r1.run_dir) / "metrics.jsonl"));
  CHECK(fs::exists(fs::path(r1.run_dir) / "confusion.csv"));
  CHECK(fs::exists(fs::path(r1.run_dir) / "manifest.json"));

  SUBCASE("rerun with the same seed reproduces the macro-F1 bit-exactly") {
    const cli::TrainCommandResult r2 =
        cli::cmd_train(dir.str("config.json"), dir.str("data/dataset.jsonl"),
                       dir.str("run2"));
    CHECK(r1.best_macro_f1 == r2.best_macro_f1);
    CHECK(r1.best_epoch == r2.best_epoch);
  }

  SUBCASE("ablation flags create distinct run directories") {
    const auto no_cpa =
        cli::cmd_train(dir.str("config.json"), dir.str("data/dataset.jsonl"),
                       dir.str("runs"), "no-cpa");
    const auto no_self =
        cli::cmd_train(dir.str("config.json"), dir.str("data/dataset.jsonl"),
                       dir.str("runs"), "no-self");
    const auto reversed =
        cli::cmd_train(dir.str("config.json"), dir.str("data/dataset.jsonl"),
                       dir.str("runs"), "reverse-direction");
    CHECK(no_cpa.run_dir != no_self.run_dir);
    CHECK(no_self.run_dir != reversed.run_dir);
    CHECK(fs::exists(fs::path(no_cpa.run_dir) / "checkpoint.json"));
    CHECK(fs::exists(fs::path(reversed.run_dir) / "checkpoint.json"));
    CHECK_THROWS_AS(
        cli::cmd_train(dir.str("config.json"), dir.str("data/dataset.jsonl"),
                       dir.str("runs"), "no-everything"),
        ConfigError);
  }

  SUBCASE("eval writes metrics and validates dimensions") {
    const MetricsReport report = cli::cmd_eval(
        r1.checkpoint_path, dir.str("data/dataset.jsonl"), dir.str("eval"));
    CHECK(report.accuracy >= 0.0);
    CHECK(fs::exists(dir.path / "eval" / "metrics.json"));
    CHECK(fs::exists(dir.path / "eval" / "confusion.csv"));

    // Mismatched F: regenerate with a different feature width.
    nlohmann::json spec_j;
    {
      std::ifstream in(dir.str("spec.json"));
      in >> spec_j;
    }
    spec_j["feature_dim"] = 7;
    {
      std::ofstream out(dir.str("spec7.json"));
      out << spec_j.dump();
    }
    cli::cmd_generate(dir.str("spec7.json"), 4, dir.str("data7"));
    CHECK_THROWS_AS(cli::cmd_eval(r1.checkpoint_path,
                                  dir.str("data7/dataset.jsonl"),
                                  dir.str("eval7")),
                    DataError);

    // Empty dataset.
    { std::ofstream out(dir.str("empty.jsonl")); }
    CHECK_THROWS_AS(cli::cmd_eval(r1.checkpoint_path, dir.str("empty.jsonl"),
                                  dir.str("eval_empty")),
                    DataError);
  }

  SUBCASE("export-attention emits row-stochastic causal maps and a sidecar") {
    cli::cmd_export_attention(r1.checkpoint_path, dir.str("data/dataset.jsonl"),
                              /*sample=*/0, /*target=*/1, dir.str("attn_out"),
                              dir.str("data/truth.jsonl"));
    const fs::path base = dir.path / "attn_out" / "attn" / "0" / "1";
    // Streams: pair 0 (cross) and pair 1 (self); 1 layer x 2 heads each.
    for (const std::string pair : {"0", "1"}) {
      for (const std::string stem : {"0_0", "0_1"}) {
        const fs::path csv = base / pair / (stem + ".csv");
        REQUIRE(fs::exists(csv));
        CHECK(fs::exists(base / pair / (stem + ".pgm")));

        std::ifstream in(csv);
        std::string line;
        std::size_t row = 0;
        while (std::getline(in, line)) {
          double sum = 0.0;
          std::size_t col = 0;
          std::stringstream ss(line);
          std::string cell;
          while (std::getline(ss, cell, ',')) {
            const double v = std::stod(cell);
            if (col > row) CHECK(v == 0.0);  // causal upper triangle
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            sum += v;
            ++col;
          }
          CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
          ++row;
        }
        CHECK(row == 12);
      }
    }
    REQUIRE(fs::exists(base / "lag_score.json"));
    nlohmann::json sidecar;
    std::ifstream in(base / "lag_score.json");
    in >> sidecar;
    REQUIRE(!sidecar["pairs"].empty());
    const double score = sidecar["pairs"][0]["layer0_lag_score"].get<double>();
    CHECK(score >= 0.0);
    CHECK(score <= 1.0);
    CHECK(sidecar["pairs"][0]["uniform_causal_baseline"].get<double>() > 0.0);
  }
}

TEST_CASE("cli: MULTIPAR_SEED overrides the config seed") {
  TempDir dir("multipar_cli_seed");
  write_tiny_spec(dir.str("spec.json"));
  cli::cmd_generate(dir.str("spec.json"), 16, dir.str("data"));
  write_tiny_config(dir.str("config.json"));

  setenv("MULTIPAR_SEED", "1234", 1);
  const auto r = cli::cmd_train(dir.str("config.json"),
                                dir.str("data/dataset.jsonl"), dir.str("run"));
  unsetenv("MULTIPAR_SEED");
  nlohmann::json manifest;
  std::ifstream in(fs::path(r.run_dir) / "manifest.json");
  in >> manifest;
  CHECK(manifest["seed"].get<std::uint64_t>() == 1234);

  setenv("MULTIPAR_SEED", "not-a-number", 1);
  CHECK_THROWS_AS(cli::env_seed_override(), ConfigError);
  unsetenv("MULTIPAR_SEED");
}

TEST_CASE("cli ablation-grid: one row per cell, deterministic per seed") {
  TempDir dir("multipar_cli_grid");
  write_tiny_spec(dir.str("spec.json"));
  cli::cmd_generate(dir.str("spec.json"), 16, dir.str("data"));

  // d_x sweep cells need heads | 20 and | 100; heads = 2 works.
  write_tiny_config(dir.str("config.json"));
  cli::cmd_ablation_grid(dir.str("config.json"), dir.str("data/dataset.jsonl"),
                         dir.str("grid"), /*seeds=*/1);
  REQUIRE(fs::exists(dir.path / "grid" / "grid.csv"));
  REQUIRE(fs::exists(dir.path / "grid" / "summary.csv"));

  std::ifstream grid(dir.path / "grid" / "grid.csv");
  std::string line;
  std::getline(grid, line);
  CHECK(line == "variant,seed,macro_f1,weighted_f1,accuracy");
  std::size_t rows = 0;
  std::size_t full_rows = 0;
  while (std::getline(grid, line)) {
    ++rows;
    if (line.rfind("full,", 0) == 0) ++full_rows;
  }
  // 4 architecture variants + 3 depth cells + 2 width cells, 1 seed each.
  CHECK(rows == 9);
  CHECK(full_rows == 1);
}

TEST_CASE("cli run: exit codes for config, data and parse failures") {
  TempDir dir("multipar_cli_exit");
  const std::string out = dir.str("out");

  {
    const char* argv[] = {"multipar", "generate", "--spec", "default",
                          "--n", "0", "--out", out.c_str()};
    CHECK(cli::run(8, argv) == 2);
  }
  {
    const char* argv[] = {"multipar", "eval", "--checkpoint", "missing.json",
                          "--data", "missing.jsonl", "--out", out.c_str()};
    CHECK(cli::run(8, argv) == 3);
  }
  {
    const char* argv[] = {"multipar", "definitely-not-a-verb"};
    CHECK(cli::run(2, argv) == 2);
  }
  {
    const std::string spec_path = dir.str("spec.json");
    write_tiny_spec(spec_path);
    const char* argv[] = {"multipar", "generate", "--spec", spec_path.c_str(),
                          "--n", "4", "--out", out.c_str()};
    CHECK(cli::run(8, argv) == 0);
    CHECK(fs::exists(fs::path(out) / "dataset.jsonl"));
  }
}
