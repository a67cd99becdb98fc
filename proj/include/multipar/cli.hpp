#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "multipar/config_io.hpp"
#include "multipar/synthetic.hpp"
#include "multipar/training.hpp"

namespace multipar::cli {

// One config file drives a run: {"model": {...}, "optimizer": {...},
// "focal": {...}, "train": {...}}. Missing sections keep defaults.
struct FullConfig {
  ModelConfig model;
  OptimizerConfig optimizer;
  FocalConfig focal;
  TrainOptions train;
};

FullConfig load_full_config(const std::string& path);
nlohmann::json full_config_to_json(const FullConfig& cfg);

// MULTIPAR_SEED, when set, overrides any config seed.
std::optional<std::uint64_t> env_seed_override();

// FNV-1a 64-bit content hash, hex encoded.
std::string file_content_hash(const std::string& path);

// generate: dataset.jsonl + truth.jsonl + spec echo + manifest under out_dir.
// spec_source is a JSON file path or a preset name (default | trend |
// imbalance).
void cmd_generate(const std::string& spec_source, std::size_t n_samples,
                  const std::string& out_dir);

struct TrainCommandResult {
  double best_macro_f1 = 0.0;
  std::size_t best_epoch = 0;
  std::string run_dir;
  std::string checkpoint_path;
};

// train: checkpoint.json + metrics.jsonl + confusion.csv + merged config
// echo + manifest. A non-empty ablate ("no-cpa" | "no-self" |
// "reverse-direction") runs the variant in its own subdirectory.
TrainCommandResult cmd_train(const std::string& config_path,
                             const std::string& data_path,
                             const std::string& out_dir,
                             const std::string& ablate = "",
                             std::optional<std::uint64_t> seed_flag = {},
                             std::optional<std::size_t> epochs_flag = {});

// eval: metrics.json + confusion.csv + manifest.
MetricsReport cmd_eval(const std::string& checkpoint_path,
                       const std::string& data_path,
                       const std::string& out_dir);

// export-attention: one CSV and one PGM per (pair, layer, head) under
// attn/<sample>/<target>/<pair>/, plus a lag-score sidecar JSON when a
// truth file is supplied and the target has a planted response.
void cmd_export_attention(const std::string& checkpoint_path,
                          const std::string& data_path, std::size_t sample,
                          std::size_t target, const std::string& out_dir,
                          const std::string& truth_path = "");

// ablation-grid: {full, no-cpa, no-self, reversed} x seeds, plus layer
// (M in {1,2,3}) and d_x (20, 100) sweeps at reduced epoch count. Emits
// grid.csv (one row per cell) and summary.csv (mean +/- sd per variant).
void cmd_ablation_grid(const std::string& config_path,
                       const std::string& data_path,
                       const std::string& out_dir, std::size_t seeds = 3,
                       std::size_t jobs = 1);

// Full argv entry point. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 numerical abort.
int run(int argc, const char* const* argv);

}  // namespace multipar::cli
