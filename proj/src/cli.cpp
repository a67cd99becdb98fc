#include "multipar/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

namespace multipar::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string());
}

void write_manifest(const fs::path& run_dir, const std::string& command,
                    const json& config, std::uint64_t seed,
                    const std::vector<std::pair<std::string, std::string>>&
                        input_hashes,
                    const std::vector<std::string>& outputs,
                    const std::string& started) {
  json inputs = json::object();
  for (const auto& [name, hash] : input_hashes) inputs[name] = hash;
  json manifest{{"command", command}, {"config", config},
                {"seed", seed},       {"inputs", std::move(inputs)},
                {"outputs", outputs}, {"started_utc", started},
                {"finished_utc", utc_now()}};
  std::ofstream out(run_dir / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + run_dir.string());
  out << manifest.dump(2) << '\n';
}

void write_metrics_json(const fs::path& path, const MetricsReport& r) {
  json j{{"accuracy", r.accuracy},
         {"weighted_f1", r.weighted_f1},
         {"macro_f1", r.macro_f1},
         {"per_class_f1", r.per_class_f1},
         {"class_present", r.class_present}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write metrics: " + path.string());
  out << j.dump(2) << '\n';
}

void write_attention_csv(const fs::path& path, const AttentionWeights& w,
                         std::size_t head) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write attention CSV: " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < w.k; ++i) {
    for (std::size_t j = 0; j < w.k; ++j) {
      if (j) out << ',';
      out << w.at(head, i, j);
    }
    out << '\n';
  }
}

// 8-bit binary PGM; weight 0 -> black, 1 -> white.
void write_attention_pgm(const fs::path& path, const AttentionWeights& w,
                         std::size_t head) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write attention PGM: " + path.string());
  out << "P5\n" << w.k << ' ' << w.k << "\n255\n";
  for (std::size_t i = 0; i < w.k; ++i)
    for (std::size_t j = 0; j < w.k; ++j) {
      const double v = std::clamp(w.at(head, i, j), 0.0, 1.0);
      out.put(static_cast<char>(std::lround(v * 255.0)));
    }
}

ContingencySpec resolve_spec(const std::string& spec_source) {
  if (spec_source == "default" || spec_source == "trend") return trend_spec();
  if (spec_source == "oneway") return oneway_spec();
  if (spec_source == "imbalance") return imbalance_spec();
  if (!fs::exists(spec_source))
    throw ConfigError("spec '" + spec_source +
                      "' is neither a preset (default|trend|oneway|imbalance) "
                      "nor a file");
  return spec_from_json_file(spec_source);
}

ModelConfig apply_ablation(ModelConfig cfg, const std::string& ablate) {
  if (ablate.empty()) return cfg;
  if (ablate == "no-cpa") {
    cfg.use_cpa = false;
  } else if (ablate == "no-self") {
    cfg.use_self_attention = false;
  } else if (ablate == "reverse-direction") {
    cfg.direction = cfg.direction == Direction::kOtherToSelf
                        ? Direction::kSelfToOther
                        : Direction::kOtherToSelf;
  } else {
    throw ConfigError("unknown ablation '" + ablate +
                      "' (expected no-cpa | no-self | reverse-direction)");
  }
  return cfg;
}

}  // namespace

FullConfig load_full_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  FullConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "model") cfg.model = model_config_from_json(value);
    else if (key == "optimizer") cfg.optimizer = optimizer_config_from_json(value);
    else if (key == "focal") cfg.focal = focal_config_from_json(value);
    else if (key == "train") cfg.train = train_options_from_json(value);
    else throw ConfigError("unknown config section: " + key);
  }
  return cfg;
}

json full_config_to_json(const FullConfig& cfg) {
  return json{{"model", model_config_to_json(cfg.model)},
              {"optimizer", optimizer_config_to_json(cfg.optimizer)},
              {"focal", focal_config_to_json(cfg.focal)},
              {"train", train_options_to_json(cfg.train)}};
}

std::optional<std::uint64_t> env_seed_override() {
  const char* env = std::getenv("MULTIPAR_SEED");
  if (!env || !*env) return std::nullopt;
  try {
    return std::stoull(env);
  } catch (const std::exception&) {
    throw ConfigError(std::string("MULTIPAR_SEED is not an integer: ") + env);
  }
}

std::string file_content_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot hash missing file: " + path);
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      hash ^= static_cast<unsigned char>(buf[i]);
      hash *= 0x100000001b3ULL;
    }
    if (got < static_cast<std::streamsize>(sizeof(buf))) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(hash));
  return hex;
}

// ---- generate -----------------------------------------------------------------

void cmd_generate(const std::string& spec_source, std::size_t n_samples,
                  const std::string& out_dir) {
  if (n_samples == 0) throw ConfigError("generate: need n >= 1 samples");
  ContingencySpec spec = resolve_spec(spec_source);
  if (auto seed = env_seed_override()) spec.seed = *seed;
  const std::string started = utc_now();

  SyntheticDataset dataset = generate(spec, n_samples);
  ensure_dir(out_dir);
  const fs::path dir(out_dir);
  save_jsonl(dataset.windows, (dir / "dataset.jsonl").string());
  save_truth_jsonl(dataset.truth, (dir / "truth.jsonl").string());
  save_spec_json(spec, (dir / "spec.json").string());

  json spec_echo;
  {
    std::ifstream spec_in(dir / "spec.json");
    spec_in >> spec_echo;
  }
  write_manifest(dir, "generate", spec_echo, spec.seed,
                 {{"dataset.jsonl",
                   file_content_hash((dir / "dataset.jsonl").string())},
                  {"truth.jsonl",
                   file_content_hash((dir / "truth.jsonl").string())}},
                 {"dataset.jsonl", "truth.jsonl", "spec.json"}, started);
}

// ---- train --------------------------------------------------------------------

TrainCommandResult cmd_train(const std::string& config_path,
                             const std::string& data_path,
                             const std::string& out_dir,
                             const std::string& ablate,
                             std::optional<std::uint64_t> seed_flag,
                             std::optional<std::size_t> epochs_flag) {
  FullConfig cfg = load_full_config(config_path);
  cfg.model = apply_ablation(cfg.model, ablate);
  if (auto env = env_seed_override()) cfg.model.seed = *env;
  if (seed_flag) cfg.model.seed = *seed_flag;  // flag wins over env and file
  if (epochs_flag) cfg.optimizer.epochs = *epochs_flag;
  validate_config(cfg.model);

  const std::string started = utc_now();
  const fs::path run_dir =
      ablate.empty() ? fs::path(out_dir) : fs::path(out_dir) / ("ablate-" + ablate);
  ensure_dir(run_dir);

  std::vector<GroupWindow> data = load_jsonl(data_path);
  TrainResult result = train(cfg.model, cfg.optimizer, cfg.focal, cfg.train, data);

  const fs::path ckpt = run_dir / "checkpoint.json";
  save_checkpoint(ckpt.string(), result.config, result.params);
  write_metrics_jsonl((run_dir / "metrics.jsonl").string(), result.history);
  write_confusion_csv((run_dir / "confusion.csv").string(),
                      result.history[result.best_epoch].val);
  {
    std::ofstream cfg_out(run_dir / "config.json");
    cfg_out << full_config_to_json(cfg).dump(2) << '\n';
  }
  write_manifest(run_dir, "train", full_config_to_json(cfg), cfg.model.seed,
                 {{"dataset", file_content_hash(data_path)}},
                 {"checkpoint.json", "metrics.jsonl", "confusion.csv",
                  "config.json"},
                 started);
  if (focal_clamp_warnings() > 0)
    std::cerr << "warning: clamped " << focal_clamp_warnings()
              << " near-zero probabilities in the focal loss\n";

  TrainCommandResult out;
  out.best_macro_f1 = result.best_macro_f1;
  out.best_epoch = result.best_epoch;
  out.run_dir = run_dir.string();
  out.checkpoint_path = ckpt.string();
  return out;
}

// ---- eval ---------------------------------------------------------------------

MetricsReport cmd_eval(const std::string& checkpoint_path,
                       const std::string& data_path,
                       const std::string& out_dir) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  std::vector<GroupWindow> data = load_jsonl(data_path);
  if (data.empty()) throw DataError("eval: empty dataset " + data_path);
  if (data.front().persons() != ckpt.config.persons ||
      data.front().timesteps() != ckpt.config.timesteps ||
      data.front().feature_dim() != ckpt.config.feature_dim)
    throw DataError("eval: dataset dims " +
                    shape_string(data.front().features.shape()) +
                    " do not match checkpoint config");
  const std::string started = utc_now();
  MetricsReport report = evaluate(ckpt.config, ckpt.params, data);
  ensure_dir(out_dir);
  const fs::path dir(out_dir);
  write_metrics_json(dir / "metrics.json", report);
  write_confusion_csv((dir / "confusion.csv").string(), report);
  write_manifest(dir, "eval", model_config_to_json(ckpt.config),
                 ckpt.config.seed,
                 {{"dataset", file_content_hash(data_path)},
                  {"checkpoint", file_content_hash(checkpoint_path)}},
                 {"metrics.json", "confusion.csv"}, started);
  return report;
}

// ---- export-attention ------------------------------------------------------------

void cmd_export_attention(const std::string& checkpoint_path,
                          const std::string& data_path, std::size_t sample,
                          std::size_t target, const std::string& out_dir,
                          const std::string& truth_path) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  std::vector<GroupWindow> data = load_jsonl(data_path);
  if (sample >= data.size())
    throw DataError("export-attention: sample " + std::to_string(sample) +
                    " out of range (dataset has " +
                    std::to_string(data.size()) + " windows)");
  if (target >= ckpt.config.persons)
    throw DataError("export-attention: target " + std::to_string(target) +
                    " out of range for P = " +
                    std::to_string(ckpt.config.persons));
  const std::string started = utc_now();

  ForwardResult fw = forward(data[sample], target, ckpt.config, ckpt.params,
                             /*collect_attention=*/true);
  const fs::path base = fs::path(out_dir) / "attn" / std::to_string(sample) /
                        std::to_string(target);
  std::vector<std::string> outputs;
  for (const StreamAttention& stream : fw.attention) {
    const fs::path pair_dir = base / std::to_string(stream.pair);
    ensure_dir(pair_dir);
    for (std::size_t layer = 0; layer < stream.layers.size(); ++layer) {
      const AttentionWeights& w = stream.layers[layer];
      for (std::size_t head = 0; head < w.heads; ++head) {
        const std::string stem =
            std::to_string(layer) + "_" + std::to_string(head);
        write_attention_csv(pair_dir / (stem + ".csv"), w, head);
        write_attention_pgm(pair_dir / (stem + ".pgm"), w, head);
        outputs.push_back((pair_dir / (stem + ".csv")).string());
      }
    }
  }

  if (!truth_path.empty()) {
    std::vector<SampleTruth> truth = load_truth_jsonl(truth_path);
    if (sample >= truth.size())
      throw DataError("export-attention: sample missing from truth file");
    // The exported map for pair p has rows = p's timesteps and columns =
    // the target's, so the planted association shows up in streams where p
    // responds to the target: p's response rows against the target's event
    // columns.
    json scores = json::array();
    for (const StreamAttention& stream : fw.attention) {
      if (stream.pair == target) continue;
      const PersonTruth& pt = truth[sample].persons.at(stream.pair);
      if (pt.source != static_cast<long>(target)) continue;
      const double score = attention_lag_score(stream.layers.at(0), pt);
      const double baseline =
          uniform_causal_lag_score(ckpt.config.timesteps, pt);
      scores.push_back({{"responder", stream.pair},
                        {"category", response_category_name(pt.category)},
                        {"event_onset", pt.event_onset},
                        {"lag", pt.lag},
                        {"layer0_lag_score", score},
                        {"uniform_causal_baseline", baseline}});
    }
    if (!scores.empty()) {
      json j{{"sample", sample}, {"target", target}, {"pairs", scores}};
      std::ofstream out(base / "lag_score.json");
      out << j.dump(2) << '\n';
      outputs.push_back((base / "lag_score.json").string());
    }
  }

  write_manifest(fs::path(out_dir), "export-attention",
                 model_config_to_json(ckpt.config), ckpt.config.seed,
                 {{"dataset", file_content_hash(data_path)},
                  {"checkpoint", file_content_hash(checkpoint_path)}},
                 outputs, started);
}

// ---- ablation-grid ------------------------------------------------------------------

void cmd_ablation_grid(const std::string& config_path,
                       const std::string& data_path,
                       const std::string& out_dir, std::size_t seeds,
                       std::size_t jobs) {
  if (seeds == 0) throw ConfigError("ablation-grid: seeds must be >= 1");
  FullConfig base = load_full_config(config_path);
  if (auto env = env_seed_override()) base.model.seed = *env;
  const std::string started = utc_now();
  ensure_dir(out_dir);

  struct Cell {
    std::string variant;
    std::uint64_t seed;
    FullConfig cfg;
  };
  auto reduced = [&](FullConfig cfg) {
    cfg.optimizer.epochs = std::max<std::size_t>(2, cfg.optimizer.epochs / 2);
    return cfg;
  };
  std::vector<Cell> cells;
  for (std::size_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = base.model.seed + s;
    auto push = [&](const std::string& name, FullConfig cfg) {
      cfg.model.seed = seed;
      cells.push_back(Cell{name, seed, std::move(cfg)});
    };
    push("full", base);
    {
      FullConfig c = base;
      c.model.use_cpa = false;
      push("no-cpa", c);
    }
    {
      FullConfig c = base;
      c.model.use_self_attention = false;
      push("no-self", c);
    }
    {
      FullConfig c = base;
      c.model.direction = base.model.direction == Direction::kOtherToSelf
                              ? Direction::kSelfToOther
                              : Direction::kOtherToSelf;
      push("reversed", c);
    }
    for (std::size_t m : {1, 2, 3}) {
      FullConfig c = reduced(base);
      c.model.layers = m;
      push("m" + std::to_string(m), c);
    }
    for (std::size_t dx : {20, 100}) {
      FullConfig c = reduced(base);
      c.model.d_x = dx;
      c.model.d_ffn = 4 * dx;
      push("dx" + std::to_string(dx), c);
    }
  }

  std::vector<GroupWindow> data = load_jsonl(data_path);
  std::vector<MetricsReport> results(cells.size());
  std::exception_ptr failure = nullptr;

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(static_cast<int>(std::max<std::size_t>(1, jobs))) if (jobs > 1)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(cells.size());
       ++i) {
    try {
      const Cell& cell = cells[static_cast<std::size_t>(i)];
      TrainResult r = train(cell.cfg.model, cell.cfg.optimizer, cell.cfg.focal,
                            cell.cfg.train, data);
      results[static_cast<std::size_t>(i)] = r.history[r.best_epoch].val;
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  const fs::path dir(out_dir);
  {
    std::ofstream grid(dir / "grid.csv");
    if (!grid) throw DataError("cannot write grid.csv");
    grid << "variant,seed,macro_f1,weighted_f1,accuracy\n";
    grid.precision(10);
    for (std::size_t i = 0; i < cells.size(); ++i)
      grid << cells[i].variant << ',' << cells[i].seed << ','
           << results[i].macro_f1 << ',' << results[i].weighted_f1 << ','
           << results[i].accuracy << '\n';
  }
  {
    std::vector<std::string> order;
    for (const Cell& c : cells)
      if (std::find(order.begin(), order.end(), c.variant) == order.end())
        order.push_back(c.variant);
    std::ofstream summary(dir / "summary.csv");
    if (!summary) throw DataError("cannot write summary.csv");
    summary << "variant,mean_macro_f1,sd_macro_f1,cells\n";
    summary.precision(10);
    for (const std::string& variant : order) {
      double sum = 0.0, sum_sq = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i].variant != variant) continue;
        sum += results[i].macro_f1;
        sum_sq += results[i].macro_f1 * results[i].macro_f1;
        ++count;
      }
      const double mean = sum / static_cast<double>(count);
      const double var =
          count > 1 ? std::max(0.0, sum_sq / static_cast<double>(count) -
                                        mean * mean)
                    : 0.0;
      summary << variant << ',' << mean << ',' << std::sqrt(var) << ','
              << count << '\n';
    }
  }
  write_manifest(dir, "ablation-grid", full_config_to_json(base),
                 base.model.seed, {{"dataset", file_content_hash(data_path)}},
                 {"grid.csv", "summary.csv"}, started);
}

// ---- argv entry point -----------------------------------------------------------------

int run(int argc, const char* const* argv) {
  CLI::App app{"Multiparty engagement model: crossperson-attention "
               "transformer with a synthetic contingency benchmark"};
  app.require_subcommand(1);

  // generate
  std::string gen_spec = "default", gen_out;
  std::size_t gen_n = 100;
  CLI::App* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  gen->add_option("--spec", gen_spec,
                  "Spec JSON file or preset (default|trend|imbalance)");
  gen->add_option("--n", gen_n, "Number of group windows");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  std::string train_config, train_data, train_out, train_ablate;
  std::uint64_t train_seed = 0;
  std::size_t train_epochs = 0;
  bool train_seed_set = false, train_epochs_set = false;
  CLI::App* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", train_config, "Run config JSON")->required();
  tr->add_option("--data", train_data, "Dataset JSONL")->required();
  tr->add_option("--out", train_out, "Run directory")->required();
  tr->add_option("--ablate", train_ablate,
                 "Variant: no-cpa | no-self | reverse-direction");
  tr->add_option("--seed", train_seed, "Seed override")
      ->each([&](const std::string&) { train_seed_set = true; });
  tr->add_option("--epochs", train_epochs, "Epoch override")
      ->each([&](const std::string&) { train_epochs_set = true; });

  // eval
  std::string eval_ckpt, eval_data, eval_out;
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint JSON")->required();
  ev->add_option("--data", eval_data, "Dataset JSONL")->required();
  ev->add_option("--out", eval_out, "Output directory")->required();

  // export-attention
  std::string ex_ckpt, ex_data, ex_out, ex_truth;
  std::size_t ex_sample = 0, ex_target = 0;
  CLI::App* ex = app.add_subcommand("export-attention",
                                    "Export attention weight maps");
  ex->add_option("--checkpoint", ex_ckpt, "Checkpoint JSON")->required();
  ex->add_option("--data", ex_data, "Dataset JSONL")->required();
  ex->add_option("--sample", ex_sample, "Window index")->required();
  ex->add_option("--target", ex_target, "Target person")->required();
  ex->add_option("--out", ex_out, "Output directory")->required();
  ex->add_option("--truth", ex_truth, "Truth JSONL for the lag-score sidecar");

  // ablation-grid
  std::string grid_config, grid_data, grid_out;
  std::size_t grid_seeds = 3, grid_jobs = 1;
  CLI::App* gr = app.add_subcommand("ablation-grid",
                                    "Run the ablation and sweep grid");
  gr->add_option("--config", grid_config, "Run config JSON")->required();
  gr->add_option("--data", grid_data, "Dataset JSONL")->required();
  gr->add_option("--out", grid_out, "Output directory")->required();
  gr->add_option("--seeds", grid_seeds, "Seeds per variant");
  gr->add_option("--jobs", grid_jobs, "Parallel cells");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      cmd_generate(gen_spec, gen_n, gen_out);
    } else if (tr->parsed()) {
      TrainCommandResult r = cmd_train(
          train_config, train_data, train_out, train_ablate,
          train_seed_set ? std::optional<std::uint64_t>(train_seed)
                         : std::nullopt,
          train_epochs_set ? std::optional<std::size_t>(train_epochs)
                           : std::nullopt);
      std::cout << "best_epoch=" << r.best_epoch
                << " best_macro_f1=" << r.best_macro_f1 << '\n'
                << "checkpoint=" << r.checkpoint_path << '\n';
    } else if (ev->parsed()) {
      MetricsReport r = cmd_eval(eval_ckpt, eval_data, eval_out);
      std::cout << "accuracy=" << r.accuracy << " weighted_f1=" << r.weighted_f1
                << " macro_f1=" << r.macro_f1 << '\n';
    } else if (ex->parsed()) {
      cmd_export_attention(ex_ckpt, ex_data, ex_sample, ex_target, ex_out,
                           ex_truth);
    } else if (gr->parsed()) {
      cmd_ablation_grid(grid_config, grid_data, grid_out, grid_seeds,
                        grid_jobs);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace multipar::cli
