#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "multipar/model.hpp"

namespace multipar {

// Focal loss L = -(1/N) sum_i (1 - p_true)^alpha log(p_true).
// alpha = 0 (or enabled = false) reduces exactly to mean cross-entropy.
struct FocalConfig {
  double alpha = 2.0;
  bool enabled = true;

  double effective_alpha() const { return enabled ? alpha : 0.0; }
};

struct OptimizerConfig {
  double lr0 = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double decay_factor = 0.1;     // lr multiplier applied every decay_every
  std::size_t decay_every = 5;   // epochs
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
};

void validate_optimizer_config(const OptimizerConfig& cfg);

// lr0 * decay_factor^floor(epoch / decay_every)
double lr_at_epoch(const OptimizerConfig& cfg, std::size_t epoch);

struct TrainOptions {
  bool oversample = true;
  double val_fraction = 0.25;  // fraction of groups held out for validation
};

struct MetricsReport {
  double accuracy = 0.0;
  std::array<double, kNumClasses> per_class_f1{};
  std::array<bool, kNumClasses> class_present{};  // in labels or preds
  double weighted_f1 = 0.0;  // support-weighted mean over label classes
  double macro_f1 = 0.0;     // unweighted mean over present classes
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses>
      confusion{};  // [label][pred]
};

// Differentiable focal loss over row-stochastic probs [N x C] and N class
// indices. True-class probabilities below 1e-12 are clamped before the log
// and counted in focal_clamp_warnings().
Tensor focal_loss(const Tensor& probs, std::span<const int> labels,
                  double alpha);

std::size_t focal_clamp_warnings();
void reset_focal_clamp_warnings();

// Resampled index list in which every class present in `labels` reaches the
// majority count, via seeded sampling with replacement; order is shuffled.
std::vector<std::size_t> oversample(const std::vector<int>& labels,
                                    std::uint64_t seed);

// Decoupled-weight-decay Adam over the model's named parameters. Gradients
// are read from each tensor's grad accumulator; a NaN gradient aborts with
// the parameter's name.
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Tensor>> params,
        OptimizerConfig cfg);

  void step(std::size_t epoch);
  void zero_grad();
  std::size_t steps_taken() const { return step_count_; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_count_ = 0;
};

MetricsReport compute_metrics(std::span<const int> preds,
                              std::span<const int> labels);

// Seeded split of window indices into train/validation with whole groups on
// one side only.
struct GroupSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
GroupSplit split_by_group(const std::vector<GroupWindow>& data,
                          double val_fraction, std::uint64_t seed);

// DataError if any group_id appears on both sides.
void check_group_leakage(const std::vector<GroupWindow>& data,
                         const GroupSplit& split);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  MetricsReport val;
};

struct TrainResult {
  ModelConfig config;
  ModelParams params;  // best validation macro-F1 parameters
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_macro_f1 = 0.0;
};

// Per-(window, person) prediction labels for a dataset.
MetricsReport evaluate(const ModelConfig& cfg, const ModelParams& params,
                       const std::vector<GroupWindow>& data);

// Full training run: seeded group split, optional per-epoch oversampling,
// AdamW with the step-decay schedule, per-epoch validation metrics, best
// checkpoint retention. Deterministic given cfg.seed.
TrainResult train(const ModelConfig& cfg, const OptimizerConfig& opt,
                  const FocalConfig& focal, const TrainOptions& options,
                  const std::vector<GroupWindow>& data);

// Metric-file helpers shared by the CLI.
void write_metrics_jsonl(const std::string& path,
                         const std::vector<EpochRecord>& history);
void write_confusion_csv(const std::string& path, const MetricsReport& report);

}  // namespace multipar
