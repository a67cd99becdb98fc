#include "multipar/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <set>

#include "multipar/config_io.hpp"

namespace multipar {

using nlohmann::json;

namespace {

std::atomic<std::size_t> g_clamp_warnings{0};

constexpr double kProbClamp = 1e-12;

// splitmix64; decorrelates per-epoch streams from one base seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct TrainInstance {
  std::size_t window;
  std::size_t person;
};

}  // namespace

void validate_optimizer_config(const OptimizerConfig& cfg) {
  // lr0 = 0 is tolerated so a frozen model stays expressible in tests.
  if (cfg.lr0 < 0.0) throw ConfigError("lr0 must be >= 0");
  if (!(cfg.decay_factor > 0.0 && cfg.decay_factor <= 1.0))
    throw ConfigError("decay_factor must be in (0, 1]");
  if (cfg.decay_every == 0) throw ConfigError("decay_every must be >= 1");
  if (cfg.epochs == 0) throw ConfigError("epochs must be >= 1");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (cfg.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 &&
        cfg.beta2 < 1.0))
    throw ConfigError("betas must be in [0, 1)");
}

double lr_at_epoch(const OptimizerConfig& cfg, std::size_t epoch) {
  return cfg.lr0 * std::pow(cfg.decay_factor,
                            static_cast<double>(epoch / cfg.decay_every));
}

// ---- focal loss -------------------------------------------------------------

Tensor focal_loss(const Tensor& probs, std::span<const int> labels,
                  double alpha) {
  if (probs.rank() != 2)
    throw ShapeError("focal_loss: probs must be [N x C], got " +
                     shape_string(probs.shape()));
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  if (labels.size() != n)
    throw ShapeError("focal_loss: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  if (alpha < 0.0) throw ConfigError("focal alpha must be >= 0");
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = probs.data()[i * c + j];
      if (p < 0.0)
        throw NumericalError("focal_loss: negative probability");
      row_sum += p;
    }
    if (std::abs(row_sum - 1.0) > 1e-6)
      throw NumericalError("focal_loss: probability row does not sum to 1");
    if (labels[i] < 0 || labels[i] >= static_cast<int>(c))
      throw DataError("focal_loss: label " + std::to_string(labels[i]) +
                      " outside [0, " + std::to_string(c) + ")");
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = probs.data()[i * c + static_cast<std::size_t>(labels[i])];
    double pc = p;
    if (pc < kProbClamp) {
      pc = kProbClamp;
      g_clamp_warnings.fetch_add(1, std::memory_order_relaxed);
    }
    total += std::pow(1.0 - pc, alpha) * (-std::log(pc));
  }
  Tensor result = Tensor::scalar(total * inv_n);
  check_finite("focal_loss", result.data());

  Tape* tape = active_tape();
  if (!tape || !probs.requires_grad()) return result;
  result.set_requires_grad(true);
  std::vector<int> labels_copy(labels.begin(), labels.end());
  tape->record(
      [probs, labels_copy, n, c, alpha, inv_n,
       o = result.impl()](GradStore& gs) {
        const auto* g = gs.find(o);
        if (!g) return;
        auto& dp = gs.slot(probs.impl());
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t idx =
              i * c + static_cast<std::size_t>(labels_copy[i]);
          const double p = probs.data()[idx];
          if (p < kProbClamp) continue;  // clamped region is flat
          const double log_p = std::log(p);
          const double one_minus = 1.0 - p;
          double d;
          if (alpha == 0.0) {
            d = -1.0 / p;
          } else {
            const double t1 =
                one_minus > 0.0
                    ? alpha * std::pow(one_minus, alpha - 1.0) * log_p
                    : 0.0;
            d = t1 - std::pow(one_minus, alpha) / p;
          }
          dp[idx] += (*g)[0] * inv_n * d;
        }
      },
      result.impl_ptr());
  return result;
}

std::size_t focal_clamp_warnings() {
  return g_clamp_warnings.load(std::memory_order_relaxed);
}

void reset_focal_clamp_warnings() { g_clamp_warnings.store(0); }

// ---- oversampling -----------------------------------------------------------

std::vector<std::size_t> oversample(const std::vector<int>& labels,
                                    std::uint64_t seed) {
  if (labels.empty()) throw DataError("oversample: empty input");
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kNumClasses)
      throw DataError("oversample: label " + std::to_string(labels[i]) +
                      " outside {0..3}");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::size_t max_count = 0;
  for (const auto& cls : by_class) max_count = std::max(max_count, cls.size());

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  out.reserve(max_count * kNumClasses);
  for (const auto& cls : by_class) {
    if (cls.empty()) continue;
    out.insert(out.end(), cls.begin(), cls.end());
    std::uniform_int_distribution<std::size_t> pick(0, cls.size() - 1);
    for (std::size_t extra = cls.size(); extra < max_count; ++extra)
      out.push_back(cls[pick(rng)]);
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

// ---- optimizer ---------------------------------------------------------------

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params,
             OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  validate_optimizer_config(cfg_);
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

void AdamW::step(std::size_t epoch) {
  ++step_count_;
  const double lr = lr_at_epoch(cfg_, epoch);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto& [name, t] = params_[p];
    if (!t.has_grad()) continue;  // parameter untouched this step
    const auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (std::isnan(g[i]))
        throw NumericalError("NaN gradient in parameter '" + name + "'");
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= lr * (m_hat / (std::sqrt(v_hat) + 1e-8) +
                    cfg_.weight_decay * w[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

// ---- metrics -----------------------------------------------------------------

MetricsReport compute_metrics(std::span<const int> preds,
                              std::span<const int> labels) {
  if (labels.empty()) throw DataError("compute_metrics: empty input");
  if (preds.size() != labels.size())
    throw DataError("compute_metrics: " + std::to_string(preds.size()) +
                    " predictions for " + std::to_string(labels.size()) +
                    " labels");
  MetricsReport r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kNumClasses || preds[i] < 0 ||
        preds[i] >= kNumClasses)
      throw DataError("compute_metrics: class index outside {0..3}");
    r.confusion[static_cast<std::size_t>(labels[i])]
               [static_cast<std::size_t>(preds[i])]++;
  }
  const double n = static_cast<double>(labels.size());
  std::size_t correct = 0;
  for (int c = 0; c < kNumClasses; ++c)
    correct += r.confusion[static_cast<std::size_t>(c)]
                          [static_cast<std::size_t>(c)];
  r.accuracy = static_cast<double>(correct) / n;

  double macro_sum = 0.0;
  std::size_t present_count = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::size_t tp = r.confusion[c][c];
    std::size_t support = 0, predicted = 0;
    for (std::size_t j = 0; j < kNumClasses; ++j) {
      support += r.confusion[c][j];
      predicted += r.confusion[j][c];
    }
    const std::size_t fp = predicted - tp, fn = support - tp;
    const double denom = static_cast<double>(2 * tp + fp + fn);
    r.per_class_f1[c] = denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    r.class_present[c] = support > 0 || predicted > 0;
    if (r.class_present[c]) {
      macro_sum += r.per_class_f1[c];
      ++present_count;
    }
    r.weighted_f1 += r.per_class_f1[c] * static_cast<double>(support) / n;
  }
  r.macro_f1 = present_count > 0 ? macro_sum / static_cast<double>(present_count)
                                 : 0.0;
  return r;
}

// ---- split -------------------------------------------------------------------

GroupSplit split_by_group(const std::vector<GroupWindow>& data,
                          double val_fraction, std::uint64_t seed) {
  if (data.empty()) throw DataError("split_by_group: empty dataset");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("val_fraction must be in (0, 1)");
  std::set<std::string> unique;
  for (const GroupWindow& w : data) unique.insert(w.group_id);
  if (unique.size() < 2)
    throw DataError("split_by_group: need at least 2 groups for a held-out "
                    "split, got " + std::to_string(unique.size()));
  std::vector<std::string> groups(unique.begin(), unique.end());
  std::shuffle(groups.begin(), groups.end(),
               std::mt19937_64(mix_seed(seed, 0x5eed)));
  std::size_t val_groups = static_cast<std::size_t>(
      std::round(val_fraction * static_cast<double>(groups.size())));
  val_groups = std::clamp<std::size_t>(val_groups, 1, groups.size() - 1);
  std::set<std::string> val_set(groups.begin(),
                                groups.begin() + static_cast<long>(val_groups));
  GroupSplit split;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (val_set.count(data[i].group_id))
      split.val.push_back(i);
    else
      split.train.push_back(i);
  }
  return split;
}

void check_group_leakage(const std::vector<GroupWindow>& data,
                         const GroupSplit& split) {
  std::set<std::string> train_groups, val_groups;
  for (std::size_t i : split.train) train_groups.insert(data[i].group_id);
  for (std::size_t i : split.val) val_groups.insert(data[i].group_id);
  for (const std::string& g : val_groups)
    if (train_groups.count(g))
      throw DataError("group leakage: '" + g +
                      "' appears in both train and validation");
}

// ---- evaluation ----------------------------------------------------------------

namespace {

void predict_windows(const ModelConfig& cfg, const ModelParams& params,
                     const std::vector<GroupWindow>& data,
                     const std::vector<std::size_t>& window_idx,
                     std::vector<int>& preds, std::vector<int>& labels) {
  preds.clear();
  labels.clear();
  for (std::size_t wi : window_idx) {
    const GroupWindow& w = data[wi];
    std::vector<Prediction> p = predict_all(w, cfg, params);
    for (std::size_t person = 0; person < cfg.persons; ++person) {
      preds.push_back(p[person].argmax());
      labels.push_back(w.labels[person]);
    }
  }
}

}  // namespace

MetricsReport evaluate(const ModelConfig& cfg, const ModelParams& params,
                       const std::vector<GroupWindow>& data) {
  if (data.empty()) throw DataError("evaluate: empty dataset");
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<int> preds, labels;
  predict_windows(cfg, params, data, all, preds, labels);
  return compute_metrics(preds, labels);
}

// ---- training loop ---------------------------------------------------------------

TrainResult train(const ModelConfig& cfg, const OptimizerConfig& opt,
                  const FocalConfig& focal, const TrainOptions& options,
                  const std::vector<GroupWindow>& data) {
  validate_config(cfg);
  validate_optimizer_config(opt);
  if (data.empty()) throw DataError("train: empty dataset");
  for (const GroupWindow& w : data) {
    validate_window(w);
    if (w.persons() != cfg.persons || w.timesteps() != cfg.timesteps ||
        w.feature_dim() != cfg.feature_dim)
      throw DataError("train: window dims " +
                      shape_string(w.features.shape()) +
                      " do not match model config");
  }

  GroupSplit split = split_by_group(data, options.val_fraction, cfg.seed);
  check_group_leakage(data, split);

  std::vector<TrainInstance> instances;
  std::vector<int> instance_labels;
  for (std::size_t wi : split.train)
    for (std::size_t person = 0; person < cfg.persons; ++person) {
      instances.push_back(TrainInstance{wi, person});
      instance_labels.push_back(data[wi].labels[person]);
    }
  if (instances.empty()) throw DataError("train: no training instances");

  std::vector<GroupWindow> val_windows;
  for (std::size_t wi : split.val) val_windows.push_back(data[wi]);

  ModelParams params = init_model_params(cfg);
  AdamW optimizer(params.named, opt);
  const double alpha = focal.effective_alpha();

  TrainResult result;
  result.config = cfg;
  result.best_macro_f1 = -1.0;
  std::vector<std::vector<double>> best_data;

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::vector<std::size_t> order;
    if (options.oversample) {
      order = oversample(instance_labels, mix_seed(cfg.seed, epoch));
    } else {
      order.resize(instances.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(),
                   std::mt19937_64(mix_seed(cfg.seed, epoch)));
    }

    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += opt.batch_size) {
      const std::size_t stop = std::min(order.size(), start + opt.batch_size);
      const std::size_t batch = stop - start;
      std::vector<GradStore> stores(batch);
      std::vector<double> losses(batch, 0.0);
      std::exception_ptr failure = nullptr;

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
      for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(batch); ++b) {
        try {
          const TrainInstance inst =
              instances[order[start + static_cast<std::size_t>(b)]];
          Tape tape;
          TapeScope scope(tape);
          std::mt19937_64 drop_rng(
              mix_seed(cfg.seed, (epoch << 24) ^ (start + b)));
          DropoutCtx drop{cfg.dropout, cfg.dropout > 0.0 ? &drop_rng : nullptr};
          ForwardResult fw =
              forward(data[inst.window], inst.person, cfg, params, false, drop);
          Tensor probs_row = reshape(fw.prediction.probs,
                                     {1, static_cast<std::size_t>(kNumClasses)});
          const int label = data[inst.window].labels[inst.person];
          Tensor loss = focal_loss(probs_row, std::span(&label, 1), alpha);
          losses[static_cast<std::size_t>(b)] = loss.value();
          stores[static_cast<std::size_t>(b)] = tape.gradients(loss);
        } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) std::rethrow_exception(failure);

      // Deterministic reduction: instance order, then parameter order.
      const double inv_batch = 1.0 / static_cast<double>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        epoch_loss += losses[b];
        ++seen;
        for (auto& [name, t] : params.named) {
          const std::vector<double>* g = stores[b].find(t.impl());
          if (!g) continue;
          if (t.impl()->grad.empty()) t.impl()->grad.assign(t.size(), 0.0);
          for (std::size_t i = 0; i < g->size(); ++i)
            t.impl()->grad[i] += (*g)[i] * inv_batch;
        }
      }
      optimizer.step(epoch);
      optimizer.zero_grad();
    }

    EpochRecord record;
    record.epoch = epoch;
    record.lr = lr_at_epoch(opt, epoch);
    record.train_loss = seen > 0 ? epoch_loss / static_cast<double>(seen) : 0.0;
    record.val = evaluate(cfg, params, val_windows);
    result.history.push_back(record);

    if (record.val.macro_f1 > result.best_macro_f1) {
      result.best_macro_f1 = record.val.macro_f1;
      result.best_epoch = epoch;
      best_data.clear();
      for (const auto& [name, t] : params.named)
        best_data.emplace_back(t.data().begin(), t.data().end());
    }
  }

  result.params = init_model_params(cfg);
  for (std::size_t i = 0; i < result.params.named.size(); ++i)
    std::copy(best_data[i].begin(), best_data[i].end(),
              result.params.named[i].second.mutable_data().begin());
  return result;
}

// ---- metric files -----------------------------------------------------------------

void write_metrics_jsonl(const std::string& path,
                         const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write metrics file: " + path);
  for (const EpochRecord& rec : history) {
    json row{{"epoch", rec.epoch},
             {"split", "val"},
             {"accuracy", rec.val.accuracy},
             {"weighted_f1", rec.val.weighted_f1},
             {"macro_f1", rec.val.macro_f1},
             {"per_class_f1", rec.val.per_class_f1},
             {"lr", rec.lr},
             {"train_loss", rec.train_loss}};
    out << row.dump() << '\n';
  }
}

void write_confusion_csv(const std::string& path,
                         const MetricsReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write confusion file: " + path);
  out << "label\\pred";
  for (int c = 0; c < kNumClasses; ++c)
    out << ',' << engagement_class_name(static_cast<EngagementClass>(c));
  out << '\n';
  for (int r = 0; r < kNumClasses; ++r) {
    out << engagement_class_name(static_cast<EngagementClass>(r));
    for (int c = 0; c < kNumClasses; ++c)
      out << ','
          << report.confusion[static_cast<std::size_t>(r)]
                             [static_cast<std::size_t>(c)];
    out << '\n';
  }
}

// ---- config JSON ------------------------------------------------------------------

json optimizer_config_to_json(const OptimizerConfig& cfg) {
  return json{{"lr0", cfg.lr0},
              {"weight_decay", cfg.weight_decay},
              {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},
              {"decay_factor", cfg.decay_factor},
              {"decay_every", cfg.decay_every},
              {"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size}};
}

OptimizerConfig optimizer_config_from_json(const json& j) {
  OptimizerConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr0") cfg.lr0 = value.get<double>();
      else if (key == "weight_decay") cfg.weight_decay = value.get<double>();
      else if (key == "beta1") cfg.beta1 = value.get<double>();
      else if (key == "beta2") cfg.beta2 = value.get<double>();
      else if (key == "decay_factor") cfg.decay_factor = value.get<double>();
      else if (key == "decay_every") cfg.decay_every = value.get<std::size_t>();
      else if (key == "epochs") cfg.epochs = value.get<std::size_t>();
      else if (key == "batch_size") cfg.batch_size = value.get<std::size_t>();
      else throw ConfigError("unknown optimizer config key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad optimizer config value: ") + e.what());
  }
  validate_optimizer_config(cfg);
  return cfg;
}

json focal_config_to_json(const FocalConfig& cfg) {
  return json{{"alpha", cfg.alpha}, {"enabled", cfg.enabled}};
}

FocalConfig focal_config_from_json(const json& j) {
  FocalConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "alpha") cfg.alpha = value.get<double>();
      else if (key == "enabled") cfg.enabled = value.get<bool>();
      else throw ConfigError("unknown focal config key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad focal config value: ") + e.what());
  }
  if (cfg.alpha < 0.0) throw ConfigError("focal alpha must be >= 0");
  return cfg;
}

json train_options_to_json(const TrainOptions& cfg) {
  return json{{"oversample", cfg.oversample},
              {"val_fraction", cfg.val_fraction}};
}

TrainOptions train_options_from_json(const json& j) {
  TrainOptions cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "oversample") cfg.oversample = value.get<bool>();
      else if (key == "val_fraction") cfg.val_fraction = value.get<double>();
      else throw ConfigError("unknown train options key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train options value: ") + e.what());
  }
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0))
    throw ConfigError("val_fraction must be in (0, 1)");
  return cfg;
}

}  // namespace multipar
