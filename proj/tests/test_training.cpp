#include <cmath>
#include <map>

#include "doctest.h"
#include "multipar/synthetic.hpp"
#include "multipar/training.hpp"
#include "support.hpp"

using namespace multipar;
using test_support::random_tensor;

TEST_CASE("focal loss: alpha = 0 is exactly mean cross-entropy") {
  std::mt19937_64 rng(60);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor probs = softmax_rows(random_tensor({6, 4}, rng, false, 2.0));
    std::vector<int> labels(6);
    for (int& l : labels) l = static_cast<int>(rng() % 4);
    const double focal = focal_loss(probs, labels, 0.0).value();
    double ce = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
      ce -= std::log(probs.at({i, static_cast<std::size_t>(labels[i])}));
    ce /= 6.0;
    CHECK(std::abs(focal - ce) <= 1e-12);
  }
}

TEST_CASE("focal loss: pinned scalar case and perfect-prediction limit") {
  // One sample, true-class probability 0.5, alpha = 2:
  // (1 - 0.5)^2 * (-ln 0.5) = 0.25 * 0.693147... ~= 0.173287
  const Tensor probs = Tensor::from_data({1, 4}, {0.5, 0.3, 0.1, 0.1});
  const std::vector<int> labels = {0};
  CHECK(focal_loss(probs, labels, 2.0).value() ==
        doctest::Approx(0.173287).epsilon(1e-5));
  CHECK(std::abs(focal_loss(probs, labels, 2.0).value() -
                 0.25 * std::log(2.0)) < 1e-12);

  const Tensor sure =
      Tensor::from_data({1, 4}, {1.0 - 3e-9, 1e-9, 1e-9, 1e-9});
  CHECK(focal_loss(sure, labels, 2.0).value() < 1e-8);
}

TEST_CASE("focal loss: monotone non-increasing in the true-class probability") {
  for (double alpha : {0.0, 0.5, 2.0}) {
    double previous = std::numeric_limits<double>::infinity();
    for (double p = 0.05; p < 0.96; p += 0.05) {
      const double rest = (1.0 - p) / 3.0;
      const Tensor probs = Tensor::from_data({1, 4}, {p, rest, rest, rest});
      const std::vector<int> labels = {0};
      const double loss = focal_loss(probs, labels, alpha).value();
      CHECK(loss <= previous + 1e-12);
      previous = loss;
    }
  }
}

TEST_CASE("focal loss: clamps zero probabilities and counts them") {
  reset_focal_clamp_warnings();
  const Tensor probs = Tensor::from_data({1, 4}, {0.0, 0.5, 0.25, 0.25});
  const std::vector<int> labels = {0};
  const double loss = focal_loss(probs, labels, 2.0).value();
  CHECK(std::isfinite(loss));
  CHECK(focal_clamp_warnings() == 1);
  reset_focal_clamp_warnings();
}

TEST_CASE("focal loss: contract violations") {
  const Tensor bad_rows = Tensor::from_data({1, 4}, {0.5, 0.2, 0.1, 0.1});
  const std::vector<int> labels = {0};
  CHECK_THROWS_AS(focal_loss(bad_rows, labels, 2.0), NumericalError);
  const Tensor probs = Tensor::from_data({1, 4}, {0.25, 0.25, 0.25, 0.25});
  const std::vector<int> bad_label = {4};
  CHECK_THROWS_AS(focal_loss(probs, bad_label, 2.0), DataError);
  CHECK_THROWS_AS(focal_loss(probs, labels, -1.0), ConfigError);
}

TEST_CASE("oversample: minority classes reach the majority count") {
  // counts {A: 3, B: 1} -> {A: 3, B: 3}
  const std::vector<int> labels = {0, 0, 0, 1};
  const auto picks = oversample(labels, 9);
  std::map<int, int> counts;
  for (std::size_t i : picks) counts[labels[i]]++;
  CHECK(counts[0] == 3);
  CHECK(counts[1] == 3);
}

TEST_CASE("oversample: balanced input comes back as a permutation") {
  const std::vector<int> labels = {0, 1, 0, 1, 2, 2};
  const auto picks = oversample(labels, 11);
  REQUIRE(picks.size() == labels.size());
  std::vector<std::size_t> sorted(picks.begin(), picks.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
}

TEST_CASE("oversample: deterministic under a fixed seed, error on empty") {
  const std::vector<int> labels = {0, 0, 1, 2, 2, 2, 3};
  CHECK(oversample(labels, 21) == oversample(labels, 21));
  CHECK(oversample(labels, 21) != oversample(labels, 22));
  CHECK_THROWS_AS(oversample({}, 1), DataError);
}

TEST_CASE("oversample: near-uniform counts from the skewed class mix") {
  // The 80.2 / 18.3 / 1.3 / 0.2 % imbalance.
  std::vector<int> labels;
  std::mt19937_64 rng(62);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 4000; ++i) {
    const double u = unit(rng);
    labels.push_back(u < 0.802 ? 3 : u < 0.985 ? 2 : u < 0.998 ? 1 : 0);
  }
  const auto picks = oversample(labels, 63);
  std::map<int, std::size_t> counts;
  for (std::size_t i : picks) counts[labels[i]]++;
  const std::size_t expected = counts[3];
  for (const auto& [cls, count] : counts) CHECK(count == expected);
}

TEST_CASE("lr schedule: decade steps every decay_every epochs") {
  OptimizerConfig opt;  // lr0 1e-4, decay 0.1 every 5
  for (std::size_t e = 0; e < 5; ++e)
    CHECK(lr_at_epoch(opt, e) == doctest::Approx(1e-4).epsilon(1e-12));
  for (std::size_t e = 5; e < 10; ++e)
    CHECK(lr_at_epoch(opt, e) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(lr_at_epoch(opt, 10) == doctest::Approx(1e-6).epsilon(1e-12));
}

TEST_CASE("adamw: zero gradients with zero weight decay change nothing") {
  std::mt19937_64 rng(64);
  Tensor w = random_tensor({3, 3}, rng, true);
  const std::vector<double> before(w.data().begin(), w.data().end());
  OptimizerConfig opt;
  opt.weight_decay = 0.0;
  AdamW optimizer({{"w", w}}, opt);
  w.accumulate_grad(std::vector<double>(9, 0.0));
  optimizer.step(0);
  for (std::size_t i = 0; i < 9; ++i) CHECK(w.data()[i] == before[i]);
}

TEST_CASE("adamw: descends a single-parameter quadratic monotonically") {
  Tensor w = Tensor::from_data({1}, {5.0}, true);
  OptimizerConfig opt;
  opt.lr0 = 0.05;
  opt.weight_decay = 0.0;
  opt.decay_every = 1000;
  AdamW optimizer({{"w", w}}, opt);
  double previous = 25.0;  // loss = w^2
  for (int step = 0; step < 200; ++step) {
    const double grad = 2.0 * w.data()[0];
    w.zero_grad();
    w.accumulate_grad(std::vector<double>{grad});
    optimizer.step(0);
    const double loss = w.data()[0] * w.data()[0];
    CHECK(loss <= previous + 1e-12);
    previous = loss;
  }
  CHECK(previous < 1.0);
}

TEST_CASE("adamw: NaN gradients abort with the parameter name") {
  Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
  AdamW optimizer({{"encoder.conv_kernel", w}}, OptimizerConfig{});
  w.accumulate_grad(std::vector<double>{0.5, std::nan("")});
  CHECK_THROWS_WITH_AS(optimizer.step(0),
                       doctest::Contains("encoder.conv_kernel"),
                       NumericalError);
}

TEST_CASE("metrics: perfect predictions give all ones") {
  const std::vector<int> labels = {0, 1, 2, 3, 2, 1};
  const MetricsReport r = compute_metrics(labels, labels);
  CHECK(r.accuracy == 1.0);
  CHECK(r.macro_f1 == 1.0);
  CHECK(r.weighted_f1 == doctest::Approx(1.0).epsilon(1e-12));
  for (int c = 0; c < kNumClasses; ++c) CHECK(r.per_class_f1[c] == 1.0);
}

TEST_CASE("metrics: hand confusion case") {
  // labels [0,0,1,1], preds [0,1,1,1]: F1(0) = 2/3, F1(1) = 0.8,
  // macro over present classes = 0.7333...
  const std::vector<int> labels = {0, 0, 1, 1};
  const std::vector<int> preds = {0, 1, 1, 1};
  const MetricsReport r = compute_metrics(preds, labels);
  CHECK(r.per_class_f1[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r.per_class_f1[1] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(r.macro_f1 == doctest::Approx(0.73333333).epsilon(1e-6));
  CHECK_FALSE(r.class_present[2]);
  CHECK_FALSE(r.class_present[3]);
  CHECK(r.accuracy == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r.weighted_f1 ==
        doctest::Approx(0.5 * (2.0 / 3.0) + 0.5 * 0.8).epsilon(1e-12));
}

TEST_CASE("metrics: absent classes are excluded from the macro mean") {
  const std::vector<int> labels = {3, 3, 3, 2};
  const std::vector<int> preds = {3, 3, 2, 2};
  const MetricsReport r = compute_metrics(preds, labels);
  CHECK_FALSE(r.class_present[0]);
  CHECK_FALSE(r.class_present[1]);
  // macro = (F1(2) + F1(3)) / 2, not / 4
  const double f2 = r.per_class_f1[2], f3 = r.per_class_f1[3];
  CHECK(r.macro_f1 == doctest::Approx((f2 + f3) / 2.0).epsilon(1e-12));
}

TEST_CASE("metrics: agrees with a naive recount on 100 random vectors") {
  std::mt19937_64 rng(65);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<int> labels(n), preds(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng() % 4);
      preds[i] = static_cast<int>(rng() % 4);
    }
    const MetricsReport r = compute_metrics(preds, labels);

    // Independent O(N*C) oracle.
    for (int c = 0; c < 4; ++c) {
      std::size_t tp = 0, fp = 0, fn = 0, support = 0, predicted = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == c && preds[i] == c) ++tp;
        if (labels[i] != c && preds[i] == c) ++fp;
        if (labels[i] == c && preds[i] != c) ++fn;
        if (labels[i] == c) ++support;
        if (preds[i] == c) ++predicted;
      }
      const double precision =
          tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                      : 0.0;
      const double recall =
          tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn)
                      : 0.0;
      const double f1 = precision + recall > 0.0
                            ? 2.0 * precision * recall / (precision + recall)
                            : 0.0;
      CHECK(r.per_class_f1[static_cast<std::size_t>(c)] ==
            doctest::Approx(f1).epsilon(1e-12));
      CHECK(r.class_present[static_cast<std::size_t>(c)] ==
            (support > 0 || predicted > 0));
    }
  }
  CHECK_THROWS_AS(compute_metrics({}, {}), DataError);
}

TEST_CASE("group split: no leakage and both sides populated") {
  ContingencySpec spec = trend_spec();
  spec.persons = 2;
  spec.feature_dim = 4;
  spec.windows_per_group = 4;
  spec.seed = 66;
  const SyntheticDataset data = generate(spec, 40);
  const GroupSplit split = split_by_group(data.windows, 0.3, 1);
  CHECK_NOTHROW(check_group_leakage(data.windows, split));
  CHECK(!split.train.empty());
  CHECK(!split.val.empty());
  CHECK(split.train.size() + split.val.size() == 40);

  GroupSplit leaky = split;
  leaky.val.push_back(split.train[0]);
  CHECK_THROWS_AS(check_group_leakage(data.windows, leaky), DataError);
}

namespace {

ModelConfig tiny_train_config() {
  ModelConfig cfg;
  cfg.persons = 2;
  cfg.timesteps = 12;
  cfg.feature_dim = 6;
  cfg.d_x = 8;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.d_ffn = 16;
  cfg.lstm_hidden = 8;
  cfg.seed = 7;
  return cfg;
}

SyntheticDataset tiny_dataset(std::size_t n, std::uint64_t seed) {
  ContingencySpec spec;
  spec.persons = 2;
  spec.timesteps = 12;
  spec.feature_dim = 6;
  spec.lag_min = 1;
  spec.lag_max = 2;
  spec.event_len = 5;
  spec.windows_per_group = 4;
  spec.seed = seed;
  return generate(spec, n);
}

}  // namespace

TEST_CASE("train: two-epoch smoke run finishes with finite losses") {
  const SyntheticDataset data = tiny_dataset(16, 70);
  OptimizerConfig opt;
  opt.epochs = 2;
  opt.batch_size = 8;
  opt.lr0 = 1e-3;
  const TrainResult r =
      train(tiny_train_config(), opt, FocalConfig{}, TrainOptions{},
            data.windows);
  REQUIRE(r.history.size() == 2);
  for (const EpochRecord& rec : r.history) {
    CHECK(std::isfinite(rec.train_loss));
    CHECK(rec.val.macro_f1 >= 0.0);
    CHECK(rec.val.macro_f1 <= 1.0);
  }
}

TEST_CASE("train: lr = 0 freezes the model and the loss") {
  const SyntheticDataset data = tiny_dataset(16, 71);
  OptimizerConfig opt;
  opt.epochs = 3;
  opt.batch_size = 8;
  opt.lr0 = 0.0;
  opt.weight_decay = 0.0;
  FocalConfig focal;
  focal.alpha = 0.0;
  TrainOptions options;
  options.oversample = false;
  const TrainResult r =
      train(tiny_train_config(), opt, focal, options, data.windows);
  REQUIRE(r.history.size() == 3);
  CHECK(r.history[1].train_loss ==
        doctest::Approx(r.history[0].train_loss).epsilon(1e-12));
  CHECK(r.history[2].train_loss ==
        doctest::Approx(r.history[0].train_loss).epsilon(1e-12));
}

TEST_CASE("train: deterministic history under a fixed seed") {
  const SyntheticDataset data = tiny_dataset(16, 72);
  OptimizerConfig opt;
  opt.epochs = 2;
  opt.batch_size = 8;
  opt.lr0 = 1e-3;
  const TrainResult a =
      train(tiny_train_config(), opt, FocalConfig{}, TrainOptions{},
            data.windows);
  const TrainResult b =
      train(tiny_train_config(), opt, FocalConfig{}, TrainOptions{},
            data.windows);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].train_loss == b.history[e].train_loss);
    CHECK(a.history[e].val.macro_f1 == b.history[e].val.macro_f1);
    CHECK(a.history[e].val.accuracy == b.history[e].val.accuracy);
  }
  CHECK(a.best_macro_f1 == b.best_macro_f1);
}
