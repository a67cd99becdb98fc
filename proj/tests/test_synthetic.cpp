#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "multipar/synthetic.hpp"
#include "support.hpp"

using namespace multipar;

TEST_CASE("generate: deterministic per seed, distinct onsets across seeds") {
  ContingencySpec spec = trend_spec();
  spec.seed = 80;
  const SyntheticDataset a = generate(spec, 5);
  const SyntheticDataset b = generate(spec, 5);
  for (std::size_t s = 0; s < 5; ++s) {
    for (std::size_t i = 0; i < a.windows[s].features.size(); ++i)
      CHECK(a.windows[s].features.data()[i] ==
            b.windows[s].features.data()[i]);
    CHECK(a.windows[s].labels == b.windows[s].labels);
  }

  // A prefix does not depend on how many samples were requested.
  const SyntheticDataset longer = generate(spec, 8);
  CHECK(longer.windows[2].features.data()[0] ==
        a.windows[2].features.data()[0]);

  std::set<long> onsets;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    ContingencySpec s = trend_spec();
    s.seed = seed;
    const SyntheticDataset d = generate(s, 1);
    onsets.insert(d.truth[0].persons[1].event_onset * 100 +
                  d.truth[0].persons[1].lag * 10 +
                  static_cast<long>(d.truth[0].persons[1].category));
  }
  CHECK(onsets.size() > 10);
}

TEST_CASE("generate: output passes dataset validation and jsonl round trip") {
  ContingencySpec spec = trend_spec();
  spec.seed = 81;
  const SyntheticDataset d = generate(spec, 6);
  for (const GroupWindow& w : d.windows) CHECK_NOTHROW(validate_window(w));

  const auto dir = std::filesystem::temp_directory_path();
  const auto data_path = (dir / "multipar_synth.jsonl").string();
  const auto truth_path = (dir / "multipar_truth.jsonl").string();
  save_jsonl(d.windows, data_path);
  save_truth_jsonl(d.truth, truth_path);
  CHECK(load_jsonl(data_path).size() == 6);
  const auto truth = load_truth_jsonl(truth_path);
  REQUIRE(truth.size() == 6);
  CHECK(truth[3].persons[0].category == d.truth[3].persons[0].category);
  CHECK(truth[3].persons[2].lag == d.truth[3].persons[2].lag);
  std::filesystem::remove(data_path);
  std::filesystem::remove(truth_path);
}

TEST_CASE("generate: zero gain and zero noise leave only the planted event") {
  ContingencySpec spec = trend_spec();
  spec.seed = 82;
  spec.response_gain = 0.0;
  spec.noise_sigma = 0.0;
  spec.distractors = 0;
  spec.mixture = {1.0, 0.0, 0.0, 0.0};  // all strong, scale 1 * gain 0 = 0
  const SyntheticDataset d = generate(spec, 2);
  for (std::size_t s = 0; s < 2; ++s) {
    const GroupWindow& w = d.windows[s];
    for (std::size_t p = 0; p < spec.persons; ++p) {
      // Outside its own event window each stream is exactly zero.
      const PersonTruth& pt = d.truth[s].persons[p];
      const long onset = [&] {
        for (const PersonTruth& q : d.truth[s].persons)
          if (q.source == static_cast<long>(p)) return q.event_onset;
        return static_cast<long>(-1);
      }();
      for (std::size_t t = 0; t < spec.timesteps; ++t) {
        const bool in_event =
            onset >= 0 && t >= static_cast<std::size_t>(onset) &&
            t < static_cast<std::size_t>(onset) + spec.event_len;
        if (in_event) continue;
        for (std::size_t c = 0; c < spec.feature_dim; ++c)
          CHECK(w.features.at({p, t, c}) == 0.0);
      }
      CHECK(pt.label == spec.class_rule[static_cast<std::size_t>(
                            ResponseCategory::kStrong)]);
    }
  }
}

TEST_CASE("generate: person without incoming edge is independent of the event") {
  ContingencySpec spec = trend_spec();
  spec.persons = 3;
  spec.influence_graph = {{0, 1}};  // only 0 -> 1
  spec.noise_sigma = 0.0;
  spec.distractors = 0;
  spec.mixture = {1.0, 0.0, 0.0, 0.0};
  spec.seed = 83;
  const SyntheticDataset d = generate(spec, 3);
  for (std::size_t s = 0; s < 3; ++s) {
    // Person 2 has no incoming edge: a flat zero stream regardless of
    // person 0's event onset.
    const GroupWindow& w = d.windows[s];
    for (std::size_t t = 0; t < spec.timesteps; ++t)
      for (std::size_t c = 0; c < spec.feature_dim; ++c)
        CHECK(w.features.at({2, t, c}) == 0.0);
    CHECK(d.truth[s].persons[2].source == -1);
    // Person 1 carries a response inside the planted window.
    const PersonTruth& pt = d.truth[s].persons[1];
    REQUIRE(pt.source == 0);
    double response_energy = 0.0;
    for (std::size_t t = static_cast<std::size_t>(pt.response_onset);
         t < static_cast<std::size_t>(pt.response_onset) + spec.event_len; ++t)
      for (std::size_t c = 0; c < spec.feature_dim; ++c)
        response_energy += w.features.at({1, t, c}) * w.features.at({1, t, c});
    CHECK(response_energy > 0.1);
  }
}

TEST_CASE("generate: cross-correlation peaks inside [lag_min, lag_max]") {
  ContingencySpec spec = trend_spec();
  spec.seed = 84;
  spec.noise_sigma = 0.02;
  spec.distractors = 0;
  spec.influence_graph = {{0, 1}};      // isolate one edge for a clean peak
  spec.mixture = {1.0, 0.0, 0.0, 0.0};  // strong responses only
  const SyntheticDataset d = generate(spec, 10);
  for (std::size_t s = 0; s < 10; ++s) {
    const GroupWindow& w = d.windows[s];
    const PersonTruth& pt = d.truth[s].persons[1];  // influenced by person 0
    REQUIRE(pt.source == 0);
    // Project both streams onto the planted signature axis via the raw
    // feature inner product, then scan lags.
    const std::size_t k = spec.timesteps, f = spec.feature_dim;
    double best = -1.0;
    std::size_t best_lag = 0;
    for (std::size_t lag = 0; lag <= spec.lag_max + 2; ++lag) {
      double corr = 0.0;
      for (std::size_t t = 0; t + lag < k; ++t)
        for (std::size_t c = 0; c < f; ++c)
          corr += w.features.at({0, t, c}) * w.features.at({1, t + lag, c});
      if (corr > best) {
        best = corr;
        best_lag = lag;
      }
    }
    CHECK(best_lag >= spec.lag_min);
    CHECK(best_lag <= spec.lag_max);
    CHECK(best_lag == static_cast<std::size_t>(pt.lag));
  }
}

TEST_CASE("generate: imbalance preset reproduces the skewed class mix") {
  ContingencySpec spec = imbalance_spec();
  spec.seed = 85;
  const SyntheticDataset d = generate(spec, 800);
  std::array<std::size_t, 4> counts{};
  std::size_t total = 0;
  for (const GroupWindow& w : d.windows)
    for (int label : w.labels) {
      counts[static_cast<std::size_t>(label)]++;
      ++total;
    }
  const double n = static_cast<double>(total);
  CHECK(std::abs(static_cast<double>(counts[3]) / n - 0.802) < 0.02);
  CHECK(std::abs(static_cast<double>(counts[2]) / n - 0.183) < 0.02);
  CHECK(std::abs(static_cast<double>(counts[1]) / n - 0.013) < 0.02);
  CHECK(std::abs(static_cast<double>(counts[0]) / n - 0.002) < 0.02);
}

TEST_CASE("generate: spec violations are rejected") {
  ContingencySpec spec = trend_spec();
  spec.lag_min = 0;
  CHECK_THROWS_AS(validate_spec(spec), ConfigError);
  spec = trend_spec();
  spec.lag_max = spec.timesteps;
  CHECK_THROWS_AS(validate_spec(spec), ConfigError);
  spec = trend_spec();
  spec.influence_graph = {{0, 9}};
  CHECK_THROWS_AS(validate_spec(spec), ConfigError);
  spec = trend_spec();
  spec.mixture = {0.5, 0.5, 0.5, 0.5};
  CHECK_THROWS_AS(validate_spec(spec), ConfigError);
  CHECK_THROWS_AS(generate(trend_spec(), 0), ConfigError);
}

TEST_CASE("attention_lag_score: uniform causal weights match the analytic value") {
  PersonTruth truth;
  truth.source = 0;
  truth.event_onset = 3;
  truth.lag = 2;
  truth.response_onset = 5;
  truth.event_len = 4;
  const std::size_t k = 12;

  AttentionWeights uniform;
  uniform.heads = 2;
  uniform.k = k;
  uniform.values.assign(2 * k * k, 0.0);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j <= i; ++j)
        uniform.values[(h * k + i) * k + j] =
            1.0 / static_cast<double>(i + 1);

  const double score = attention_lag_score(uniform, truth);
  const double analytic = uniform_causal_lag_score(k, truth);
  CHECK(score == doctest::Approx(analytic).epsilon(1e-12));

  // Row support is i+1; event columns are 3..6, so row 5 reaches only
  // columns 3..5 while the later rows cover all four.
  const double expected =
      (3.0 / 6.0 + 4.0 / 7.0 + 4.0 / 8.0 + 4.0 / 9.0) / 4.0;
  CHECK(analytic == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("attention_lag_score: diagonal weights score 0 for disjoint windows") {
  PersonTruth truth;
  truth.source = 0;
  truth.event_onset = 2;
  truth.lag = 4;  // lag >= event_len makes the windows disjoint
  truth.response_onset = 6;
  truth.event_len = 4;
  const std::size_t k = 12;

  AttentionWeights diag;
  diag.heads = 1;
  diag.k = k;
  diag.values.assign(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) diag.values[i * k + i] = 1.0;
  CHECK(attention_lag_score(diag, truth) == 0.0);
}

TEST_CASE("attention_lag_score: all mass inside the window scores 1") {
  PersonTruth truth;
  truth.source = 0;
  truth.event_onset = 2;
  truth.lag = 3;
  truth.response_onset = 5;
  truth.event_len = 3;
  const std::size_t k = 10;

  AttentionWeights w;
  w.heads = 1;
  w.k = k;
  w.values.assign(k * k, 0.0);
  // Response rows 5..7 put all their mass on event columns 2..4.
  for (std::size_t i = 0; i < k; ++i) {
    if (i >= 5 && i < 8) {
      w.values[i * k + 2] = 0.5;
      w.values[i * k + 3] = 0.25;
      w.values[i * k + 4] = 0.25;
    } else {
      w.values[i * k + 0] = 1.0;
    }
  }
  CHECK(attention_lag_score(w, truth) == doctest::Approx(1.0).epsilon(1e-12));

  PersonTruth no_response;
  CHECK_THROWS_AS(attention_lag_score(w, no_response), DataError);
}
