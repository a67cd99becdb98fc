#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "multipar/attention.hpp"
#include "multipar/dataset.hpp"

namespace multipar {

// Planted response strength categories. Each influenced person draws one,
// which fixes both their stream's response to the source event and, through
// class_rule, their engagement label.
enum class ResponseCategory : int {
  kStrong = 0,  // full-gain copy of the source signature after the lag
  kWeak = 1,    // attenuated copy
  kAnti = 2,    // negated copy
  kFrozen = 3,  // no response and a damped, low-motion stream
};

const char* response_category_name(ResponseCategory c);

struct InfluenceEdge {
  std::size_t source = 0;
  std::size_t target = 0;
};

// How the response categories are realized in the target stream.
//  kAmplitude: categories scale the copied signature (strong 1.0, weak
//    weak_scale, anti an off-schedule decoy bump). Stream energy correlates
//    with the label, so a self-only model retains a partial channel.
//  kFidelity: every moving category emits a bump with identical timing,
//    length and amplitude; only the bump's angle to the source signature
//    differs (strong = aligned, weak = weak_fidelity cosine, anti =
//    unrelated). Self-stream marginals are then identical across the three
//    moving classes, so the label is decidable only by matching against the
//    source person.
//  kRelative: the response amplitude r is drawn from one narrow marginal
//    for every moving category, and the *event* amplitude is set to
//    r / ratio(category) on the source side: how salient the initiating
//    event was determines how engaged its responder is. The target's own
//    stream is class-independent by construction, so the label is readable
//    only through the source person's stream. Requires at most one
//    responder per source (the default ring qualifies).
enum class ResponseCoding : int {
  kAmplitude = 0,
  kFidelity = 1,
  kRelative = 2,
};

const char* response_coding_name(ResponseCoding c);

// Generator spec for multiparty sequences with planted contingent behavior.
// Every source person emits one localized event (random onset, random unit
// signature direction); influenced targets replay a scaled copy of the
// signature after a uniform lag in [lag_min, lag_max]. Response categories
// can differ in copy length (kept at equal amplitude so stream energy says
// nothing) or in amplitude, depending on the preset. Distractor bumps with
// random directions, lengths and amplitudes camouflage the response, so
// categories are separable only by matching against the source stream.
struct ContingencySpec {
  std::size_t persons = 3;
  std::size_t timesteps = 24;
  std::size_t feature_dim = 12;
  std::size_t lag_min = 1;
  std::size_t lag_max = 2;
  double response_gain = 3.0;
  std::vector<InfluenceEdge> influence_graph;  // empty -> ring 0->1->...->0
  double noise_sigma = 0.25;
  // category -> class, indexed by ResponseCategory
  std::array<int, 4> class_rule = {3, 2, 1, 0};
  std::uint64_t seed = 0;

  // Mixture over (strong, weak, anti, frozen); must sum to 1.
  std::array<double, 4> mixture = {0.40, 0.30, 0.20, 0.10};

  std::size_t event_len = 5;
  double event_gain = 3.0;

  ResponseCoding coding = ResponseCoding::kFidelity;

  // Amplitude-coding knobs. Lengths of 0 fall back to event_len.
  std::size_t strong_len = 0;
  std::size_t weak_len = 0;
  double weak_scale = 0.45;  // amplitude multiplier for the weak copy
  // Anti either emits an uncorrelated decoy bump (non-contingent activity)
  // or a negated copy scaled by anti_scale.
  bool anti_decoy = true;
  double anti_scale = 0.6;

  // Fidelity-coding knob: cosine between the weak response and the
  // signature.
  double weak_fidelity = 0.7;

  // Relative-coding knobs: response amplitude marginal (log-uniform) and
  // the per-category response/event amplitude ratios.
  double resp_amp_min = 1.2;
  double resp_amp_max = 1.4;
  double strong_ratio = 0.24;
  double weak_ratio = 0.40;
  double anti_ratio = 0.65;

  double frozen_damp = 0.15;

  std::size_t distractors = 2;
  std::size_t distractor_len_min = 2;
  std::size_t distractor_len_max = 6;
  double distractor_amp_min = 0.7;
  double distractor_amp_max = 1.3;

  std::size_t windows_per_group = 10;
};

void validate_spec(const ContingencySpec& spec);
std::vector<InfluenceEdge> effective_graph(const ContingencySpec& spec);

// Ready-made specs. `trend`: ring with length-coded responses at equal
// amplitude, for architecture ablations. `oneway`: ring with
// amplitude-coded responses buried in heavy distractor activity, for the
// attention-direction comparison. `imbalance`: the 80.2/18.3/1.3/0.2 skew.
ContingencySpec trend_spec();
ContingencySpec oneway_spec();
ContingencySpec imbalance_spec();

struct PersonTruth {
  std::size_t person = 0;
  ResponseCategory category = ResponseCategory::kStrong;
  int label = 0;
  long source = -1;          // -1 when no incoming influence edge
  long event_onset = -1;     // source event window start
  long lag = -1;
  long response_onset = -1;  // event_onset + lag
  std::size_t event_len = 0;
};

struct SampleTruth {
  std::size_t sample = 0;
  std::vector<PersonTruth> persons;
};

struct SyntheticDataset {
  std::vector<GroupWindow> windows;
  std::vector<SampleTruth> truth;
};

// Deterministic in (spec.seed, sample index); sample i does not depend on
// how many samples are requested.
SyntheticDataset generate(const ContingencySpec& spec, std::size_t n_samples);

void save_truth_jsonl(const std::vector<SampleTruth>& truth,
                      const std::string& path);
std::vector<SampleTruth> load_truth_jsonl(const std::string& path);

ContingencySpec spec_from_json_file(const std::string& path);
void save_spec_json(const ContingencySpec& spec, const std::string& path);

// Fraction of attention mass, over rows in the planted response window,
// that falls on the source-event columns; averaged across heads. 1.0 means
// the response timesteps attend nowhere but the contingent window.
double attention_lag_score(const AttentionWeights& weights,
                           const PersonTruth& truth);

// Same score for the analytic uniform-causal baseline A[i][j] = 1/(i+1).
double uniform_causal_lag_score(std::size_t k, const PersonTruth& truth);

}  // namespace multipar
