#include "multipar/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"

namespace multipar {

using nlohmann::json;

namespace {

std::uint64_t mix_sample_seed(std::uint64_t seed, std::uint64_t sample) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (sample + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<double> random_unit_vector(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(dim);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (double& x : v) {
      x = dist(rng);
      norm2 += x * x;
    }
  } while (norm2 < 1e-12);
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return v;
}

// Half-sine envelope over len steps, peak amplitude 1.
double envelope(std::size_t j, std::size_t len) {
  return std::sin(std::numbers::pi * (static_cast<double>(j) + 0.5) /
                  static_cast<double>(len));
}

// Unit vector at the requested cosine to u.
std::vector<double> blend_direction(const std::vector<double>& u,
                                    double cosine, std::mt19937_64& rng) {
  const std::size_t dim = u.size();
  std::vector<double> w;
  double norm2 = 0.0;
  do {
    w = random_unit_vector(dim, rng);
    double dot = 0.0;
    for (std::size_t c = 0; c < dim; ++c) dot += w[c] * u[c];
    norm2 = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      w[c] -= dot * u[c];
      norm2 += w[c] * w[c];
    }
  } while (norm2 < 1e-12);
  const double ortho = std::sqrt(1.0 - cosine * cosine) / std::sqrt(norm2);
  std::vector<double> dir(dim);
  for (std::size_t c = 0; c < dim; ++c) dir[c] = cosine * u[c] + ortho * w[c];
  return dir;
}

}  // namespace

const char* response_category_name(ResponseCategory c) {
  switch (c) {
    case ResponseCategory::kStrong: return "strong";
    case ResponseCategory::kWeak: return "weak";
    case ResponseCategory::kAnti: return "anti";
    case ResponseCategory::kFrozen: return "frozen";
  }
  return "unknown";
}

const char* response_coding_name(ResponseCoding c) {
  switch (c) {
    case ResponseCoding::kAmplitude: return "amplitude";
    case ResponseCoding::kFidelity: return "fidelity";
    case ResponseCoding::kRelative: return "relative";
  }
  return "unknown";
}

std::vector<InfluenceEdge> effective_graph(const ContingencySpec& spec) {
  if (!spec.influence_graph.empty()) return spec.influence_graph;
  std::vector<InfluenceEdge> ring;
  for (std::size_t p = 0; p < spec.persons; ++p)
    ring.push_back(InfluenceEdge{p, (p + 1) % spec.persons});
  return ring;
}

void validate_spec(const ContingencySpec& spec) {
  if (spec.persons < 2) throw ConfigError("spec: persons must be >= 2");
  if (spec.feature_dim < 1) throw ConfigError("spec: feature_dim must be >= 1");
  if (!(spec.lag_min >= 1 && spec.lag_min <= spec.lag_max &&
        spec.lag_max < spec.timesteps))
    throw ConfigError("spec: need 1 <= lag_min <= lag_max < timesteps");
  if (spec.event_len < 1) throw ConfigError("spec: event_len must be >= 1");
  if (spec.timesteps < spec.lag_max + spec.event_len + 2)
    throw ConfigError("spec: timesteps too short for lag_max + event_len (" +
                      std::to_string(spec.timesteps) + " < " +
                      std::to_string(spec.lag_max + spec.event_len + 2) + ")");
  for (const InfluenceEdge& e : effective_graph(spec)) {
    if (e.source >= spec.persons || e.target >= spec.persons)
      throw ConfigError("spec: influence edge references person outside [0, " +
                        std::to_string(spec.persons) + ")");
    if (e.source == e.target)
      throw ConfigError("spec: self-influence edges are not allowed");
  }
  double mix_sum = 0.0;
  for (double m : spec.mixture) {
    if (m < 0.0) throw ConfigError("spec: mixture weights must be >= 0");
    mix_sum += m;
  }
  if (std::abs(mix_sum - 1.0) > 1e-9)
    throw ConfigError("spec: mixture must sum to 1");
  for (int cls : spec.class_rule)
    if (cls < 0 || cls >= kNumClasses)
      throw ConfigError("spec: class_rule entries must be in {0..3}");
  if (spec.noise_sigma < 0.0) throw ConfigError("spec: noise_sigma must be >= 0");
  if (!(spec.frozen_damp >= 0.0 && spec.frozen_damp <= 1.0))
    throw ConfigError("spec: frozen_damp must be in [0, 1]");
  if (spec.strong_len > spec.event_len || spec.weak_len > spec.event_len)
    throw ConfigError("spec: response copy lengths cannot exceed event_len");
  if (!(spec.weak_fidelity >= 0.0 && spec.weak_fidelity <= 1.0))
    throw ConfigError("spec: weak_fidelity must be in [0, 1]");
  if (!(spec.resp_amp_min > 0.0 && spec.resp_amp_min <= spec.resp_amp_max))
    throw ConfigError("spec: bad response amplitude range");
  if (!(spec.strong_ratio > 0.0 && spec.weak_ratio > 0.0 &&
        spec.anti_ratio > 0.0))
    throw ConfigError("spec: amplitude ratios must be positive");
  if (spec.coding == ResponseCoding::kRelative) {
    std::vector<std::size_t> out_degree(spec.persons, 0);
    for (const InfluenceEdge& e : effective_graph(spec)) ++out_degree[e.source];
    for (std::size_t d : out_degree)
      if (d > 1)
        throw ConfigError("spec: relative coding requires at most one "
                          "responder per source");
  }
  if (spec.distractor_len_min < 1 ||
      spec.distractor_len_min > spec.distractor_len_max ||
      spec.distractor_len_max > spec.timesteps)
    throw ConfigError("spec: bad distractor length range");
  if (!(spec.distractor_amp_min >= 0.0 &&
        spec.distractor_amp_min <= spec.distractor_amp_max))
    throw ConfigError("spec: bad distractor amplitude range");
}

ContingencySpec trend_spec() {
  ContingencySpec s;  // fidelity-coded: labels live only in the match angle
  s.persons = 3;
  s.timesteps = 24;
  s.feature_dim = 20;
  s.lag_min = 2;  // fixed lag inside the event window keeps the planted
  s.lag_max = 2;  // association reachable through positional attention
  s.event_len = 6;
  s.event_gain = 4.0;   // unused under relative coding
  s.response_gain = 1.0;
  s.coding = ResponseCoding::kRelative;
  s.resp_amp_min = 1.2;
  s.resp_amp_max = 1.4;
  s.strong_ratio = 0.22;  // event amp ~ 5.9: highly salient -> high engagement
  s.weak_ratio = 0.42;    // event amp ~ 3.1
  s.anti_ratio = 0.78;    // event amp ~ 1.7: barely salient -> disengaging
  s.distractors = 1;
  s.distractor_amp_min = 0.6;
  s.distractor_amp_max = 1.1;
  s.mixture = {0.40, 0.30, 0.20, 0.10};
  s.noise_sigma = 0.15;
  return s;
}

ContingencySpec oneway_spec() {
  ContingencySpec s;  // amplitude-coded responses under heavy distraction
  s.persons = 3;
  s.timesteps = 24;
  s.feature_dim = 12;
  s.lag_min = 2;
  s.lag_max = 3;
  s.event_len = 6;
  s.event_gain = 4.0;
  s.response_gain = 4.0;
  s.coding = ResponseCoding::kAmplitude;
  s.strong_len = 0;
  s.weak_len = 0;  // full length, smaller amplitude
  s.weak_scale = 0.45;
  s.anti_decoy = true;
  s.distractors = 3;
  s.mixture = {0.40, 0.30, 0.20, 0.10};
  s.noise_sigma = 0.25;
  return s;
}

ContingencySpec imbalance_spec() {
  ContingencySpec s;  // amplitude ladder, readable enough to train quickly
  s.persons = 5;
  s.timesteps = 16;
  s.feature_dim = 16;
  s.lag_min = 2;
  s.lag_max = 3;
  s.event_len = 6;
  s.event_gain = 3.5;
  s.response_gain = 3.5;
  s.coding = ResponseCoding::kAmplitude;
  s.strong_len = 0;
  s.weak_len = 0;
  s.weak_scale = 0.45;
  s.anti_decoy = false;
  s.anti_scale = 0.2;
  s.distractors = 1;
  s.distractor_amp_min = 0.3;
  s.distractor_amp_max = 0.6;
  s.mixture = {0.802, 0.183, 0.013, 0.002};
  s.noise_sigma = 0.2;
  return s;
}

SyntheticDataset generate(const ContingencySpec& spec, std::size_t n_samples) {
  validate_spec(spec);
  if (n_samples < 1) throw ConfigError("generate: n_samples must be >= 1");
  const std::vector<InfluenceEdge> graph = effective_graph(spec);
  const std::size_t p_count = spec.persons, k = spec.timesteps,
                    f = spec.feature_dim;

  SyntheticDataset out;
  out.windows.reserve(n_samples);
  out.truth.reserve(n_samples);

  for (std::size_t sample = 0; sample < n_samples; ++sample) {
    std::mt19937_64 rng(mix_sample_seed(spec.seed, sample));
    std::vector<double> data(p_count * k * f, 0.0);
    auto at = [&](std::size_t person, std::size_t t) {
      return data.data() + (person * k + t) * f;
    };

    // Source events, ascending person order for a fixed draw order. The
    // bumps are written after the amplitudes are known.
    const std::size_t onset_max = k - spec.lag_max - spec.event_len - 1;
    std::uniform_int_distribution<std::size_t> onset_dist(1, onset_max);
    std::vector<long> event_onset(p_count, -1);
    std::vector<std::vector<double>> signature(p_count);
    for (std::size_t p = 0; p < p_count; ++p) {
      const bool is_source =
          std::any_of(graph.begin(), graph.end(),
                      [p](const InfluenceEdge& e) { return e.source == p; });
      if (!is_source) continue;
      event_onset[p] = static_cast<long>(onset_dist(rng));
      signature[p] = random_unit_vector(f, rng);
    }

    // Response categories for every person.
    std::vector<ResponseCategory> category(p_count);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t p = 0; p < p_count; ++p) {
      const double u = unit(rng);
      double acc = 0.0;
      int chosen = 3;
      for (int c = 0; c < 4; ++c) {
        acc += spec.mixture[static_cast<std::size_t>(c)];
        if (u < acc) {
          chosen = c;
          break;
        }
      }
      category[p] = static_cast<ResponseCategory>(chosen);
    }

    // Relative coding: one response-amplitude draw per person from a
    // class-independent marginal.
    std::vector<double> resp_amp(p_count, 0.0);
    if (spec.coding == ResponseCoding::kRelative) {
      std::uniform_real_distribution<double> log_amp(
          std::log(spec.resp_amp_min), std::log(spec.resp_amp_max));
      for (std::size_t p = 0; p < p_count; ++p)
        resp_amp[p] = spec.response_gain * std::exp(log_amp(rng));
    }

    // Planted responses along the influence edges.
    std::uniform_int_distribution<std::size_t> lag_dist(spec.lag_min,
                                                        spec.lag_max);
    std::vector<PersonTruth> truth(p_count);
    for (std::size_t p = 0; p < p_count; ++p) {
      truth[p].person = p;
      truth[p].category = category[p];
      truth[p].label = spec.class_rule[static_cast<std::size_t>(category[p])];
      truth[p].event_len = spec.event_len;
    }
    auto add_bump = [&](std::size_t person, std::size_t onset, std::size_t len,
                        double amp, const std::vector<double>& dir) {
      for (std::size_t j = 0; j < len && onset + j < k; ++j) {
        double* row = at(person, onset + j);
        const double a = amp * envelope(j, len);
        for (std::size_t c = 0; c < f; ++c) row[c] += a * dir[c];
      }
    };

    const std::size_t strong_len =
        spec.strong_len ? spec.strong_len : spec.event_len;
    const std::size_t weak_len = spec.weak_len ? spec.weak_len : spec.event_len;
    std::uniform_int_distribution<std::size_t> decoy_len_dist(
        spec.distractor_len_min, spec.distractor_len_max);

    for (const InfluenceEdge& e : graph) {
      const std::size_t lag = lag_dist(rng);
      if (truth[e.target].source >= 0) continue;  // first incoming edge wins
      truth[e.target].source = static_cast<long>(e.source);
      truth[e.target].event_onset = event_onset[e.source];
      truth[e.target].lag = static_cast<long>(lag);
      truth[e.target].response_onset =
          event_onset[e.source] + static_cast<long>(lag);
    }

    // Event amplitudes. Under relative coding the event amplitude encodes
    // the responder's class as a ratio against its class-independent
    // response amplitude; anti and frozen responders are assigned a
    // ratio-mimicking amplitude so the event marginal stays uninformative.
    std::vector<double> event_amp(p_count, spec.event_gain);
    if (spec.coding == ResponseCoding::kRelative) {
      std::uniform_int_distribution<int> ratio_pick(0, 2);
      auto category_ratio = [&](ResponseCategory rc) {
        switch (rc) {
          case ResponseCategory::kStrong: return spec.strong_ratio;
          case ResponseCategory::kWeak: return spec.weak_ratio;
          case ResponseCategory::kAnti: return spec.anti_ratio;
          case ResponseCategory::kFrozen: break;
        }
        // Frozen responders leave no ratio signal; mimic one at random so
        // the event marginal stays uninformative about them.
        const int pick = ratio_pick(rng);
        return pick == 0 ? spec.strong_ratio
                         : pick == 1 ? spec.weak_ratio : spec.anti_ratio;
      };
      for (std::size_t p = 0; p < p_count; ++p) {
        if (event_onset[p] < 0) continue;
        long responder = -1;
        for (const InfluenceEdge& e : graph)
          if (e.source == p &&
              truth[e.target].source == static_cast<long>(p)) {
            responder = static_cast<long>(e.target);
            break;
          }
        if (responder >= 0) {
          event_amp[p] =
              resp_amp[static_cast<std::size_t>(responder)] /
              category_ratio(category[static_cast<std::size_t>(responder)]);
        } else {
          event_amp[p] = spec.response_gain *
                         std::exp(std::uniform_real_distribution<double>(
                             std::log(spec.resp_amp_min),
                             std::log(spec.resp_amp_max))(rng)) /
                         category_ratio(ResponseCategory::kFrozen);
        }
      }
    }
    for (std::size_t p = 0; p < p_count; ++p) {
      if (event_onset[p] < 0) continue;
      add_bump(p, static_cast<std::size_t>(event_onset[p]), spec.event_len,
               event_amp[p], signature[p]);
    }

    // Responses.
    for (const InfluenceEdge& e : graph) {
      if (truth[e.target].source != static_cast<long>(e.source))
        continue;  // a different edge claimed this responder
      const std::size_t onset =
          static_cast<std::size_t>(truth[e.target].response_onset);
      if (spec.coding == ResponseCoding::kRelative) {
        // Faithful constant-amplitude replay for every moving category; the
        // class lives in the source stream's event amplitude.
        if (category[e.target] != ResponseCategory::kFrozen)
          add_bump(e.target, onset, spec.event_len, resp_amp[e.target],
                   signature[e.source]);
      } else if (spec.coding == ResponseCoding::kFidelity) {
        // One bump per moving category with identical timing, length and
        // amplitude; only its angle to the signature carries the label.
        switch (category[e.target]) {
          case ResponseCategory::kStrong:
            add_bump(e.target, onset, spec.event_len, spec.response_gain,
                     signature[e.source]);
            break;
          case ResponseCategory::kWeak:
            add_bump(e.target, onset, spec.event_len, spec.response_gain,
                     blend_direction(signature[e.source], spec.weak_fidelity,
                                     rng));
            break;
          case ResponseCategory::kAnti:
            add_bump(e.target, onset, spec.event_len, spec.response_gain,
                     random_unit_vector(f, rng));
            break;
          case ResponseCategory::kFrozen:
            break;
        }
      } else {
        switch (category[e.target]) {
          case ResponseCategory::kStrong:
            add_bump(e.target, onset, strong_len, spec.response_gain,
                     signature[e.source]);
            break;
          case ResponseCategory::kWeak:
            add_bump(e.target, onset, weak_len,
                     spec.response_gain * spec.weak_scale,
                     signature[e.source]);
            break;
          case ResponseCategory::kAnti:
            if (spec.anti_decoy) {
              // Non-contingent activity: a response-like bump at a time and
              // direction unrelated to the source event.
              const std::size_t len = decoy_len_dist(rng);
              std::uniform_int_distribution<std::size_t> d_onset(0, k - len);
              const std::size_t decoy_onset = d_onset(rng);
              const std::vector<double> dir = random_unit_vector(f, rng);
              add_bump(e.target, decoy_onset, len, spec.response_gain, dir);
            } else {
              add_bump(e.target, onset, spec.event_len,
                       -spec.response_gain * spec.anti_scale,
                       signature[e.source]);
            }
            break;
          case ResponseCategory::kFrozen:
            break;  // no response; the whole stream is damped
        }
      }
    }

    // Distractor bumps; frozen persons barely move.
    std::uniform_real_distribution<double> d_amp(spec.distractor_amp_min,
                                                 spec.distractor_amp_max);
    for (std::size_t p = 0; p < p_count; ++p) {
      const double damp =
          category[p] == ResponseCategory::kFrozen ? spec.frozen_damp : 1.0;
      for (std::size_t d = 0; d < spec.distractors; ++d) {
        const std::size_t len = decoy_len_dist(rng);
        std::uniform_int_distribution<std::size_t> d_onset(0, k - len);
        const std::size_t onset = d_onset(rng);
        const std::vector<double> dir = random_unit_vector(f, rng);
        const double amp = d_amp(rng) * spec.response_gain * damp;
        add_bump(p, onset, len, amp, dir);
      }
    }

    // Observation noise.
    if (spec.noise_sigma > 0.0) {
      std::normal_distribution<double> noise(0.0, spec.noise_sigma);
      for (std::size_t p = 0; p < p_count; ++p) {
        const double damp =
            category[p] == ResponseCategory::kFrozen ? spec.frozen_damp : 1.0;
        for (std::size_t t = 0; t < k; ++t) {
          double* row = at(p, t);
          for (std::size_t c = 0; c < f; ++c) row[c] += damp * noise(rng);
        }
      }
    }

    GroupWindow w;
    w.group_id = "g" + std::to_string(sample / spec.windows_per_group);
    w.t = static_cast<long>(k + sample);
    w.features = Tensor::from_data({p_count, k, f}, std::move(data));
    for (std::size_t p = 0; p < p_count; ++p) w.labels.push_back(truth[p].label);
    validate_window(w);
    out.windows.push_back(std::move(w));
    out.truth.push_back(SampleTruth{sample, std::move(truth)});
  }
  return out;
}

// ---- truth files -----------------------------------------------------------

void save_truth_jsonl(const std::vector<SampleTruth>& truth,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write truth file: " + path);
  for (const SampleTruth& s : truth) {
    json persons = json::array();
    for (const PersonTruth& p : s.persons)
      persons.push_back(
          {{"person", p.person},
           {"category", response_category_name(p.category)},
           {"label", p.label},
           {"source", p.source},
           {"event_onset", p.event_onset},
           {"lag", p.lag},
           {"response_onset", p.response_onset},
           {"event_len", p.event_len}});
    out << json{{"sample", s.sample}, {"persons", std::move(persons)}}.dump()
        << '\n';
  }
}

namespace {

ResponseCategory category_from_name(const std::string& name) {
  for (int c = 0; c < 4; ++c)
    if (name == response_category_name(static_cast<ResponseCategory>(c)))
      return static_cast<ResponseCategory>(c);
  throw DataError("unknown response category: " + name);
}

}  // namespace

std::vector<SampleTruth> load_truth_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open truth file: " + path);
  std::vector<SampleTruth> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      SampleTruth s;
      s.sample = j.at("sample").get<std::size_t>();
      for (const json& pj : j.at("persons")) {
        PersonTruth p;
        p.person = pj.at("person").get<std::size_t>();
        p.category = category_from_name(pj.at("category").get<std::string>());
        p.label = pj.at("label").get<int>();
        p.source = pj.at("source").get<long>();
        p.event_onset = pj.at("event_onset").get<long>();
        p.lag = pj.at("lag").get<long>();
        p.response_onset = pj.at("response_onset").get<long>();
        p.event_len = pj.at("event_len").get<std::size_t>();
        s.persons.push_back(p);
      }
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": parse error: " + e.what());
    }
  }
  return out;
}

// ---- spec JSON ----------------------------------------------------------------

namespace {

const std::array<const char*, 4> kCategoryKeys = {"strong", "weak", "anti",
                                                  "frozen"};

}  // namespace

ContingencySpec spec_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spec file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("spec parse error in " + path + ": " + e.what());
  }
  ContingencySpec s;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "persons") s.persons = value.get<std::size_t>();
      else if (key == "timesteps") s.timesteps = value.get<std::size_t>();
      else if (key == "feature_dim") s.feature_dim = value.get<std::size_t>();
      else if (key == "lag_min") s.lag_min = value.get<std::size_t>();
      else if (key == "lag_max") s.lag_max = value.get<std::size_t>();
      else if (key == "response_gain") s.response_gain = value.get<double>();
      else if (key == "influence_graph") {
        s.influence_graph.clear();
        for (const json& e : value)
          s.influence_graph.push_back(
              InfluenceEdge{e.at(0).get<std::size_t>(),
                            e.at(1).get<std::size_t>()});
      } else if (key == "noise_sigma") s.noise_sigma = value.get<double>();
      else if (key == "class_rule") {
        for (std::size_t c = 0; c < 4; ++c)
          s.class_rule[c] = value.at(kCategoryKeys[c]).get<int>();
      } else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else if (key == "mixture") {
        for (std::size_t c = 0; c < 4; ++c)
          s.mixture[c] = value.at(kCategoryKeys[c]).get<double>();
      } else if (key == "event_len") s.event_len = value.get<std::size_t>();
      else if (key == "event_gain") s.event_gain = value.get<double>();
      else if (key == "coding") {
        const std::string name = value.get<std::string>();
        if (name == "amplitude") s.coding = ResponseCoding::kAmplitude;
        else if (name == "fidelity") s.coding = ResponseCoding::kFidelity;
        else if (name == "relative") s.coding = ResponseCoding::kRelative;
        else throw ConfigError("unknown response coding: " + name);
      }
      else if (key == "strong_len") s.strong_len = value.get<std::size_t>();
      else if (key == "weak_fidelity") s.weak_fidelity = value.get<double>();
      else if (key == "resp_amp_min") s.resp_amp_min = value.get<double>();
      else if (key == "resp_amp_max") s.resp_amp_max = value.get<double>();
      else if (key == "strong_ratio") s.strong_ratio = value.get<double>();
      else if (key == "weak_ratio") s.weak_ratio = value.get<double>();
      else if (key == "anti_ratio") s.anti_ratio = value.get<double>();
      else if (key == "weak_len") s.weak_len = value.get<std::size_t>();
      else if (key == "weak_scale") s.weak_scale = value.get<double>();
      else if (key == "anti_decoy") s.anti_decoy = value.get<bool>();
      else if (key == "anti_scale") s.anti_scale = value.get<double>();
      else if (key == "frozen_damp") s.frozen_damp = value.get<double>();
      else if (key == "distractors") s.distractors = value.get<std::size_t>();
      else if (key == "distractor_len_min")
        s.distractor_len_min = value.get<std::size_t>();
      else if (key == "distractor_len_max")
        s.distractor_len_max = value.get<std::size_t>();
      else if (key == "distractor_amp_min")
        s.distractor_amp_min = value.get<double>();
      else if (key == "distractor_amp_max")
        s.distractor_amp_max = value.get<double>();
      else if (key == "windows_per_group")
        s.windows_per_group = value.get<std::size_t>();
      else throw ConfigError("unknown spec key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError("bad spec value in " + path + ": " + e.what());
  }
  validate_spec(s);
  return s;
}

void save_spec_json(const ContingencySpec& spec, const std::string& path) {
  json graph = json::array();
  for (const InfluenceEdge& e : effective_graph(spec))
    graph.push_back({e.source, e.target});
  json mixture, rule;
  for (std::size_t c = 0; c < 4; ++c) {
    mixture[kCategoryKeys[c]] = spec.mixture[c];
    rule[kCategoryKeys[c]] = spec.class_rule[c];
  }
  json j{{"persons", spec.persons},
         {"timesteps", spec.timesteps},
         {"feature_dim", spec.feature_dim},
         {"lag_min", spec.lag_min},
         {"lag_max", spec.lag_max},
         {"response_gain", spec.response_gain},
         {"influence_graph", std::move(graph)},
         {"noise_sigma", spec.noise_sigma},
         {"class_rule", std::move(rule)},
         {"seed", spec.seed},
         {"mixture", std::move(mixture)},
         {"event_len", spec.event_len},
         {"event_gain", spec.event_gain},
         {"coding", response_coding_name(spec.coding)},
         {"weak_fidelity", spec.weak_fidelity},
         {"resp_amp_min", spec.resp_amp_min},
         {"resp_amp_max", spec.resp_amp_max},
         {"strong_ratio", spec.strong_ratio},
         {"weak_ratio", spec.weak_ratio},
         {"anti_ratio", spec.anti_ratio},
         {"strong_len", spec.strong_len},
         {"weak_len", spec.weak_len},
         {"weak_scale", spec.weak_scale},
         {"anti_decoy", spec.anti_decoy},
         {"anti_scale", spec.anti_scale},
         {"frozen_damp", spec.frozen_damp},
         {"distractors", spec.distractors},
         {"distractor_len_min", spec.distractor_len_min},
         {"distractor_len_max", spec.distractor_len_max},
         {"distractor_amp_min", spec.distractor_amp_min},
         {"distractor_amp_max", spec.distractor_amp_max},
         {"windows_per_group", spec.windows_per_group}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write spec file: " + path);
  out << j.dump(2) << '\n';
}

// ---- attention lag score -------------------------------------------------------

double attention_lag_score(const AttentionWeights& weights,
                           const PersonTruth& truth) {
  if (weights.heads == 0 || weights.k == 0)
    throw ShapeError("attention_lag_score: empty attention weights");
  if (truth.source < 0 || truth.event_onset < 0 || truth.lag < 0)
    throw DataError("attention_lag_score: truth has no planted response");
  const std::size_t k = weights.k;
  const std::size_t e0 = static_cast<std::size_t>(truth.event_onset);
  const std::size_t r0 = static_cast<std::size_t>(truth.response_onset);
  if (e0 + truth.event_len > k || r0 >= k)
    throw ShapeError("attention_lag_score: truth windows exceed k = " +
                     std::to_string(k));
  const std::size_t e1 = e0 + truth.event_len;
  const std::size_t r1 = std::min(k, r0 + truth.event_len);

  double total = 0.0;
  for (std::size_t h = 0; h < weights.heads; ++h) {
    double mass = 0.0;
    for (std::size_t i = r0; i < r1; ++i)
      for (std::size_t j = e0; j < e1; ++j) mass += weights.at(h, i, j);
    total += mass / static_cast<double>(r1 - r0);
  }
  return total / static_cast<double>(weights.heads);
}

double uniform_causal_lag_score(std::size_t k, const PersonTruth& truth) {
  if (truth.source < 0 || truth.event_onset < 0 || truth.lag < 0)
    throw DataError("uniform_causal_lag_score: truth has no planted response");
  const std::size_t e0 = static_cast<std::size_t>(truth.event_onset);
  const std::size_t r0 = static_cast<std::size_t>(truth.response_onset);
  if (e0 + truth.event_len > k || r0 >= k)
    throw ShapeError("uniform_causal_lag_score: truth windows exceed k");
  const std::size_t e1 = e0 + truth.event_len;
  const std::size_t r1 = std::min(k, r0 + truth.event_len);
  double acc = 0.0;
  for (std::size_t i = r0; i < r1; ++i) {
    const std::size_t permitted = std::min(e1, i + 1);
    const std::size_t covered = permitted > e0 ? permitted - e0 : 0;
    acc += static_cast<double>(covered) / static_cast<double>(i + 1);
  }
  return acc / static_cast<double>(r1 - r0);
}

}  // namespace multipar
