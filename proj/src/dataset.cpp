#include "multipar/dataset.hpp"

#include <fstream>

#include "json.hpp"

namespace multipar {

using nlohmann::json;

const char* engagement_class_name(EngagementClass c) {
  switch (c) {
    case EngagementClass::kHighDisengagement: return "high_disengagement";
    case EngagementClass::kLowDisengagement: return "low_disengagement";
    case EngagementClass::kLowEngagement: return "low_engagement";
    case EngagementClass::kHighEngagement: return "high_engagement";
  }
  return "unknown";
}

EngagementClass bin_continuous_label(double v) {
  if (!(v >= -2.0 && v <= 2.0))
    throw DataError("engagement label " + std::to_string(v) +
                    " outside [-2, 2]");
  if (v > 1.0) return EngagementClass::kHighEngagement;
  if (v > 0.0) return EngagementClass::kLowEngagement;
  if (v > -1.0) return EngagementClass::kLowDisengagement;
  return EngagementClass::kHighDisengagement;
}

Tensor GroupWindow::person_features(std::size_t p) const {
  return index_first(features, p);
}

void validate_window(const GroupWindow& w) {
  if (!w.features.defined() || w.features.rank() != 3)
    throw DataError("window '" + w.group_id + "': features must have 3 axes");
  if (w.persons() < 2 || w.timesteps() < 1 || w.feature_dim() < 1)
    throw DataError("window '" + w.group_id + "': needs P >= 2, k >= 1, F >= 1, got " +
                    shape_string(w.features.shape()));
  if (w.labels.size() != w.persons())
    throw DataError("window '" + w.group_id + "': " +
                    std::to_string(w.labels.size()) + " labels for " +
                    std::to_string(w.persons()) + " persons");
  for (int label : w.labels)
    if (label < 0 || label >= kNumClasses)
      throw DataError("window '" + w.group_id + "': label " +
                      std::to_string(label) + " outside {0..3}");
}

namespace {

GroupWindow window_from_json(const json& j) {
  GroupWindow w;
  w.group_id = j.at("group_id").get<std::string>();
  w.t = j.at("t").get<long>();
  const json& feats = j.at("features");
  const std::size_t p = feats.size();
  if (p == 0) throw DataError("empty features array");
  const std::size_t k = feats.at(0).size();
  if (k == 0) throw DataError("empty time axis");
  const std::size_t f = feats.at(0).at(0).size();
  std::vector<double> data;
  data.reserve(p * k * f);
  for (const json& person : feats) {
    if (person.size() != k) throw DataError("ragged time axis");
    for (const json& step : person) {
      if (step.size() != f) throw DataError("ragged feature axis");
      for (const json& v : step) data.push_back(v.get<double>());
    }
  }
  w.features = Tensor::from_data({p, k, f}, std::move(data));
  w.labels = j.at("labels").get<std::vector<int>>();
  validate_window(w);
  return w;
}

json window_to_json(const GroupWindow& w) {
  json feats = json::array();
  const std::size_t p = w.persons(), k = w.timesteps(), f = w.feature_dim();
  const auto data = w.features.data();
  for (std::size_t i = 0; i < p; ++i) {
    json person = json::array();
    for (std::size_t t = 0; t < k; ++t) {
      json step = json::array();
      for (std::size_t c = 0; c < f; ++c)
        step.push_back(data[(i * k + t) * f + c]);
      person.push_back(std::move(step));
    }
    feats.push_back(std::move(person));
  }
  return json{{"group_id", w.group_id},
              {"t", w.t},
              {"features", std::move(feats)},
              {"labels", w.labels}};
}

}  // namespace

std::vector<GroupWindow> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::vector<GroupWindow> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    GroupWindow w;
    try {
      w = window_from_json(json::parse(line));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": parse error: " + e.what());
    }
    if (!samples.empty()) {
      const GroupWindow& first = samples.front();
      if (w.persons() != first.persons() ||
          w.timesteps() != first.timesteps() ||
          w.feature_dim() != first.feature_dim())
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": schema error: dimensions " +
                        shape_string(w.features.shape()) +
                        " differ from first record " +
                        shape_string(first.features.shape()));
    }
    samples.push_back(std::move(w));
  }
  return samples;
}

void save_jsonl(const std::vector<GroupWindow>& samples,
                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file: " + path);
  for (const GroupWindow& w : samples) {
    validate_window(w);
    out << window_to_json(w).dump() << '\n';
  }
  if (!out) throw DataError("write failure on " + path);
}

}  // namespace multipar
