#pragma once

#include <string>
#include <vector>

#include "multipar/tensor.hpp"

namespace multipar {

// Four-way engagement classes, ordered from most disengaged to most engaged.
enum class EngagementClass : int {
  kHighDisengagement = 0,
  kLowDisengagement = 1,
  kLowEngagement = 2,
  kHighEngagement = 3,
};

inline constexpr int kNumClasses = 4;

const char* engagement_class_name(EngagementClass c);

// Bins a continuous annotation v in [-2, 2] into the four classes:
// (1,2] high engagement, (0,1] low engagement, (-1,0] low disengagement,
// [-2,-1] high disengagement. The closed lower endpoint keeps the four
// preimages a partition of [-2, 2].
EngagementClass bin_continuous_label(double v);

// One training sample: P persons observed over k timesteps with F features
// each, plus a class label per person.
struct GroupWindow {
  std::string group_id;
  long t = 0;               // frame index of the prediction time
  Tensor features;          // [P x k x F]
  std::vector<int> labels;  // length P, values in {0..3}

  std::size_t persons() const { return features.dim(0); }
  std::size_t timesteps() const { return features.dim(1); }
  std::size_t feature_dim() const { return features.dim(2); }

  // Person p's [k x F] slice.
  Tensor person_features(std::size_t p) const;
};

// Throws DataError unless the window satisfies the schema (3 axes,
// P >= 2, k >= 1, F >= 1, labels of length P in range).
void validate_window(const GroupWindow& w);

// JSON-lines round trip. Each line is one window:
//   {"group_id": ..., "t": ..., "features": [person][time][feature],
//    "labels": [...]}
// All windows in one file must share (P, k, F). Parse failures carry the
// 1-based line number; saving then loading reproduces finite floats
// bit-exactly.
std::vector<GroupWindow> load_jsonl(const std::string& path);
void save_jsonl(const std::vector<GroupWindow>& samples,
                const std::string& path);

}  // namespace multipar
