#pragma once

#include "json.hpp"
#include "multipar/model.hpp"
#include "multipar/training.hpp"

namespace multipar {

// JSON round trips for every config block. Parsers accept partial objects
// (missing keys keep their defaults) and reject unknown keys, so typos in
// config files fail loudly.

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json optimizer_config_to_json(const OptimizerConfig& cfg);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);

nlohmann::json focal_config_to_json(const FocalConfig& cfg);
FocalConfig focal_config_from_json(const nlohmann::json& j);

nlohmann::json train_options_to_json(const TrainOptions& cfg);
TrainOptions train_options_from_json(const nlohmann::json& j);

}  // namespace multipar
