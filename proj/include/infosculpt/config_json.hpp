#pragma once

// JSON (de)serialization for the configuration structs. Missing keys keep
// their current value, so a partial config file overrides only what it names.

#include <json.hpp>

#include "infosculpt/data.hpp"
#include "infosculpt/losses.hpp"
#include "infosculpt/model.hpp"
#include "infosculpt/trainer.hpp"

namespace infosculpt {

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);
void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const LossBreakdown& b);
void to_json(nlohmann::json& j, const EvalReport& r);

}  // namespace infosculpt
