#pragma once

#include <json.hpp>

#include "hrn/loss.hpp"
#include "hrn/model.hpp"
#include "hrn/sim.hpp"

namespace hrn::io {

nlohmann::json model_config_to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json loss_config_to_json(const train::LossConfig& c);
train::LossConfig loss_config_from_json(const nlohmann::json& j);

nlohmann::json norm_stats_to_json(const train::NormStats& s);
train::NormStats norm_stats_from_json(const nlohmann::json& j);

}  // namespace hrn::io
