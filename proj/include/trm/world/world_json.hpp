#pragma once

#include "json.hpp"
#include "trm/world/world.hpp"

namespace trm::world {

void to_json(nlohmann::json& j, const WorldConfig& c);
/// Missing keys keep their defaults; unknown keys and bad types throw ConfigError.
void from_json(const nlohmann::json& j, WorldConfig& c);

void to_json(nlohmann::json& j, const BayesModel& b);

}  // namespace trm::world
