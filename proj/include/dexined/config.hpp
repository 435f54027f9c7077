#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dexined/augment.hpp"
#include "dexined/eval.hpp"
#include "dexined/model.hpp"
#include "dexined/supervision.hpp"
#include "dexined/training.hpp"

namespace dexined {

// Every tunable of a run. JSON sections: "model", "train", "augment", "eval",
// "supervision", plus a top-level "seed" that feeds model init and training.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;
  MatchConfig eval;
  SupervisionConfig supervision;

  void validate() const;
};

// Unknown keys and wrongly typed values are config errors.
RunConfig run_config_from_json(const std::string& json_text);
std::string run_config_to_json(const RunConfig& config);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json_text);

// defaults <- DEXINED_SEED <- config file (may be empty path) <- overrides
// (JSON merge patch, may be empty). The result is validated.
RunConfig resolve_run_config(const std::filesystem::path& file, const std::string& overrides_json);

// Value of DEXINED_SEED when set and well formed.
bool seed_from_environment(std::uint64_t& seed);

}  // namespace dexined
