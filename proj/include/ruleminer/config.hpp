#pragma once

#include <json.hpp>
#include <string>

#include "ruleminer/data_io.hpp"
#include "ruleminer/model.hpp"
#include "ruleminer/training.hpp"

namespace ruleminer {

// Resolved run configuration. JSON parsing is strict: unknown keys anywhere
// are rejected so misspelled options cannot silently fall back to defaults.
struct RunConfig {
  // data: either a dataset path (synth dir or CMAPSS file) or an inline
  // synth generator spec
  std::string data_path;  // empty means inline synth
  SynthConfig synth;
  bool inline_synth = true;

  ModelConfig model;
  TrainConfig train;
  AblationFlags flags;
  WindowingConfig windowing;
  MiningParams mining;
};

RunConfig default_run_config();
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);

// FNV-1a 64 of the canonical JSON dump, as 16 hex chars.
std::string config_fingerprint(const RunConfig& cfg);

}  // namespace ruleminer
