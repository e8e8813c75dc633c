#pragma once

// JSON run configuration: {"data": {...}, "train": {...}, "paths": {...}}.
// Every field is optional; unknown keys are rejected.

#include <filesystem>
#include <string>

#include "mhal/synth.hpp"
#include "mhal/trainer.hpp"

namespace mhal {

struct RunConfig {
  SynthConfig data;
  std::uint64_t split_seed = 0;  // few-shot subject choice
  TrainerConfig train;
  std::string data_dir = "data";
  std::string run_dir = "runs/run";
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
// Complete effective configuration, stable key order.
std::string config_to_json(const RunConfig& cfg);

}  // namespace mhal
