#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "abd/align.hpp"
#include "abd/data.hpp"
#include "abd/denoiser.hpp"
#include "abd/energy.hpp"

namespace abd {

struct DataConfig {
  int n_complexes = 12;
  GenParams gen;
  AnnealParams anneal;
};

struct TrainConfig {
  int pretrain_steps = 500;
  double pretrain_lr = 1e-3;
  int steps = 4000;
  int batch = 4;
  double lr = 1e-3;
};

struct EvalConfig {
  int samples = 64;
  double temperature = 1.0;
};

/// Everything a command needs. Loaded from JSON as defaults < file <
/// command-line overrides.
struct RunConfig {
  std::uint64_t seed = 7;
  int schedule_steps = 100;
  double schedule_offset = 0.01;
  DenoiserConfig model;
  DataConfig data;
  TrainConfig train;
  AlignConfig align;
  EvalConfig eval;
  EnergyParams energy;

  void validate() const;  // throws ConfigError
};

nlohmann::json config_to_json(const RunConfig& cfg);
/// Unknown or mistyped keys are ConfigError.
RunConfig config_from_json(const nlohmann::json& j);

/// Parses "a.b.c=value" overrides; values are read as JSON when possible
/// and as strings otherwise.
std::pair<std::string, nlohmann::json> parse_override(const std::string& text);

/// Defaults, then the file at `path` (skipped when empty), then overrides.
RunConfig load_config(const std::string& path, const std::vector<std::pair<std::string, nlohmann::json>>& overrides = {});

/// Hash of the architecture and schedule sections: the part a checkpoint
/// must agree with.
std::string model_hash(const RunConfig& cfg);
std::string model_hash(const DenoiserConfig& model, int schedule_steps, double schedule_offset);
/// Hash of the whole configuration.
std::string config_hash(const RunConfig& cfg);

}  // namespace abd
