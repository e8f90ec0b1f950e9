#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "pdx/data.hpp"
#include "pdx/dpt.hpp"
#include "pdx/engine.hpp"
#include "pdx/eval.hpp"
#include "pdx/mmtm.hpp"

namespace pdx {

struct EngineTrainingConfig {
  std::size_t steps = 2000;
  std::size_t tasks_per_step = 4;
  double lr = 1e-3;
};

struct SplitConfig {
  double train = 0.7;
  double validation = 0.15;
  double test = 0.15;
};

/// Effective configuration of a run. Every field has a default; JSON input
/// may override any subset, and unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  EngineConfig engine;
  PriorTaskConfig prior;
  EngineTrainingConfig engine_training;
  SyntheticMultimodalConfig multimodal;
  TabularDatasetSpec tabular;
  SplitConfig split;
  MmtmConfig mmtm;
  DptConfig dpt;
  /// Seed count, ratio grid and baseline settings; its seed and dpt fields
  /// are taken from the top level.
  ExperimentConfig eval;

  void validate() const;
  /// Experiment settings with the run seed and dpt section applied.
  ExperimentConfig experiment() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Reads a JSON file; an empty path yields the defaults. PDX_SEED, when set,
/// overrides the seed.
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const EngineConfig& c);
nlohmann::json to_json(const PriorTaskConfig& c);
nlohmann::json to_json(const MmtmConfig& c);
nlohmann::json to_json(const DptConfig& c);
nlohmann::json to_json(const SyntheticMultimodalConfig& c);
nlohmann::json to_json(const TabularDatasetSpec& c);
EngineConfig engine_config_from_json(const nlohmann::json& j);
PriorTaskConfig prior_config_from_json(const nlohmann::json& j);
MmtmConfig mmtm_config_from_json(const nlohmann::json& j);
DptConfig dpt_config_from_json(const nlohmann::json& j);
SyntheticMultimodalConfig multimodal_config_from_json(const nlohmann::json& j);
TabularDatasetSpec tabular_spec_from_json(const nlohmann::json& j);

/// CRC32 of the compact JSON dump, as 8 hex digits.
std::string config_hash(const nlohmann::json& j);

}  // namespace pdx
