#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "pdx/checkpoint.hpp"
#include "pdx/config.hpp"

namespace pdx {

/// Stream ids under the run seed, one per pipeline stage.
namespace streams {
inline constexpr std::uint64_t multimodal_data = 1;
inline constexpr std::uint64_t tabular_data = 2;
inline constexpr std::uint64_t split = 3;
inline constexpr std::uint64_t engine = 4;
inline constexpr std::uint64_t mmtm = 5;
inline constexpr std::uint64_t random_mmtm = 6;
inline constexpr std::uint64_t dpt = 7;
inline constexpr std::uint64_t mask_eval = 8;
}  // namespace streams

// --- model persistence -------------------------------------------------------

void save_engine(const Engine& engine, const PriorTaskConfig& prior, const std::filesystem::path& path,
                 StorageType storage = StorageType::f64);
Engine load_engine(const std::filesystem::path& path);

void save_mmtm(const Mmtm& model, const std::filesystem::path& path, StorageType storage = StorageType::f64);
Mmtm load_mmtm(const std::filesystem::path& path);

void save_adapter(const Adapter& adapter, const DptConfig& cfg, const std::filesystem::path& path,
                  StorageType storage = StorageType::f64);
Adapter load_adapter(const std::filesystem::path& path);

nlohmann::json schema_to_json(const TabularSchema& schema);
TabularSchema schema_from_json(const nlohmann::json& j);

// --- stages ------------------------------------------------------------------

MultimodalDataset generate_multimodal(const RunConfig& cfg);
TabularDataset generate_tabular(const RunConfig& cfg);

/// The stratified train/validation/test split of the multimodal data.
SplitIndices multimodal_split(const RunConfig& cfg, std::span<const int> labels);

/// Copy of the data with missing cells replaced by train-split means.
MultimodalDataset imputed(const MultimodalDataset& data, const SplitIndices& split);

EnginePretrainResult run_engine_pretraining(const RunConfig& cfg,
                                            std::function<void(std::size_t, double)> on_step = {});
/// Imputes, then pretrains on the train split.
MmtmPretrainResult run_mmtm_pretraining(const RunConfig& cfg, const MultimodalDataset& raw,
                                        std::function<void(std::size_t, double)> on_epoch = {});

/// Fused features from a trained extractor and from a random-init one with
/// the same architecture and schema.
FeatureBench make_feature_bench(const RunConfig& cfg, const MultimodalDataset& raw, const Mmtm& trained);

// --- manifests ---------------------------------------------------------------

/// `git describe` of the source tree at build time.
std::string build_git_describe();

/// {command, config, config_hash, seed, seeds, git_describe} plus `extra`.
nlohmann::json make_manifest(const std::string& command, const RunConfig& cfg,
                             const nlohmann::json& extra = nlohmann::json::object());

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace pdx
