#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pdx/matrix.hpp"
#include "pdx/rng.hpp"

namespace pdx {

struct VolumeSpec {
  std::size_t depth = 32;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t patch = 8;

  void validate() const;
  std::size_t voxels() const { return depth * height * width; }
  std::size_t patch_count() const { return (depth / patch) * (height / patch) * (width / patch); }
  std::size_t patch_voxels() const { return patch * patch * patch; }
};

enum class ColumnKind { categorical, continuous };

struct TabularColumn {
  std::string name;
  ColumnKind kind = ColumnKind::continuous;
  int cardinality = 0;  // categorical only
  double mean = 0.0;    // continuous only, set by fit_standardization
  double stddev = 1.0;
};

struct TabularSchema {
  std::vector<TabularColumn> columns;

  std::size_t size() const { return columns.size(); }
  void validate() const;
  /// Fits continuous mean/std on the listed rows of a complete table.
  void fit_standardization(const Matrix& table, std::span<const std::size_t> rows);
  double standardize(std::size_t column, double value) const;
};

struct SyntheticMultimodalConfig {
  std::size_t samples = 600;
  std::size_t classes = 3;
  std::vector<double> class_priors = {0.45, 0.34, 0.21};
  VolumeSpec volume;
  std::size_t categorical_columns = 6;
  std::size_t continuous_columns = 14;
  int min_cardinality = 2;
  int max_cardinality = 5;
  /// Fraction of the class signal carried by each modality, in [0, 1].
  double coupling = 0.8;
  double label_noise = 0.05;
  double missing_rate = 0.05;
  double image_signal = 1.0;
  double tabular_signal = 1.0;
  double voxel_noise = 0.1;

  void validate() const;
};

/// Small volumes plus tabular records with labels. Categorical cells hold
/// integer codes; missing cells are flagged in `missing` (value unspecified).
struct MultimodalDataset {
  VolumeSpec volume;
  TabularSchema schema;
  std::size_t classes = 0;
  std::vector<float> volumes;
  Matrix tables;
  std::vector<std::uint8_t> missing;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const float> volume_of(std::size_t i) const {
    return {volumes.data() + i * volume.voxels(), volume.voxels()};
  }
};

/// Gaussian-mixture tabular benchmark description.
struct TabularDatasetSpec {
  std::string name = "synthetic";
  std::size_t samples = 2000;
  std::size_t features = 100;
  std::size_t classes = 5;
  std::size_t context = 400;
  bool balanced = true;
  /// Std of the class-mean coordinates relative to the unit noise scale.
  double separation = 0.35;

  void validate() const;
};

struct TabularDataset {
  Matrix features;
  std::vector<int> labels;
  std::size_t classes = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

MultimodalDataset gen_multimodal(const SyntheticMultimodalConfig& cfg, SeededRng& rng);
TabularDataset gen_tabular(const TabularDatasetSpec& spec, SeededRng& rng);

/// Stratified split. Global split sizes are round(fraction * n) for the
/// non-train parts; per-class quotas are distributed by largest remainder,
/// and the remainder goes to train. Fractions = {train, validation, test}.
SplitIndices split_stratified(std::span<const int> labels, std::span<const double> fractions, SeededRng& rng);

/// Replaces missing cells with column means computed over `fit_rows` only.
Matrix impute_mean(const Matrix& table, std::span<const std::uint8_t> missing, std::span<const std::size_t> fit_rows);

/// Stratified subset of `train` of size max(classes, round(ratio * |train|))
/// that contains every class present in `train`. ratio = 1 returns `train`.
std::vector<std::size_t> sample_context(std::span<const std::size_t> train, std::span<const int> labels,
                                        std::size_t classes, double ratio, SeededRng& rng);

/// Binary layout next to a JSON sidecar (dataset.json): volumes.f32,
/// tables.f64, missing.u8, labels.i32, all little-endian and row-major.
void save_multimodal(const MultimodalDataset& data, const std::filesystem::path& dir, const std::string& sidecar_extra);
MultimodalDataset load_multimodal(const std::filesystem::path& dir);

/// features.f64, labels.i32 and dataset.json.
void save_tabular(const TabularDataset& data, const TabularDatasetSpec& spec, const std::filesystem::path& dir,
                  const std::string& sidecar_extra);
TabularDataset load_tabular(const std::filesystem::path& dir, TabularDatasetSpec* spec = nullptr);

/// "multimodal" or "tabular", read from the sidecar.
std::string dataset_kind(const std::filesystem::path& dir);

}  // namespace pdx
