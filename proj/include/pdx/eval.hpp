#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pdx/data.hpp"
#include "pdx/dpt.hpp"
#include "pdx/engine.hpp"
#include "pdx/matrix.hpp"

namespace pdx {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;

  explicit ConfusionMatrix(std::size_t c = 0) : classes(c), counts(c * c, 0) {}
  std::size_t& at(std::size_t truth, std::size_t pred) { return counts[truth * classes + pred]; }
  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }
  std::size_t total() const;
};

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double auc = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  ConfusionMatrix confusion;
};

/// Accuracy, macro F1, macro sensitivity and macro specificity from counts
/// alone. Zero denominators count as 0. `auc` is left at 0.
Metrics metrics_from_confusion(const ConfusionMatrix& cm);

/// Rank-based (Mann-Whitney) AUC with ties counted 1/2. Requires at least
/// one positive and one negative.
double binary_auc(std::span<const double> scores, std::span<const std::uint8_t> positive);

/// Mean one-vs-rest AUC over classes that have both positives and negatives.
double macro_auc(const Matrix& posteriors, std::span<const int> truth, std::size_t classes);

/// Prediction = row argmax. Rows must sum to 1 within 1e-6.
Metrics compute_metrics(const Matrix& posteriors, std::span<const int> truth, std::size_t classes);

struct Summary {
  std::vector<double> values;
  double mean = 0.0;
  /// Sample standard deviation, present with two or more values.
  std::optional<double> stddev;
};
Summary summarize(std::vector<double> values);

struct MetricsReport {
  std::vector<Metrics> per_seed;
  Summary accuracy, macro_f1, auc, sensitivity, specificity;
};
MetricsReport make_report(std::vector<Metrics> per_seed);

// --- experiment protocols ----------------------------------------------------

struct ParametricHeadConfig {
  std::size_t hidden = 64;
  std::size_t epochs = 300;
  double lr = 3e-3;
};

/// Two-layer classifier on standardized features, full-batch Adam.
struct ParametricHead {
  std::vector<double> mean, stddev;
  ParamStore params;
  nn::Linear hidden, out;

  Matrix predict(const Matrix& x) const;
};
ParametricHead train_parametric_head(const Matrix& x, std::span<const int> y, std::size_t classes,
                                     const ParametricHeadConfig& cfg, SeededRng& rng);

struct FinetuneConfig {
  std::size_t steps = 100;
  double lr = 1e-4;
  double support_fraction = 0.7;
  /// Episodes are subsampled (stratified) to at most this many rows.
  std::size_t max_rows = 256;
};

/// Full-engine cross-entropy finetuning on episodes from a training split,
/// each preprocessed with psi fitted on its support rows.
Engine finetune_engine(const Engine& engine, const Matrix& x, std::span<const int> y, std::size_t classes,
                       const FinetuneConfig& cfg, SeededRng& rng);

/// Fixed features and split shared by the multimodal experiments.
struct FeatureBench {
  Matrix features;         // fused features of every sample
  Matrix random_features;  // fused features from a random-init extractor
  std::vector<int> labels;
  std::size_t classes = 0;
  SplitIndices split;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t seeds = 3;
  std::vector<double> ratios = {0.01, 0.03, 0.1, 0.3, 1.0};
  DptConfig dpt;
  ParametricHeadConfig head;
  FinetuneConfig finetune;
  /// Tabular protocol: validation rows drawn next to the context rows, and
  /// a cap on the evaluated test rows.
  std::size_t tabular_validation = 200;
  std::size_t tabular_test_cap = 1000;

  void validate() const;
};

/// Seed stream for experiment seed index `s`.
SeededRng experiment_rng(const ExperimentConfig& cfg, std::size_t s);

struct SweepCell {
  double ratio = 0.0;
  std::string method;  // "raw-engine", "dpt" or "parametric-head"
  MetricsReport report;
};
struct SweepResult {
  std::vector<SweepCell> cells;

  const SweepCell& at(double ratio, const std::string& method) const;
};
SweepResult run_context_sweep(const FeatureBench& bench, const Engine& engine, const ExperimentConfig& cfg);

struct MethodResult {
  std::string method;
  MetricsReport report;
  nlohmann::json settings = nlohmann::json::object();
};
struct AblationResult {
  std::vector<MethodResult> rows;  // full, w/o-pretraining, w/o-adapter, w/o-align, w/o-icl

  const MethodResult& at(const std::string& method) const;
};
AblationResult run_ablations(const FeatureBench& bench, const Engine& engine, const ExperimentConfig& cfg);

struct TabularComparison {
  std::string dataset;
  std::vector<MethodResult> methods;  // raw-engine, finetuned-engine, dpt

  const MethodResult& at(const std::string& method) const;
};
TabularComparison run_tabular_comparison(const TabularDataset& data, const TabularDatasetSpec& spec,
                                         const Engine& engine, const ExperimentConfig& cfg);

/// Per-seed split of a tabular dataset: train = `spec.context` rows
/// (stratified), validation and a capped test set from the rest.
SplitIndices tabular_split(std::span<const int> labels, std::size_t classes, const TabularDatasetSpec& spec,
                           const ExperimentConfig& cfg, SeededRng& rng);

// --- reports -------------------------------------------------------------------

nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const SweepResult& r);
nlohmann::json to_json(const AblationResult& r);
nlohmann::json to_json(const TabularComparison& r);

std::string to_text(const SweepResult& r);
std::string to_text(const AblationResult& r);
std::string to_text(const TabularComparison& r);
/// One line per (ratio, method, seed, metric): ratio,method,seed,metric,value.
std::string to_csv(const SweepResult& r);

}  // namespace pdx
