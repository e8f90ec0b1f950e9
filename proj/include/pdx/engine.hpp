#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pdx/matrix.hpp"
#include "pdx/nn.hpp"
#include "pdx/quantile.hpp"
#include "pdx/rng.hpp"
#include "pdx/tensor.hpp"

namespace pdx {

struct EngineConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t max_features = 128;
  std::size_t max_classes = 10;
  std::size_t ff_width = 256;

  void validate() const;
};

/// Synthetic task prior the engine is meta-trained on: random two-layer
/// teacher networks over standard-normal inputs, with label noise.
struct PriorTaskConfig {
  std::size_t min_features = 2;
  std::size_t max_features = 128;
  std::size_t min_classes = 2;
  std::size_t max_classes = 10;
  std::size_t min_hidden = 2;
  std::size_t max_hidden = 16;
  /// Teachers read at most this many input features (chosen at random).
  std::size_t max_relevant_features = 8;
  std::vector<std::string> activations = {"relu", "tanh"};
  double label_noise = 0.05;
  std::size_t min_samples = 32;
  std::size_t max_samples = 128;
  double support_fraction = 0.7;

  void validate(const EngineConfig& engine) const;
};

/// One in-context problem: labelled support prompts plus query prompts.
struct ContextBatch {
  Matrix support;
  std::vector<int> support_labels;
  Matrix query;
  std::size_t classes = 2;

  void validate(const EngineConfig& engine) const;
};

struct PriorTask {
  ContextBatch batch;
  std::vector<int> query_labels;
};

/// Draws one task. Resamples (up to 100 times, then with one class fewer)
/// until every class appears in the support rows. Inputs are raw; callers
/// apply quantile preprocessing themselves.
PriorTask sample_prior_task(const PriorTaskConfig& cfg, SeededRng& rng);

/// Fits the quantile transform on the support rows and applies it to both
/// support and query rows.
ContextBatch preprocess(const ContextBatch& raw);

/// Sample-axis transformer performing in-context classification. Support
/// tokens attend to support tokens only; each query attends to the support
/// set and itself, so queries never influence one another.
class Engine {
 public:
  explicit Engine(EngineConfig cfg, SeededRng& init);
  Engine(Engine&&) = default;
  Engine& operator=(Engine&&) = default;

  const EngineConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// Query logits restricted to the first `classes` outputs, shape [nq, classes].
  /// `support` and `query` may be tape-tracked; gradients flow into them.
  Var logits(Tape& tape, Var support, std::span<const int> support_labels, Var query, std::size_t classes) const;

  /// Posterior over `batch.classes` for every query row (rows sum to 1).
  Matrix predict(const ContextBatch& batch) const;

  /// Independent copy with identical parameter values.
  Engine clone() const;

 private:
  EngineConfig cfg_;
  ParamStore store_;
  nn::Linear input_;
  Parameter* label_table_ = nullptr;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm final_norm_;
  nn::Linear head_;
};

/// Additive attention mask for `ns` support tokens followed by `nq` queries.
std::vector<double> context_mask(std::size_t ns, std::size_t nq);

struct EnginePretrainOptions {
  std::size_t steps = 2000;
  std::size_t tasks_per_step = 4;
  double lr = 1e-3;
  /// Called every step with (step, loss); may be empty.
  std::function<void(std::size_t, double)> on_step;
};

struct EnginePretrainResult {
  Engine engine;
  std::vector<double> loss_curve;
};

/// Meta-trains a fresh engine on tasks drawn from the prior, minimizing mean
/// query cross-entropy. Every task is quantile-preprocessed before encoding.
/// Throws DivergenceError if the loss stays above 10x its initial value for
/// 100 consecutive steps.
EnginePretrainResult pretrain_engine(const EngineConfig& cfg, const PriorTaskConfig& prior,
                                     const EnginePretrainOptions& options, SeededRng& rng);

/// Mean query cross-entropy of `engine` on a preprocessed task, on `tape`.
Var engine_task_loss(const Engine& engine, Tape& tape, const ContextBatch& batch, std::span<const int> query_labels);

/// Tracks the "loss > 10x initial for 100 consecutive steps" divergence rule.
class DivergenceMonitor {
 public:
  explicit DivergenceMonitor(std::string what, std::size_t patience = 100, double factor = 10.0)
      : what_(std::move(what)), patience_(patience), factor_(factor) {}
  void observe(double loss);

 private:
  std::string what_;
  std::size_t patience_;
  double factor_;
  double initial_ = -1.0;
  std::size_t streak_ = 0;
};

}  // namespace pdx
