#pragma once

#include <span>
#include <vector>

#include "pdx/engine.hpp"
#include "pdx/matrix.hpp"
#include "pdx/nn.hpp"
#include "pdx/quantile.hpp"
#include "pdx/rng.hpp"
#include "pdx/tensor.hpp"

namespace pdx {

struct DptConfig {
  double lambda_align = 1.0;
  double lambda_icl = 0.01;
  double lr = 1e-3;
  std::size_t epochs = 100;
  /// Adam steps per epoch, each on a freshly drawn episode.
  std::size_t steps_per_epoch = 1;
  double support_fraction = 0.7;
  /// Learning rate at the last step as a fraction of lr, reached by cosine
  /// decay. 1 keeps the rate constant.
  double final_lr_fraction = 1.0;
  /// Reuse one support/query partition for the whole run.
  bool fixed_episode = false;
  /// Return the adapter from the epoch with the best validation accuracy.
  bool best_epoch = false;
  /// Std of every adapter weight at initialization.
  double init_scale = 0.02;
  std::size_t depth = 6;

  void validate() const;
};

/// Six-layer MLP mapping fused features to engine prompts (hidden width
/// twice the input width, GELU between layers).
class Adapter {
 public:
  Adapter(std::size_t in, std::size_t out, SeededRng& init, double init_scale = 0.02, std::size_t depth = 6);
  Adapter(Adapter&&) = default;
  Adapter& operator=(Adapter&&) = default;

  std::size_t in() const { return layers_.front().in(); }
  std::size_t out() const { return layers_.back().out(); }
  std::size_t depth() const { return layers_.size(); }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  Var operator()(Tape& tape, Var h) const;
  Matrix apply(const Matrix& h) const;
  Adapter clone() const;

 private:
  ParamStore store_;
  std::vector<nn::Linear> layers_;
};

/// Support/query partition of a training split (indices into that split).
struct Episode {
  std::vector<std::size_t> support;
  std::vector<std::size_t> query;
};

/// Stratified partition: each class contributes round(fraction * n_c)
/// support rows, at least one, and at least one query row when n_c >= 2.
Episode draw_episode(std::span<const int> labels, std::size_t classes, double support_fraction, SeededRng& rng);

/// Mean over rows of || prompts - psi(h) ||_1 with psi fitted on `fit`.
Var loss_align(Tape& tape, Var prompts, const Matrix& h, const QuantileFit& fit);

/// Mean query cross-entropy of the frozen engine on tape-tracked prompts.
Var loss_icl(const Engine& engine, Tape& tape, Var support, std::span<const int> support_labels, Var query,
             std::span<const int> query_labels, std::size_t classes);

Var loss_total(const DptConfig& cfg, Var l_icl, Var l_align);
double loss_total(const DptConfig& cfg, double l_icl, double l_align);

struct DptEpochRecord {
  std::size_t epoch = 0;
  double l_align = 0.0;
  double l_icl = 0.0;
  double l_total = 0.0;
  double val_acc = 0.0;
};

struct DptResult {
  Adapter adapter;
  std::vector<DptEpochRecord> curve;
  std::size_t selected_epoch = 0;
};

/// Trains a fresh adapter with the engine frozen. Each step draws an episode
/// from the training split, fits psi on its support features and minimizes
/// lambda_icl * L_icl + lambda_align * L_align. Validation accuracy uses the
/// whole training split as context. An empty validation set skips it.
DptResult train_dpt(const Matrix& h_train, std::span<const int> y_train, const Matrix& h_val,
                    std::span<const int> y_val, std::size_t classes, const Engine& engine, const DptConfig& cfg,
                    SeededRng& rng);

/// Engine posteriors with adapter prompts for context and queries.
Matrix predict_dpt(const Adapter& adapter, const Engine& engine, const Matrix& h_context,
                   std::span<const int> y_context, const Matrix& h_query, std::size_t classes);

/// Engine posteriors on psi features (no adapter), psi fitted on the context.
Matrix predict_raw(const Engine& engine, const Matrix& h_context, std::span<const int> y_context,
                   const Matrix& h_query, std::size_t classes);

/// Engine posteriors on prompts already in engine space. Queries are
/// processed in chunks; results do not depend on the chunking.
Matrix predict_prompts(const Engine& engine, const Matrix& z_context, std::span<const int> y_context,
                       const Matrix& z_query, std::size_t classes);

std::vector<int> argmax_rows(const Matrix& posteriors);
double accuracy(std::span<const int> predicted, std::span<const int> truth);

}  // namespace pdx
