#pragma once

#include <functional>
#include <span>
#include <vector>

#include "pdx/data.hpp"
#include "pdx/matrix.hpp"
#include "pdx/nn.hpp"
#include "pdx/rng.hpp"
#include "pdx/tensor.hpp"

namespace pdx {

struct MmtmConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ff_width = 128;
  std::size_t visual_depth = 4;
  std::size_t tabular_depth = 2;
  std::size_t fusion_depth = 4;
  /// Hidden width of the per-column continuous-value MLPs.
  std::size_t continuous_hidden = 32;
  double mask_ratio_image = 0.75;
  double mask_ratio_tabular = 0.05;
  double lr = 2e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;

  void validate() const;
};

/// Token indices replaced by the modality mask tokens for one sample.
struct MaskPlan {
  std::vector<std::size_t> visual;
  std::vector<std::size_t> tabular;

  bool empty() const { return visual.empty() && tabular.empty(); }
};

/// |visual| = round(rho_img * n_vis); |tabular| = max(1, round(rho_tab * n_tab))
/// when rho_tab > 0. Indices are sorted and distinct.
MaskPlan draw_mask_plan(std::size_t n_vis, std::size_t n_tab, double rho_img, double rho_tab, SeededRng& rng);

/// Flattened non-overlapping patches, one row per patch (z-major patch order,
/// z-major voxel order inside a patch).
Matrix extract_patches(std::span<const float> volume, const VolumeSpec& spec);

/// Reconstruction targets for the masked-modeling loss. Continuous columns
/// hold the standardized value in column 0; categorical columns hold the
/// current input embedding, copied off-tape.
struct MmtmTargets {
  Matrix patches;
  Matrix tabular;
};

struct MmtmForward {
  Var fused;          // [n_vis + n_tab, d]
  Var visual_recon;   // [n_vis, p^3]
  Var tabular_recon;  // [n_tab, d + 1]: columns 0..d-1 categorical, d continuous
};

class Mmtm {
 public:
  /// `schema` must carry fitted standardization for its continuous columns.
  Mmtm(MmtmConfig cfg, VolumeSpec volume, TabularSchema schema, SeededRng& init);
  Mmtm(Mmtm&&) = default;
  Mmtm& operator=(Mmtm&&) = default;

  const MmtmConfig& config() const { return cfg_; }
  const VolumeSpec& volume() const { return volume_; }
  const TabularSchema& schema() const { return schema_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// Patch projections; rows listed in `masked` become the visual mask token.
  /// Positional embeddings are added afterwards to every token.
  Var patchify(Tape& tape, std::span<const float> volume, std::span<const std::size_t> masked = {}) const;
  /// One token per column; `record` holds raw values (categorical codes as
  /// integers) with missing cells already imputed.
  Var embed_tabular(Tape& tape, std::span<const double> record, std::span<const std::size_t> masked = {}) const;

  MmtmForward forward(Tape& tape, std::span<const float> volume, std::span<const double> record,
                      const MaskPlan& plan) const;
  MmtmTargets targets(std::span<const float> volume, std::span<const double> record) const;

  /// Fused feature h: token mean of the final fusion output, no masking.
  std::vector<double> extract(std::span<const float> volume, std::span<const double> record) const;

  Mmtm clone() const;

 private:
  MmtmConfig cfg_;
  VolumeSpec volume_;
  TabularSchema schema_;
  ParamStore store_;
  nn::Linear patch_proj_;
  Parameter* visual_pos_ = nullptr;
  Parameter* visual_mask_ = nullptr;
  std::vector<Parameter*> cat_tables_;  // per column, null for continuous
  std::vector<nn::Linear> cont_in_, cont_out_;
  Parameter* column_pos_ = nullptr;
  Parameter* tabular_mask_ = nullptr;
  std::vector<nn::TransformerBlock> visual_blocks_, tabular_blocks_, fusion_blocks_;
  nn::LayerNorm final_norm_;
  nn::Linear visual_dec1_, visual_dec2_, tabular_dec1_, tabular_dec2_;
};

/// Masked visual MSE (over all masked voxels) plus the mean over masked
/// columns of each column's squared error. Empty sets contribute 0.
Var loss_mmtm(Tape& tape, const Mmtm& model, Var visual_recon, Var tabular_recon, const MmtmTargets& targets,
              const MaskPlan& plan);

/// Input-independent baseline: the per-coordinate mean of every target over
/// a set of samples.
struct MeanPredictor {
  Matrix patches;
  Matrix tabular;
};
MeanPredictor fit_mean_predictor(const Mmtm& model, const MultimodalDataset& data, std::span<const std::size_t> rows);

/// Mean masked loss of the model and of the mean predictor over `rows`, both
/// scored on the same mask draw per row.
struct ReconstructionComparison {
  double model_loss = 0.0;
  double baseline_loss = 0.0;
};
ReconstructionComparison compare_with_mean_predictor(const Mmtm& model, const MeanPredictor& baseline,
                                                     const MultimodalDataset& data,
                                                     std::span<const std::size_t> rows, SeededRng& rng);

struct MmtmPretrainOptions {
  /// Called after every epoch with (epoch, mean loss); may be empty.
  std::function<void(std::size_t, double)> on_epoch;
};

struct MmtmPretrainResult {
  Mmtm model;
  std::vector<double> epoch_loss;
};

/// Fits continuous standardization on `rows`, then trains with Adam on
/// minibatches with a fresh mask plan per sample per epoch. `data.tables`
/// must be complete (imputed).
MmtmPretrainResult pretrain_mmtm(const MultimodalDataset& data, std::span<const std::size_t> rows,
                                 const MmtmConfig& cfg, SeededRng& rng, const MmtmPretrainOptions& options = {});

/// Schema with continuous statistics fitted on `rows` of `data.tables`.
TabularSchema fitted_schema(const MultimodalDataset& data, std::span<const std::size_t> rows);

/// One fused feature row per sample.
Matrix extract_features(const Mmtm& model, const MultimodalDataset& data);

}  // namespace pdx
