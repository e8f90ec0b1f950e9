#include "pdx/mmtm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pdx/engine.hpp"
#include "pdx/optim.hpp"

namespace pdx {

void MmtmConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw ConfigError("mmtm: d_model must be a positive multiple of heads");
  }
  if (visual_depth == 0 || tabular_depth == 0 || fusion_depth == 0) throw ConfigError("mmtm: depths must be >= 1");
  if (ff_width == 0 || continuous_hidden == 0) throw ConfigError("mmtm: hidden widths must be >= 1");
  if (!(mask_ratio_image >= 0.0 && mask_ratio_image < 1.0)) throw ConfigError("mmtm: mask_ratio_image must lie in [0, 1)");
  if (!(mask_ratio_tabular >= 0.0 && mask_ratio_tabular < 1.0)) {
    throw ConfigError("mmtm: mask_ratio_tabular must lie in [0, 1)");
  }
  if (!(lr > 0.0)) throw ConfigError("mmtm: lr must be positive");
  if (batch_size == 0) throw ConfigError("mmtm: batch_size must be >= 1");
}

MaskPlan draw_mask_plan(std::size_t n_vis, std::size_t n_tab, double rho_img, double rho_tab, SeededRng& rng) {
  if (!(rho_img >= 0.0 && rho_img < 1.0) || !(rho_tab >= 0.0 && rho_tab < 1.0)) {
    throw ContractError("draw_mask_plan: mask ratios must lie in [0, 1)");
  }
  auto pick = [&rng](std::size_t n, std::size_t k) {
    auto perm = rng.permutation(n);
    std::vector<std::size_t> out(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out.begin(), out.end());
    return out;
  };
  MaskPlan plan;
  const auto k_vis = static_cast<std::size_t>(std::lround(rho_img * static_cast<double>(n_vis)));
  plan.visual = pick(n_vis, std::min(k_vis, n_vis));
  if (rho_tab > 0.0 && n_tab > 0) {
    const auto k_tab = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(rho_tab * static_cast<double>(n_tab))));
    plan.tabular = pick(n_tab, std::min(k_tab, n_tab));
  }
  return plan;
}

Matrix extract_patches(std::span<const float> volume, const VolumeSpec& spec) {
  spec.validate();
  if (volume.size() != spec.voxels()) {
    throw DimensionError("patchify: volume has " + std::to_string(volume.size()) + " voxels, expected " +
                         std::to_string(spec.voxels()));
  }
  const std::size_t p = spec.patch, gz = spec.depth / p, gy = spec.height / p, gx = spec.width / p;
  Matrix out(spec.patch_count(), spec.patch_voxels());
  std::size_t row = 0;
  for (std::size_t bz = 0; bz < gz; ++bz)
    for (std::size_t by = 0; by < gy; ++by)
      for (std::size_t bx = 0; bx < gx; ++bx, ++row) {
        std::size_t col = 0;
        for (std::size_t z = 0; z < p; ++z)
          for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x, ++col) {
              const std::size_t idx = ((bz * p + z) * spec.height + (by * p + y)) * spec.width + (bx * p + x);
              out(row, col) = volume[idx];
            }
      }
  return out;
}

// --- model ---------------------------------------------------------------------

namespace {

void fill_normal(Parameter& p, SeededRng& rng, double sd) {
  for (double& v : p.value) v = rng.normal(0.0, sd);
}

}  // namespace

Mmtm::Mmtm(MmtmConfig cfg, VolumeSpec volume, TabularSchema schema, SeededRng& init)
    : cfg_(cfg), volume_(volume), schema_(std::move(schema)) {
  cfg_.validate();
  volume_.validate();
  schema_.validate();
  if (schema_.size() == 0) throw ConfigError("mmtm: tabular schema has no columns");
  const std::size_t d = cfg_.d_model;
  patch_proj_ = nn::Linear::create(store_, "mmtm.patch_proj", volume_.patch_voxels(), d, init);
  visual_pos_ = &store_.add("mmtm.visual_pos", {volume_.patch_count(), d});
  fill_normal(*visual_pos_, init, 0.1);
  visual_mask_ = &store_.add("mmtm.visual_mask", {d});
  fill_normal(*visual_mask_, init, 0.1);

  for (std::size_t j = 0; j < schema_.size(); ++j) {
    const auto& col = schema_.columns[j];
    const std::string base = "mmtm.col" + std::to_string(j);
    if (col.kind == ColumnKind::categorical) {
      Parameter& table = store_.add(base + ".table", {static_cast<std::size_t>(col.cardinality), d});
      fill_normal(table, init, 1.0);
      cat_tables_.push_back(&table);
      cont_in_.emplace_back();
      cont_out_.emplace_back();
    } else {
      cat_tables_.push_back(nullptr);
      cont_in_.push_back(nn::Linear::create(store_, base + ".mlp_in", 1, cfg_.continuous_hidden, init, 1.0));
      cont_out_.push_back(nn::Linear::create(store_, base + ".mlp_out", cfg_.continuous_hidden, d, init));
    }
  }
  column_pos_ = &store_.add("mmtm.column_pos", {schema_.size(), d});
  fill_normal(*column_pos_, init, 0.1);
  tabular_mask_ = &store_.add("mmtm.tabular_mask", {d});
  fill_normal(*tabular_mask_, init, 0.1);

  auto blocks = [&](const std::string& name, std::size_t depth) {
    std::vector<nn::TransformerBlock> out;
    for (std::size_t l = 0; l < depth; ++l) {
      out.push_back(nn::TransformerBlock::create(store_, name + std::to_string(l), d, cfg_.heads, cfg_.ff_width, init));
    }
    return out;
  };
  visual_blocks_ = blocks("mmtm.visual", cfg_.visual_depth);
  tabular_blocks_ = blocks("mmtm.tabular", cfg_.tabular_depth);
  fusion_blocks_ = blocks("mmtm.fusion", cfg_.fusion_depth);
  final_norm_ = nn::LayerNorm::create(store_, "mmtm.final_norm", d);

  visual_dec1_ = nn::Linear::create(store_, "mmtm.visual_dec1", d, d, init);
  visual_dec2_ = nn::Linear::create(store_, "mmtm.visual_dec2", d, volume_.patch_voxels(), init);
  tabular_dec1_ = nn::Linear::create(store_, "mmtm.tabular_dec1", d, d, init);
  tabular_dec2_ = nn::Linear::create(store_, "mmtm.tabular_dec2", d, d + 1, init);
  // Reconstructions start at zero rather than at a random projection.
  std::fill(visual_dec2_.weight->value.begin(), visual_dec2_.weight->value.end(), 0.0);
  std::fill(tabular_dec2_.weight->value.begin(), tabular_dec2_.weight->value.end(), 0.0);
}

Mmtm Mmtm::clone() const {
  SeededRng unused(0);
  Mmtm copy(cfg_, volume_, schema_, unused);
  copy.store_.copy_values_from(store_);
  return copy;
}

Var Mmtm::patchify(Tape& tape, std::span<const float> volume, std::span<const std::size_t> masked) const {
  const Matrix patches = extract_patches(volume, volume_);
  Var x = patch_proj_(tape, tape.constant({patches.rows, patches.cols}, patches.data));
  if (!masked.empty()) x = replace_rows(x, masked, tape.param(*visual_mask_));
  return add(x, tape.param(*visual_pos_));
}

Var Mmtm::embed_tabular(Tape& tape, std::span<const double> record, std::span<const std::size_t> masked) const {
  if (record.size() != schema_.size()) {
    throw DimensionError("embed_tabular: record has " + std::to_string(record.size()) + " values, schema has " +
                         std::to_string(schema_.size()) + " columns");
  }
  Var tokens;
  for (std::size_t j = 0; j < schema_.size(); ++j) {
    Var tok;
    if (cat_tables_[j]) {
      const double v = record[j];
      const int card = schema_.columns[j].cardinality;
      if (!(v >= 0.0) || v != std::floor(v) || v >= card) {
        throw ContractError("embed_tabular: column '" + schema_.columns[j].name + "' value " + std::to_string(v) +
                            " is not a code below cardinality " + std::to_string(card));
      }
      const int code = static_cast<int>(v);
      tok = embedding(tape.param(*cat_tables_[j]), std::span<const int>(&code, 1));
    } else {
      if (!std::isfinite(record[j])) throw NumericError("embed_tabular: non-finite continuous value");
      Var s = tape.constant({1, 1}, {schema_.standardize(j, record[j])});
      tok = cont_out_[j](tape, gelu(cont_in_[j](tape, s)));
    }
    tokens = tokens.valid() ? concat_rows(tokens, tok) : tok;
  }
  if (!masked.empty()) tokens = replace_rows(tokens, masked, tape.param(*tabular_mask_));
  return add(tokens, tape.param(*column_pos_));
}

MmtmForward Mmtm::forward(Tape& tape, std::span<const float> volume, std::span<const double> record,
                          const MaskPlan& plan) const {
  Var v = patchify(tape, volume, plan.visual);
  Var t = embed_tabular(tape, record, plan.tabular);
  for (const auto& b : visual_blocks_) v = b(tape, v);
  for (const auto& b : tabular_blocks_) t = b(tape, t);
  Var z = concat_rows(v, t);
  for (const auto& b : fusion_blocks_) z = b(tape, z);
  z = final_norm_(tape, z);

  const std::size_t n_vis = volume_.patch_count();
  std::vector<std::size_t> vis_rows(n_vis), tab_rows(schema_.size());
  std::iota(vis_rows.begin(), vis_rows.end(), std::size_t{0});
  std::iota(tab_rows.begin(), tab_rows.end(), n_vis);
  MmtmForward out;
  out.fused = z;
  out.visual_recon = visual_dec2_(tape, gelu(visual_dec1_(tape, gather_rows(z, vis_rows))));
  out.tabular_recon = tabular_dec2_(tape, gelu(tabular_dec1_(tape, gather_rows(z, tab_rows))));
  return out;
}

MmtmTargets Mmtm::targets(std::span<const float> volume, std::span<const double> record) const {
  if (record.size() != schema_.size()) throw DimensionError("mmtm targets: record width differs from schema");
  MmtmTargets t;
  t.patches = extract_patches(volume, volume_);
  const std::size_t d = cfg_.d_model;
  t.tabular = Matrix(schema_.size(), d);
  for (std::size_t j = 0; j < schema_.size(); ++j) {
    if (cat_tables_[j]) {
      const auto code = static_cast<std::size_t>(record[j]);
      if (code >= static_cast<std::size_t>(schema_.columns[j].cardinality)) {
        throw ContractError("mmtm targets: categorical code out of range");
      }
      std::copy_n(cat_tables_[j]->value.begin() + static_cast<std::ptrdiff_t>(code * d), d, t.tabular.row(j).begin());
    } else {
      t.tabular(j, 0) = schema_.standardize(j, record[j]);
    }
  }
  return t;
}

std::vector<double> Mmtm::extract(std::span<const float> volume, std::span<const double> record) const {
  Tape tape;
  Var h = mean_rows(forward(tape, volume, record, MaskPlan{}).fused);
  return {h.values().begin(), h.values().end()};
}

// --- loss ----------------------------------------------------------------------

Var loss_mmtm(Tape& tape, const Mmtm& model, Var visual_recon, Var tabular_recon, const MmtmTargets& targets,
              const MaskPlan& plan) {
  if (plan.empty()) throw ContractError("loss_mmtm: both mask sets are empty");
  const auto& schema = model.schema();
  const std::size_t d = model.config().d_model;
  Var total = tape.scalar(0.0);
  if (!plan.visual.empty()) {
    const Matrix target = targets.patches.select_rows(plan.visual);
    total = add(total, mse(gather_rows(visual_recon, plan.visual), tape.constant({target.rows, target.cols}, target.data)));
  }
  if (!plan.tabular.empty()) {
    Var tab = tape.scalar(0.0);
    for (std::size_t j : plan.tabular) {
      const std::size_t one[] = {j};
      Var row = gather_rows(tabular_recon, one);
      const auto target = targets.tabular.row(j);
      if (schema.columns[j].kind == ColumnKind::categorical) {
        tab = add(tab, mse(slice_cols(row, 0, d), tape.constant({1, d}, {target.begin(), target.end()})));
      } else {
        tab = add(tab, mse(slice_cols(row, d, d + 1), tape.constant({1, 1}, {target[0]})));
      }
    }
    total = add(total, scale(tab, 1.0 / static_cast<double>(plan.tabular.size())));
  }
  return total;
}

MeanPredictor fit_mean_predictor(const Mmtm& model, const MultimodalDataset& data, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ContractError("fit_mean_predictor: no rows");
  MeanPredictor mean;
  const std::size_t d = model.config().d_model;
  mean.patches = Matrix(model.volume().patch_count(), model.volume().patch_voxels());
  mean.tabular = Matrix(model.schema().size(), d);
  for (std::size_t r : rows) {
    const MmtmTargets t = model.targets(data.volume_of(r), data.tables.row(r));
    for (std::size_t i = 0; i < t.patches.data.size(); ++i) mean.patches.data[i] += t.patches.data[i];
    for (std::size_t i = 0; i < t.tabular.data.size(); ++i) mean.tabular.data[i] += t.tabular.data[i];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (double& v : mean.patches.data) v *= inv;
  for (double& v : mean.tabular.data) v *= inv;
  return mean;
}

ReconstructionComparison compare_with_mean_predictor(const Mmtm& model, const MeanPredictor& baseline,
                                                     const MultimodalDataset& data,
                                                     std::span<const std::size_t> rows, SeededRng& rng) {
  if (rows.empty()) throw ContractError("compare_with_mean_predictor: no rows");
  const auto& cfg = model.config();
  const std::size_t d = cfg.d_model;
  ReconstructionComparison out;
  for (std::size_t r : rows) {
    const MaskPlan plan = draw_mask_plan(model.volume().patch_count(), model.schema().size(), cfg.mask_ratio_image,
                                         cfg.mask_ratio_tabular, rng);
    if (plan.empty()) continue;
    const MmtmTargets targets = model.targets(data.volume_of(r), data.tables.row(r));
    Tape tape;
    const MmtmForward fwd = model.forward(tape, data.volume_of(r), data.tables.row(r), plan);
    out.model_loss += loss_mmtm(tape, model, fwd.visual_recon, fwd.tabular_recon, targets, plan).item();

    // The baseline predicts the same constants whatever the input.
    Matrix tab(model.schema().size(), d + 1);
    for (std::size_t j = 0; j < tab.rows; ++j) {
      if (model.schema().columns[j].kind == ColumnKind::categorical) {
        for (std::size_t c = 0; c < d; ++c) tab(j, c) = baseline.tabular(j, c);
      } else {
        tab(j, d) = baseline.tabular(j, 0);
      }
    }
    Var vb = tape.constant({baseline.patches.rows, baseline.patches.cols}, baseline.patches.data);
    Var tb = tape.constant({tab.rows, tab.cols}, tab.data);
    out.baseline_loss += loss_mmtm(tape, model, vb, tb, targets, plan).item();
  }
  out.model_loss /= static_cast<double>(rows.size());
  out.baseline_loss /= static_cast<double>(rows.size());
  return out;
}

// --- training ------------------------------------------------------------------

TabularSchema fitted_schema(const MultimodalDataset& data, std::span<const std::size_t> rows) {
  TabularSchema schema = data.schema;
  schema.fit_standardization(data.tables, rows);
  return schema;
}

MmtmPretrainResult pretrain_mmtm(const MultimodalDataset& data, std::span<const std::size_t> rows,
                                 const MmtmConfig& cfg, SeededRng& rng, const MmtmPretrainOptions& options) {
  cfg.validate();
  if (rows.empty()) throw ContractError("pretrain_mmtm: empty training set");
  if (cfg.epochs < 1) throw ContractError("pretrain_mmtm: epochs must be >= 1");
  SeededRng init = rng.split(1);
  SeededRng order = rng.split(2);
  SeededRng masks = rng.split(3);
  Mmtm model(cfg, data.volume, fitted_schema(data, rows), init);
  Adam adam(model.params().all(), {.lr = cfg.lr});
  DivergenceMonitor monitor("pretrain_mmtm");
  std::vector<double> curve;
  std::vector<std::size_t> ids(rows.begin(), rows.end());
  const std::size_t n_vis = data.volume.patch_count(), n_tab = data.schema.size();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order.shuffle(ids);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < ids.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(ids.size(), begin + cfg.batch_size);
      adam.zero_grad();
      double batch_loss = 0.0;
      std::size_t counted = 0;
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t r = ids[b];
        const MaskPlan plan = draw_mask_plan(n_vis, n_tab, cfg.mask_ratio_image, cfg.mask_ratio_tabular, masks);
        if (plan.empty()) continue;
        const MmtmTargets targets = model.targets(data.volume_of(r), data.tables.row(r));
        Tape tape;
        const MmtmForward fwd = model.forward(tape, data.volume_of(r), data.tables.row(r), plan);
        Var loss = loss_mmtm(tape, model, fwd.visual_recon, fwd.tabular_recon, targets, plan);
        batch_loss += loss.item();
        ++counted;
        tape.backward(scale(loss, 1.0 / static_cast<double>(end - begin)));
      }
      if (counted == 0) throw ContractError("pretrain_mmtm: mask ratios produce empty mask plans");
      monitor.observe(batch_loss / static_cast<double>(counted));
      adam.step();
      epoch_loss += batch_loss;
      seen += counted;
    }
    curve.push_back(epoch_loss / static_cast<double>(seen));
    if (options.on_epoch) options.on_epoch(epoch, curve.back());
  }
  return {std::move(model), std::move(curve)};
}

Matrix extract_features(const Mmtm& model, const MultimodalDataset& data) {
  Matrix out(data.size(), model.config().d_model);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto h = model.extract(data.volume_of(i), data.tables.row(i));
    std::copy(h.begin(), h.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace pdx
