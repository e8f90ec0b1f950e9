#include "pdx/dpt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include "pdx/optim.hpp"

namespace pdx {

void DptConfig::validate() const {
  if (!(lambda_align >= 0.0) || !(lambda_icl >= 0.0)) throw ConfigError("dpt: lambda values must be nonnegative");
  if (lambda_align == 0.0 && lambda_icl == 0.0) throw ConfigError("dpt: lambda_align and lambda_icl are both zero");
  if (!(lr > 0.0)) throw ConfigError("dpt: lr must be positive");
  if (epochs < 1) throw ConfigError("dpt: epochs must be >= 1");
  if (steps_per_epoch < 1) throw ConfigError("dpt: steps_per_epoch must be >= 1");
  if (!(support_fraction > 0.0 && support_fraction < 1.0)) throw ConfigError("dpt: support_fraction must lie in (0, 1)");
  if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) {
    throw ConfigError("dpt: final_lr_fraction must lie in (0, 1]");
  }
  if (!(init_scale >= 0.0)) throw ConfigError("dpt: init_scale must be nonnegative");
  if (depth < 1) throw ConfigError("dpt: depth must be >= 1");
}

// --- adapter -------------------------------------------------------------------

Adapter::Adapter(std::size_t in, std::size_t out, SeededRng& init, double init_scale, std::size_t depth) {
  if (in == 0 || out == 0) throw ContractError("adapter: widths must be positive");
  if (depth == 0) throw ContractError("adapter: depth must be >= 1");
  const std::size_t hidden = 2 * in;
  for (std::size_t l = 0; l < depth; ++l) {
    const std::size_t a = l == 0 ? in : hidden;
    const std::size_t b = l + 1 == depth ? out : hidden;
    auto layer = nn::Linear::create(store_, "adapter.layer" + std::to_string(l), a, b, init, 1.0);
    for (double& w : layer.weight->value) w *= init_scale;
    layers_.push_back(layer);
  }
}

Var Adapter::operator()(Tape& tape, Var h) const {
  if (h.cols() != in()) {
    throw DimensionError("adapter: input has " + std::to_string(h.cols()) + " columns, expected " +
                         std::to_string(in()));
  }
  Var x = h;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    x = layers_[l](tape, x);
    if (l + 1 < layers_.size()) x = gelu(x);
  }
  return x;
}

Matrix Adapter::apply(const Matrix& h) const {
  Tape tape;
  Var z = (*this)(tape, tape.constant({h.rows, h.cols}, h.data));
  return Matrix(h.rows, out(), std::vector<double>(z.values().begin(), z.values().end()));
}

Adapter Adapter::clone() const {
  SeededRng unused(0);
  Adapter copy(in(), out(), unused, 0.0, depth());
  copy.store_.copy_values_from(store_);
  return copy;
}

// --- episodes and losses -------------------------------------------------------

Episode draw_episode(std::span<const int> labels, std::size_t classes, double support_fraction, SeededRng& rng) {
  if (!(support_fraction > 0.0 && support_fraction < 1.0)) {
    throw ContractError("draw_episode: support_fraction must lie in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ContractError("draw_episode: label outside class range");
    }
    members[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  Episode ep;
  for (std::size_t c = 0; c < classes; ++c) {
    auto& m = members[c];
    if (m.empty()) throw ContractError("draw_episode: class " + std::to_string(c) + " absent from the training split");
    rng.shuffle(m);
    auto k = static_cast<std::size_t>(std::lround(support_fraction * static_cast<double>(m.size())));
    k = std::clamp<std::size_t>(k, 1, m.size() >= 2 ? m.size() - 1 : 1);
    ep.support.insert(ep.support.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(k));
    ep.query.insert(ep.query.end(), m.begin() + static_cast<std::ptrdiff_t>(k), m.end());
  }
  std::sort(ep.support.begin(), ep.support.end());
  std::sort(ep.query.begin(), ep.query.end());
  return ep;
}

Var loss_align(Tape& tape, Var prompts, const Matrix& h, const QuantileFit& fit) {
  const Matrix target = quantile_transform(fit, h);
  if (prompts.rows() != target.rows || prompts.cols() != target.cols) {
    throw DimensionError("loss_align: prompts " + shape_str(prompts.shape()) + " vs psi target [" +
                         std::to_string(target.rows) + ", " + std::to_string(target.cols) + "]");
  }
  return l1_distance(prompts, tape.constant({target.rows, target.cols}, target.data));
}

Var loss_icl(const Engine& engine, Tape& tape, Var support, std::span<const int> support_labels, Var query,
             std::span<const int> query_labels, std::size_t classes) {
  return cross_entropy(engine.logits(tape, support, support_labels, query, classes), query_labels);
}

Var loss_total(const DptConfig& cfg, Var l_icl, Var l_align) {
  return add(scale(l_icl, cfg.lambda_icl), scale(l_align, cfg.lambda_align));
}

double loss_total(const DptConfig& cfg, double l_icl, double l_align) {
  return cfg.lambda_icl * l_icl + cfg.lambda_align * l_align;
}

// --- prediction ----------------------------------------------------------------

namespace {

constexpr std::size_t kQueryChunk = 128;

Engine frozen_copy(const Engine& engine) {
  Engine copy = engine.clone();
  copy.params().set_frozen(true);
  return copy;
}

}  // namespace

Matrix predict_prompts(const Engine& engine, const Matrix& z_context, std::span<const int> y_context,
                       const Matrix& z_query, std::size_t classes) {
  ContextBatch batch;
  batch.support = z_context;
  batch.support_labels.assign(y_context.begin(), y_context.end());
  batch.classes = classes;
  Matrix out(z_query.rows, classes);
  for (std::size_t begin = 0; begin < z_query.rows; begin += kQueryChunk) {
    const std::size_t end = std::min(z_query.rows, begin + kQueryChunk);
    std::vector<std::size_t> rows(end - begin);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
    batch.query = z_query.select_rows(rows);
    const Matrix p = engine.predict(batch);
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(begin * classes));
  }
  return out;
}

Matrix predict_dpt(const Adapter& adapter, const Engine& engine, const Matrix& h_context,
                   std::span<const int> y_context, const Matrix& h_query, std::size_t classes) {
  return predict_prompts(engine, adapter.apply(h_context), y_context, adapter.apply(h_query), classes);
}

Matrix predict_raw(const Engine& engine, const Matrix& h_context, std::span<const int> y_context,
                   const Matrix& h_query, std::size_t classes) {
  const QuantileFit fit = quantile_fit(h_context);
  return predict_prompts(engine, quantile_transform(fit, h_context), y_context, quantile_transform(fit, h_query),
                         classes);
}

std::vector<int> argmax_rows(const Matrix& posteriors) {
  std::vector<int> out(posteriors.rows);
  for (std::size_t r = 0; r < posteriors.rows; ++r) {
    const auto row = posteriors.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw DimensionError("accuracy: length mismatch");
  if (truth.empty()) throw ContractError("accuracy: no samples");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

// --- training ------------------------------------------------------------------

DptResult train_dpt(const Matrix& h_train, std::span<const int> y_train, const Matrix& h_val,
                    std::span<const int> y_val, std::size_t classes, const Engine& engine, const DptConfig& cfg,
                    SeededRng& rng) {
  cfg.validate();
  if (h_train.rows != y_train.size()) throw DimensionError("train_dpt: feature rows differ from label count");
  if (h_val.rows != y_val.size()) throw DimensionError("train_dpt: validation rows differ from label count");
  if (!h_val.empty() && h_val.cols != h_train.cols) throw DimensionError("train_dpt: validation width differs");
  if (h_train.cols > engine.config().max_features) {
    throw ContractError("train_dpt: feature width exceeds the engine's maximum");
  }
  SeededRng init = rng.split(1);
  SeededRng episodes = rng.split(2);
  const Engine frozen = frozen_copy(engine);
  DptResult result{Adapter(h_train.cols, h_train.cols, init, cfg.init_scale, cfg.depth), {}, 0};
  Adapter& adapter = result.adapter;
  Adam adam(adapter.params().all(), {.lr = cfg.lr});
  DivergenceMonitor monitor("train_dpt");
  const Episode fixed = draw_episode(y_train, classes, cfg.support_fraction, episodes);

  std::optional<Adapter> best;
  double best_acc = -1.0;
  const std::size_t total_steps = cfg.epochs * cfg.steps_per_epoch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    DptEpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step) {
      if (total_steps > 1) {
        const double t = static_cast<double>(epoch * cfg.steps_per_epoch + step) / static_cast<double>(total_steps - 1);
        const double f = cfg.final_lr_fraction;
        adam.set_lr(cfg.lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * t))));
      }
      const Episode ep = cfg.fixed_episode ? fixed : draw_episode(y_train, classes, cfg.support_fraction, episodes);
      const Matrix hs = h_train.select_rows(ep.support);
      const Matrix hq = h_train.select_rows(ep.query);
      const std::vector<int> ys = select(y_train, ep.support);
      const std::vector<int> yq = select(y_train, ep.query);
      const QuantileFit fit = quantile_fit(hs);

      adam.zero_grad();
      Tape tape;
      Var zs = adapter(tape, tape.constant({hs.rows, hs.cols}, hs.data));
      Var zq = adapter(tape, tape.constant({hq.rows, hq.cols}, hq.data));
      // Rows of S followed by rows of Q, matching the concatenated target.
      Matrix h_sq(hs.rows + hq.rows, hs.cols);
      std::copy(hs.data.begin(), hs.data.end(), h_sq.data.begin());
      std::copy(hq.data.begin(), hq.data.end(), h_sq.data.begin() + static_cast<std::ptrdiff_t>(hs.data.size()));
      Var l_align = loss_align(tape, concat_rows(zs, zq), h_sq, fit);
      double icl_value = 0.0;
      Var total;
      if (cfg.lambda_icl > 0.0) {
        Var l_icl = loss_icl(frozen, tape, zs, ys, zq, yq, classes);
        icl_value = l_icl.item();
        total = loss_total(cfg, l_icl, l_align);
      } else {
        // The engine term has no weight; evaluate it off the training tape
        // once per epoch for the curve only.
        if (step == 0) {
          Tape probe;
          Var ps = probe.constant({hs.rows, hs.cols}, {zs.values().begin(), zs.values().end()});
          Var pq = probe.constant({hq.rows, hq.cols}, {zq.values().begin(), zq.values().end()});
          icl_value = loss_icl(frozen, probe, ps, ys, pq, yq, classes).item();
        }
        total = scale(l_align, cfg.lambda_align);
      }
      tape.backward(total);
      adam.step();
      monitor.observe(total.item());
      rec.l_align += l_align.item();
      rec.l_icl += icl_value;
      rec.l_total += total.item();
    }
    const double inv = 1.0 / static_cast<double>(cfg.steps_per_epoch);
    rec.l_align *= inv;
    rec.l_icl = cfg.lambda_icl > 0.0 ? rec.l_icl * inv : rec.l_icl;
    rec.l_total = loss_total(cfg, rec.l_icl, rec.l_align);
    if (!h_val.empty()) {
      const Matrix p = predict_dpt(adapter, frozen, h_train, y_train, h_val, classes);
      rec.val_acc = accuracy(argmax_rows(p), y_val);
      if (cfg.best_epoch && rec.val_acc > best_acc) {
        best_acc = rec.val_acc;
        best = adapter.clone();
        result.selected_epoch = epoch;
      }
    }
    result.curve.push_back(rec);
  }
  if (best) {
    result.adapter.params().copy_values_from(best->params());
  } else {
    result.selected_epoch = cfg.epochs - 1;
  }
  return result;
}

}  // namespace pdx
