#include "pdx/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pdx/errors.hpp"
#include "pdx/optim.hpp"

namespace pdx {

void EngineConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("engine: d_model must be a positive multiple of n_heads");
  }
  if (n_layers == 0) throw ConfigError("engine: n_layers must be >= 1");
  if (max_classes < 2) throw ConfigError("engine: max_classes must be >= 2");
  if (max_features < 1) throw ConfigError("engine: max_features must be >= 1");
  if (ff_width == 0) throw ConfigError("engine: ff_width must be >= 1");
}

void PriorTaskConfig::validate(const EngineConfig& engine) const {
  if (min_features < 1 || min_features > max_features || max_features > engine.max_features) {
    throw ConfigError("prior: feature range must be nonempty and within [1, engine.max_features]");
  }
  if (min_classes < 2 || min_classes > max_classes || max_classes > engine.max_classes) {
    throw ConfigError("prior: class range must be nonempty and within [2, engine.max_classes]");
  }
  if (min_hidden < 1 || min_hidden > max_hidden) throw ConfigError("prior: hidden width range is empty");
  if (max_relevant_features < 1) throw ConfigError("prior: max_relevant_features must be >= 1");
  if (activations.empty()) throw ConfigError("prior: activation set is empty");
  for (const auto& a : activations) {
    if (a != "relu" && a != "tanh") throw ConfigError("prior: unknown activation '" + a + "'");
  }
  if (!(label_noise >= 0.0 && label_noise <= 0.2)) throw ConfigError("prior: label_noise must lie in [0, 0.2]");
  if (min_samples < 2 || min_samples > max_samples) throw ConfigError("prior: sample range is empty");
  if (!(support_fraction > 0.0 && support_fraction < 1.0)) {
    throw ConfigError("prior: support_fraction must lie in (0, 1)");
  }
}

void ContextBatch::validate(const EngineConfig& engine) const {
  if (classes < 2 || classes > engine.max_classes) {
    throw ContractError("context: " + std::to_string(classes) + " classes outside [2, " +
                        std::to_string(engine.max_classes) + "]");
  }
  if (support.rows == 0) throw ContractError("context: empty support set");
  if (support.cols != query.cols) throw ContractError("context: support and query feature counts differ");
  if (support.cols > engine.max_features) {
    throw ContractError("context: " + std::to_string(support.cols) + " features exceed engine maximum " +
                        std::to_string(engine.max_features));
  }
  if (support_labels.size() != support.rows) throw ContractError("context: label count differs from support rows");
  for (int y : support_labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ContractError("context: support label " + std::to_string(y) + " outside [0, " + std::to_string(classes) +
                          ")");
    }
  }
}

// --- prior --------------------------------------------------------------------

namespace {

struct Teacher {
  std::vector<std::size_t> inputs;  // relevant feature indices
  Matrix w1, w2;
  std::vector<double> b1, b2;
  bool relu = true;
};

Teacher draw_teacher(const PriorTaskConfig& cfg, std::size_t features, std::size_t classes, SeededRng& rng) {
  Teacher t;
  const std::size_t relevant = static_cast<std::size_t>(
      rng.uniform_int(1, static_cast<std::int64_t>(std::min(features, cfg.max_relevant_features))));
  auto perm = rng.permutation(features);
  t.inputs.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(relevant));
  std::sort(t.inputs.begin(), t.inputs.end());
  const auto hidden = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.min_hidden), static_cast<std::int64_t>(cfg.max_hidden)));
  t.w1 = Matrix(relevant, hidden);
  for (double& w : t.w1.data) w = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(relevant)));
  t.b1.resize(hidden);
  for (double& b : t.b1) b = rng.normal(0.0, 0.5);
  t.w2 = Matrix(hidden, classes);
  for (double& w : t.w2.data) w = rng.normal(0.0, 1.0);
  t.b2.assign(classes, 0.0);
  const auto act = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.activations.size() - 1)));
  t.relu = cfg.activations[act] == "relu";
  return t;
}

// Teacher logits are standardized per class over the drawn rows so that the
// argmax labels are not dominated by a single class.
std::vector<int> teacher_labels(const Teacher& t, const Matrix& x, std::size_t classes) {
  const std::size_t n = x.rows, hidden = t.w1.cols;
  Matrix logits(n, classes);
  std::vector<double> h(hidden);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < hidden; ++j) {
      double a = t.b1[j];
      for (std::size_t i = 0; i < t.inputs.size(); ++i) a += x(r, t.inputs[i]) * t.w1(i, j);
      h[j] = t.relu ? std::max(a, 0.0) : std::tanh(a);
    }
    for (std::size_t c = 0; c < classes; ++c) {
      double z = t.b2[c];
      for (std::size_t j = 0; j < hidden; ++j) z += h[j] * t.w2(j, c);
      logits(r, c) = z;
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    double mu = 0.0, sq = 0.0;
    for (std::size_t r = 0; r < n; ++r) mu += logits(r, c);
    mu /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) sq += (logits(r, c) - mu) * (logits(r, c) - mu);
    const double sd = std::sqrt(sq / static_cast<double>(n)) + 1e-12;
    for (std::size_t r = 0; r < n; ++r) logits(r, c) = (logits(r, c) - mu) / sd;
  }
  std::vector<int> y(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = logits.row(r);
    y[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return y;
}

bool covers_classes(std::span<const int> labels, std::size_t classes) {
  std::vector<char> seen(classes, 0);
  for (int y : labels) seen[static_cast<std::size_t>(y)] = 1;
  return std::all_of(seen.begin(), seen.end(), [](char s) { return s != 0; });
}

}  // namespace

PriorTask sample_prior_task(const PriorTaskConfig& cfg, SeededRng& rng) {
  // Feature counts are drawn log-uniformly so low-dimensional tasks are common.
  const double lf = std::log(static_cast<double>(cfg.min_features));
  const double hf = std::log(static_cast<double>(cfg.max_features) + 1.0);
  const std::size_t features = std::clamp<std::size_t>(static_cast<std::size_t>(std::exp(rng.uniform(lf, hf))),
                                                        cfg.min_features, cfg.max_features);
  std::size_t classes = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.min_classes), static_cast<std::int64_t>(cfg.max_classes)));
  const auto n = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.min_samples), static_cast<std::int64_t>(cfg.max_samples)));
  const std::size_t n_support =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(cfg.support_fraction * static_cast<double>(n))), 1,
                              n - 1);

  Teacher teacher = draw_teacher(cfg, features, classes, rng);
  for (std::size_t attempt = 0;; ++attempt) {
    if (attempt > 0 && attempt % 100 == 0) {
      if (classes > 2) {
        --classes;
      } else {
        teacher = draw_teacher(cfg, features, classes, rng);
      }
      if (attempt >= 1000) throw ContractError("sample_prior_task: could not cover classes in support");
    }
    Matrix x(n, features);
    for (double& v : x.data) v = rng.normal();
    std::vector<int> y = teacher_labels(teacher, x, teacher.w2.cols);
    // A reduced class count keeps the first `classes` teacher outputs.
    if (classes < teacher.w2.cols) {
      Teacher reduced = teacher;
      reduced.w2 = Matrix(teacher.w2.rows, classes);
      for (std::size_t j = 0; j < teacher.w2.rows; ++j)
        for (std::size_t c = 0; c < classes; ++c) reduced.w2(j, c) = teacher.w2(j, c);
      reduced.b2.assign(classes, 0.0);
      teacher = std::move(reduced);
      y = teacher_labels(teacher, x, classes);
    }
    for (int& label : y) {
      if (rng.bernoulli(cfg.label_noise)) label = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(classes) - 1));
    }
    if (!covers_classes(std::span<const int>(y).first(n_support), classes)) continue;

    PriorTask task;
    std::vector<std::size_t> s(n_support), q(n - n_support);
    std::iota(s.begin(), s.end(), std::size_t{0});
    std::iota(q.begin(), q.end(), n_support);
    task.batch.support = x.select_rows(s);
    task.batch.query = x.select_rows(q);
    task.batch.support_labels.assign(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(n_support));
    task.query_labels.assign(y.begin() + static_cast<std::ptrdiff_t>(n_support), y.end());
    task.batch.classes = classes;
    return task;
  }
}

ContextBatch preprocess(const ContextBatch& raw) {
  ContextBatch out;
  const QuantileFit fit = quantile_fit(raw.support);
  out.support = quantile_transform(fit, raw.support);
  out.query = quantile_transform(fit, raw.query);
  out.support_labels = raw.support_labels;
  out.classes = raw.classes;
  return out;
}

// --- engine -------------------------------------------------------------------

Engine::Engine(EngineConfig cfg, SeededRng& init) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model;
  input_ = nn::Linear::create(store_, "engine.input", cfg_.max_features + 1, d, init);
  label_table_ = &store_.add("engine.labels", {cfg_.max_classes + 1, d});
  for (double& v : label_table_->value) v = init.normal(0.0, 1.0);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    blocks_.push_back(nn::TransformerBlock::create(store_, "engine.block" + std::to_string(l), d, cfg_.n_heads,
                                                   cfg_.ff_width, init));
  }
  final_norm_ = nn::LayerNorm::create(store_, "engine.final_norm", d);
  head_ = nn::Linear::create(store_, "engine.head", d, cfg_.max_classes, init, 0.01);
}

Engine Engine::clone() const {
  SeededRng unused(0);
  Engine copy(cfg_, unused);
  copy.store_.copy_values_from(store_);
  for (auto* p : copy.store_.all()) p->frozen = store_.get(p->name).frozen;
  return copy;
}

std::vector<double> context_mask(std::size_t ns, std::size_t nq) {
  const std::size_t n = ns + nq;
  std::vector<double> mask(n * n, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ns; ++j) mask[i * n + j] = 0.0;
    if (i >= ns) mask[i * n + i] = 0.0;
  }
  return mask;
}

Var Engine::logits(Tape& tape, Var support, std::span<const int> support_labels, Var query,
                   std::size_t classes) const {
  const std::size_t ns = support.rows(), nq = query.rows(), f = support.cols();
  if (classes < 2 || classes > cfg_.max_classes) {
    throw ContractError("engine: " + std::to_string(classes) + " classes outside [2, " +
                        std::to_string(cfg_.max_classes) + "]");
  }
  if (query.cols() != f) throw DimensionError("engine: support and query feature counts differ");
  if (f > cfg_.max_features) {
    throw ContractError("engine: " + std::to_string(f) + " features exceed maximum " +
                        std::to_string(cfg_.max_features));
  }
  if (support_labels.size() != ns) throw DimensionError("engine: label count differs from support rows");
  if (ns == 0) throw ContractError("engine: empty support set");

  std::vector<int> label_idx(ns + nq, static_cast<int>(cfg_.max_classes));
  for (std::size_t i = 0; i < ns; ++i) {
    if (support_labels[i] < 0 || static_cast<std::size_t>(support_labels[i]) >= classes) {
      throw ContractError("engine: support label " + std::to_string(support_labels[i]) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
    label_idx[i] = support_labels[i];
  }

  // Rescaling by sqrt(F_max / F) keeps the projected token scale independent
  // of how many of the padded feature slots are in use.
  Var x = scale(concat_rows(support, query), std::sqrt(static_cast<double>(cfg_.max_features) / static_cast<double>(f)));
  x = pad_cols(x, cfg_.max_features);
  const double fraction = static_cast<double>(f) / static_cast<double>(cfg_.max_features);
  x = concat_cols(x, tape.constant({ns + nq, 1}, std::vector<double>(ns + nq, fraction)));
  Var tok = add(input_(tape, x), embedding(tape.param(*label_table_), label_idx));

  const std::vector<double> mask = context_mask(ns, nq);
  for (const auto& block : blocks_) tok = block(tape, tok, mask);
  tok = final_norm_(tape, tok);

  std::vector<std::size_t> query_rows(nq);
  std::iota(query_rows.begin(), query_rows.end(), ns);
  return slice_cols(head_(tape, gather_rows(tok, query_rows)), 0, classes);
}

Matrix Engine::predict(const ContextBatch& batch) const {
  batch.validate(cfg_);
  Tape tape;
  Var s = tape.constant({batch.support.rows, batch.support.cols}, batch.support.data);
  Var q = tape.constant({batch.query.rows, batch.query.cols}, batch.query.data);
  Var p = softmax(logits(tape, s, batch.support_labels, q, batch.classes));
  return Matrix(batch.query.rows, batch.classes, std::vector<double>(p.values().begin(), p.values().end()));
}

Var engine_task_loss(const Engine& engine, Tape& tape, const ContextBatch& batch, std::span<const int> query_labels) {
  Var s = tape.constant({batch.support.rows, batch.support.cols}, batch.support.data);
  Var q = tape.constant({batch.query.rows, batch.query.cols}, batch.query.data);
  return cross_entropy(engine.logits(tape, s, batch.support_labels, q, batch.classes), query_labels);
}

void DivergenceMonitor::observe(double loss) {
  if (!std::isfinite(loss)) throw DivergenceError(what_ + ": non-finite loss");
  if (initial_ < 0.0) {
    initial_ = loss;
    return;
  }
  streak_ = loss > factor_ * initial_ ? streak_ + 1 : 0;
  if (streak_ >= patience_) {
    throw DivergenceError(what_ + ": loss exceeded " + std::to_string(factor_) + "x its initial value for " +
                          std::to_string(patience_) + " consecutive steps");
  }
}

EnginePretrainResult pretrain_engine(const EngineConfig& cfg, const PriorTaskConfig& prior,
                                     const EnginePretrainOptions& options, SeededRng& rng) {
  cfg.validate();
  prior.validate(cfg);
  if (options.steps < 1) throw ContractError("pretrain_engine: steps must be >= 1");
  if (options.tasks_per_step < 1) throw ContractError("pretrain_engine: tasks_per_step must be >= 1");

  SeededRng init = rng.split(1);
  SeededRng tasks = rng.split(2);
  Engine engine(cfg, init);
  Adam adam(engine.params().all(), {.lr = options.lr});
  DivergenceMonitor monitor("pretrain_engine");
  std::vector<double> curve;
  curve.reserve(options.steps);
  for (std::size_t step = 0; step < options.steps; ++step) {
    adam.zero_grad();
    double step_loss = 0.0;
    for (std::size_t b = 0; b < options.tasks_per_step; ++b) {
      const PriorTask task = sample_prior_task(prior, tasks);
      const ContextBatch batch = preprocess(task.batch);
      Tape tape;
      Var loss = engine_task_loss(engine, tape, batch, task.query_labels);
      step_loss += loss.item();
      tape.backward(scale(loss, 1.0 / static_cast<double>(options.tasks_per_step)));
    }
    step_loss /= static_cast<double>(options.tasks_per_step);
    monitor.observe(step_loss);
    curve.push_back(step_loss);
    adam.step();
    if (options.on_step) options.on_step(step, step_loss);
  }
  return {std::move(engine), std::move(curve)};
}

}  // namespace pdx
