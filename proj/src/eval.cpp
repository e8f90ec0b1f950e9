#include "pdx/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "pdx/optim.hpp"

namespace pdx {

using nlohmann::json;

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

Metrics metrics_from_confusion(const ConfusionMatrix& cm) {
  Metrics m;
  m.confusion = cm;
  const std::size_t c = cm.classes, n = cm.total();
  if (c == 0 || n == 0) throw ContractError("metrics: empty confusion matrix");
  auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  std::size_t trace = 0;
  double f1 = 0.0, sens = 0.0, spec = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    const double tp = static_cast<double>(cm.at(k, k));
    double fn = 0.0, fp = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == k) continue;
      fn += static_cast<double>(cm.at(k, j));
      fp += static_cast<double>(cm.at(j, k));
    }
    const double tn = static_cast<double>(n) - tp - fn - fp;
    trace += cm.at(k, k);
    f1 += ratio(2.0 * tp, 2.0 * tp + fp + fn);
    sens += ratio(tp, tp + fn);
    spec += ratio(tn, tn + fp);
  }
  m.accuracy = static_cast<double>(trace) / static_cast<double>(n);
  m.macro_f1 = f1 / static_cast<double>(c);
  m.sensitivity = sens / static_cast<double>(c);
  m.specificity = spec / static_cast<double>(c);
  return m;
}

double binary_auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw DimensionError("binary_auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Tied block occupies ranks i+1..j; its average rank is (i + j + 1) / 2.
    const double avg = 0.5 * static_cast<double>(i + j + 1);
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum += avg;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw ContractError("binary_auc: need at least one positive and one negative");
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

double macro_auc(const Matrix& posteriors, std::span<const int> truth, std::size_t classes) {
  if (posteriors.rows != truth.size() || posteriors.cols != classes) throw DimensionError("macro_auc: shape mismatch");
  double total = 0.0;
  std::size_t used = 0;
  std::vector<double> scores(truth.size());
  std::vector<std::uint8_t> positive(truth.size());
  for (std::size_t k = 0; k < classes; ++k) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      scores[i] = posteriors(i, k);
      positive[i] = truth[i] == static_cast<int>(k) ? 1 : 0;
      pos += positive[i];
    }
    if (pos == 0 || pos == truth.size()) continue;
    total += binary_auc(scores, positive);
    ++used;
  }
  if (used == 0) throw ContractError("macro_auc: no class has both positives and negatives");
  return total / static_cast<double>(used);
}

Metrics compute_metrics(const Matrix& posteriors, std::span<const int> truth, std::size_t classes) {
  if (classes < 2) throw ContractError("compute_metrics: need at least two classes");
  if (posteriors.rows != truth.size() || posteriors.cols != classes) {
    throw DimensionError("compute_metrics: posteriors are " + std::to_string(posteriors.rows) + "x" +
                         std::to_string(posteriors.cols) + " for " + std::to_string(truth.size()) + " samples and " +
                         std::to_string(classes) + " classes");
  }
  for (int y : truth) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ContractError("compute_metrics: truth label " + std::to_string(y) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
  }
  for (std::size_t r = 0; r < posteriors.rows; ++r) {
    const auto row = posteriors.row(r);
    const double s = std::accumulate(row.begin(), row.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-6) throw ContractError("compute_metrics: posterior row does not sum to 1");
  }
  ConfusionMatrix cm(classes);
  const auto pred = argmax_rows(posteriors);
  for (std::size_t i = 0; i < truth.size(); ++i) ++cm.at(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(pred[i]));
  Metrics m = metrics_from_confusion(cm);
  m.auc = macro_auc(posteriors, truth, classes);
  return m;
}

Summary summarize(std::vector<double> values) {
  Summary s;
  s.values = std::move(values);
  if (s.values.empty()) return s;
  const double n = static_cast<double>(s.values.size());
  s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / n;
  if (s.values.size() >= 2) {
    double ss = 0.0;
    for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

MetricsReport make_report(std::vector<Metrics> per_seed) {
  MetricsReport r;
  auto collect = [&](double Metrics::*field) {
    std::vector<double> v;
    for (const auto& m : per_seed) v.push_back(m.*field);
    return summarize(std::move(v));
  };
  r.accuracy = collect(&Metrics::accuracy);
  r.macro_f1 = collect(&Metrics::macro_f1);
  r.auc = collect(&Metrics::auc);
  r.sensitivity = collect(&Metrics::sensitivity);
  r.specificity = collect(&Metrics::specificity);
  r.per_seed = std::move(per_seed);
  return r;
}

// --- baselines -----------------------------------------------------------------

Matrix ParametricHead::predict(const Matrix& x) const {
  Matrix z = x;
  for (std::size_t r = 0; r < z.rows; ++r)
    for (std::size_t c = 0; c < z.cols; ++c) z(r, c) = (z(r, c) - mean[c]) / stddev[c];
  Tape tape;
  Var p = softmax(out(tape, gelu(hidden(tape, tape.constant({z.rows, z.cols}, z.data)))));
  return Matrix(x.rows, out.out(), std::vector<double>(p.values().begin(), p.values().end()));
}

ParametricHead train_parametric_head(const Matrix& x, std::span<const int> y, std::size_t classes,
                                     const ParametricHeadConfig& cfg, SeededRng& rng) {
  if (x.rows != y.size() || x.rows == 0) throw DimensionError("train_parametric_head: feature/label mismatch");
  ParametricHead head;
  head.mean.assign(x.cols, 0.0);
  head.stddev.assign(x.cols, 0.0);
  for (std::size_t c = 0; c < x.cols; ++c) {
    for (std::size_t r = 0; r < x.rows; ++r) head.mean[c] += x(r, c);
    head.mean[c] /= static_cast<double>(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) head.stddev[c] += (x(r, c) - head.mean[c]) * (x(r, c) - head.mean[c]);
    head.stddev[c] = std::sqrt(head.stddev[c] / static_cast<double>(x.rows));
    if (!(head.stddev[c] > 0.0)) head.stddev[c] = 1.0;
  }
  Matrix z = x;
  for (std::size_t r = 0; r < z.rows; ++r)
    for (std::size_t c = 0; c < z.cols; ++c) z(r, c) = (z(r, c) - head.mean[c]) / head.stddev[c];
  head.hidden = nn::Linear::create(head.params, "head.hidden", x.cols, cfg.hidden, rng);
  head.out = nn::Linear::create(head.params, "head.out", cfg.hidden, classes, rng);
  Adam adam(head.params.all(), {.lr = cfg.lr});
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    adam.zero_grad();
    Tape tape;
    Var logits = head.out(tape, gelu(head.hidden(tape, tape.constant({z.rows, z.cols}, z.data))));
    tape.backward(cross_entropy(logits, y));
    adam.step();
  }
  return head;
}

Engine finetune_engine(const Engine& engine, const Matrix& x, std::span<const int> y, std::size_t classes,
                       const FinetuneConfig& cfg, SeededRng& rng) {
  if (x.rows != y.size()) throw DimensionError("finetune_engine: feature/label mismatch");
  Engine tuned = engine.clone();
  tuned.params().set_frozen(false);
  Adam adam(tuned.params().all(), {.lr = cfg.lr});
  DivergenceMonitor monitor("finetune_engine");
  std::vector<std::size_t> all(x.rows);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> rows = all;
    if (x.rows > cfg.max_rows) {
      rows = sample_context(all, y, classes, static_cast<double>(cfg.max_rows) / static_cast<double>(x.rows), rng);
    }
    const std::vector<int> sub_y = select(y, rows);
    const Episode ep = draw_episode(sub_y, classes, cfg.support_fraction, rng);
    ContextBatch raw;
    std::vector<std::size_t> s_rows, q_rows;
    for (std::size_t i : ep.support) s_rows.push_back(rows[i]);
    for (std::size_t i : ep.query) q_rows.push_back(rows[i]);
    raw.support = x.select_rows(s_rows);
    raw.query = x.select_rows(q_rows);
    raw.support_labels = select(y, s_rows);
    raw.classes = classes;
    const ContextBatch batch = preprocess(raw);
    adam.zero_grad();
    Tape tape;
    Var loss = engine_task_loss(tuned, tape, batch, select(y, q_rows));
    tape.backward(loss);
    adam.step();
    monitor.observe(loss.item());
  }
  return tuned;
}

// --- experiments ---------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (seeds < 1) throw ConfigError("experiment: seeds must be >= 1");
  if (ratios.empty()) throw ConfigError("experiment: ratio grid is empty");
  for (double r : ratios) {
    if (!(r > 0.0 && r <= 1.0)) throw ConfigError("experiment: ratios must lie in (0, 1]");
  }
  dpt.validate();
  if (head.hidden == 0 || head.epochs == 0 || !(head.lr > 0.0)) throw ConfigError("experiment: invalid head config");
  if (!(finetune.lr > 0.0) || finetune.max_rows < 4) throw ConfigError("experiment: invalid finetune config");
  if (tabular_test_cap == 0) throw ConfigError("experiment: tabular_test_cap must be >= 1");
}

SeededRng experiment_rng(const ExperimentConfig& cfg, std::size_t s) { return SeededRng(cfg.seed, 1000 + s); }

namespace {

struct SplitView {
  Matrix train, val, test;
  std::vector<int> y_train, y_val, y_test;
};

SplitView view(const Matrix& x, std::span<const int> y, const SplitIndices& split) {
  return {x.select_rows(split.train), x.select_rows(split.validation), x.select_rows(split.test),
          select(y, split.train),     select(y, split.validation),     select(y, split.test)};
}

std::vector<double> sorted_unique(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

const SweepCell& SweepResult::at(double ratio, const std::string& method) const {
  for (const auto& c : cells)
    if (c.ratio == ratio && c.method == method) return c;
  throw ContractError("sweep: no cell for ratio " + std::to_string(ratio) + " and method " + method);
}

SweepResult run_context_sweep(const FeatureBench& bench, const Engine& engine, const ExperimentConfig& cfg) {
  cfg.validate();
  const auto ratios = sorted_unique(cfg.ratios);
  const SplitView v = view(bench.features, bench.labels, bench.split);
  // [ratio][method][seed]
  std::vector<std::vector<std::vector<Metrics>>> cells(ratios.size(), std::vector<std::vector<Metrics>>(3));
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    SeededRng rng = experiment_rng(cfg, s);
    SeededRng dpt_rng = rng.split(1), head_rng = rng.split(3);
    const DptResult dpt = train_dpt(v.train, v.y_train, v.val, v.y_val, bench.classes, engine, cfg.dpt, dpt_rng);
    const ParametricHead head = train_parametric_head(v.train, v.y_train, bench.classes, cfg.head, head_rng);
    const Metrics head_metrics = compute_metrics(head.predict(v.test), v.y_test, bench.classes);
    for (std::size_t k = 0; k < ratios.size(); ++k) {
      SeededRng ctx_rng = rng.split(100 + k);
      const auto ctx = sample_context(bench.split.train, bench.labels, bench.classes, ratios[k], ctx_rng);
      const Matrix h_ctx = bench.features.select_rows(ctx);
      const std::vector<int> y_ctx = select<int>(bench.labels, ctx);
      cells[k][0].push_back(
          compute_metrics(predict_raw(engine, h_ctx, y_ctx, v.test, bench.classes), v.y_test, bench.classes));
      cells[k][1].push_back(compute_metrics(predict_dpt(dpt.adapter, engine, h_ctx, y_ctx, v.test, bench.classes),
                                            v.y_test, bench.classes));
      cells[k][2].push_back(head_metrics);
    }
  }
  static const char* kMethods[] = {"raw-engine", "dpt", "parametric-head"};
  SweepResult out;
  for (std::size_t k = 0; k < ratios.size(); ++k)
    for (std::size_t m = 0; m < 3; ++m) out.cells.push_back({ratios[k], kMethods[m], make_report(cells[k][m])});
  return out;
}

const MethodResult& AblationResult::at(const std::string& method) const {
  for (const auto& r : rows)
    if (r.method == method) return r;
  throw ContractError("ablation: no row named " + method);
}

const MethodResult& TabularComparison::at(const std::string& method) const {
  for (const auto& r : methods)
    if (r.method == method) return r;
  throw ContractError("comparison: no method named " + method);
}

namespace {

json dpt_settings(const DptConfig& c) {
  return {{"lambda_align", c.lambda_align}, {"lambda_icl", c.lambda_icl}, {"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch}, {"fixed_episode", c.fixed_episode}};
}

}  // namespace

AblationResult run_ablations(const FeatureBench& bench, const Engine& engine, const ExperimentConfig& cfg) {
  cfg.validate();
  const SplitView v = view(bench.features, bench.labels, bench.split);
  const SplitView vr = view(bench.random_features, bench.labels, bench.split);
  DptConfig no_align = cfg.dpt, no_icl = cfg.dpt;
  no_align.lambda_align = 0.0;
  no_icl.lambda_icl = 0.0;
  no_align.validate();
  no_icl.validate();

  std::vector<std::vector<Metrics>> rows(5);
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    const SeededRng rng = experiment_rng(cfg, s);
    auto dpt_metrics = [&](const SplitView& sv, const DptConfig& dc) {
      SeededRng dpt_rng = rng.split(1);
      const DptResult r = train_dpt(sv.train, sv.y_train, sv.val, sv.y_val, bench.classes, engine, dc, dpt_rng);
      return compute_metrics(predict_dpt(r.adapter, engine, sv.train, sv.y_train, sv.test, bench.classes), sv.y_test,
                             bench.classes);
    };
    rows[0].push_back(dpt_metrics(v, cfg.dpt));
    rows[1].push_back(dpt_metrics(vr, cfg.dpt));
    rows[2].push_back(compute_metrics(predict_raw(engine, v.train, v.y_train, v.test, bench.classes), v.y_test,
                                      bench.classes));
    rows[3].push_back(dpt_metrics(v, no_align));
    rows[4].push_back(dpt_metrics(v, no_icl));
  }
  AblationResult out;
  out.rows.push_back({"full", make_report(std::move(rows[0])), dpt_settings(cfg.dpt)});
  out.rows.push_back({"w/o-pretraining", make_report(std::move(rows[1])), dpt_settings(cfg.dpt)});
  out.rows.push_back({"w/o-adapter", make_report(std::move(rows[2])), {{"preprocessing", "quantile"}}});
  out.rows.push_back({"w/o-align", make_report(std::move(rows[3])), dpt_settings(no_align)});
  out.rows.push_back({"w/o-icl", make_report(std::move(rows[4])), dpt_settings(no_icl)});
  return out;
}

SplitIndices tabular_split(std::span<const int> labels, std::size_t classes, const TabularDatasetSpec& spec,
                           const ExperimentConfig& cfg, SeededRng& rng) {
  const std::size_t n = labels.size();
  if (spec.context >= n) throw ContractError("tabular_split: context must be below the sample count");
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  SplitIndices split;
  split.train = sample_context(all, labels, classes, static_cast<double>(spec.context) / static_cast<double>(n), rng);
  std::vector<std::size_t> rest;
  std::set_difference(all.begin(), all.end(), split.train.begin(), split.train.end(), std::back_inserter(rest));
  if (cfg.tabular_validation > 0 && cfg.tabular_validation < rest.size()) {
    split.validation = sample_context(rest, labels, classes,
                                      static_cast<double>(cfg.tabular_validation) / static_cast<double>(rest.size()),
                                      rng);
    std::vector<std::size_t> remaining;
    std::set_difference(rest.begin(), rest.end(), split.validation.begin(), split.validation.end(),
                        std::back_inserter(remaining));
    rest = std::move(remaining);
  }
  split.test = rest.size() > cfg.tabular_test_cap
                   ? sample_context(rest, labels, classes,
                                    static_cast<double>(cfg.tabular_test_cap) / static_cast<double>(rest.size()), rng)
                   : rest;
  return split;
}

TabularComparison run_tabular_comparison(const TabularDataset& data, const TabularDatasetSpec& spec,
                                         const Engine& engine, const ExperimentConfig& cfg) {
  cfg.validate();
  if (data.classes > engine.config().max_classes) throw ContractError("compare: more classes than the engine supports");
  std::vector<std::vector<Metrics>> rows(3);
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    const SeededRng rng = experiment_rng(cfg, s);
    SeededRng split_rng = rng.split(4), tune_rng = rng.split(5), dpt_rng = rng.split(1);
    const SplitIndices split = tabular_split(data.labels, data.classes, spec, cfg, split_rng);
    const SplitView v = view(data.features, data.labels, split);
    rows[0].push_back(
        compute_metrics(predict_raw(engine, v.train, v.y_train, v.test, data.classes), v.y_test, data.classes));
    const Engine tuned = finetune_engine(engine, v.train, v.y_train, data.classes, cfg.finetune, tune_rng);
    rows[1].push_back(
        compute_metrics(predict_raw(tuned, v.train, v.y_train, v.test, data.classes), v.y_test, data.classes));
    const DptResult dpt = train_dpt(v.train, v.y_train, v.val, v.y_val, data.classes, engine, cfg.dpt, dpt_rng);
    rows[2].push_back(compute_metrics(predict_dpt(dpt.adapter, engine, v.train, v.y_train, v.test, data.classes),
                                      v.y_test, data.classes));
  }
  TabularComparison out;
  out.dataset = spec.name;
  out.methods.push_back({"raw-engine", make_report(std::move(rows[0])), {{"preprocessing", "quantile"}}});
  out.methods.push_back({"finetuned-engine",
                         make_report(std::move(rows[1])),
                         {{"steps", cfg.finetune.steps}, {"lr", cfg.finetune.lr}}});
  out.methods.push_back({"dpt", make_report(std::move(rows[2])), dpt_settings(cfg.dpt)});
  return out;
}

// --- reports -------------------------------------------------------------------

json to_json(const Metrics& m) {
  return {{"accuracy", m.accuracy},       {"macro_f1", m.macro_f1},       {"auc", m.auc},
          {"sensitivity", m.sensitivity}, {"specificity", m.specificity}, {"classes", m.confusion.classes},
          {"confusion", m.confusion.counts}};
}

namespace {

json to_json(const Summary& s) {
  json j = {{"mean", s.mean}, {"values", s.values}};
  j["std"] = s.stddev ? json(*s.stddev) : json(nullptr);
  return j;
}

std::string cell(const Summary& s) {
  char buf[48];
  if (s.stddev) {
    std::snprintf(buf, sizeof buf, "%.4f +/- %.4f", s.mean, *s.stddev);
  } else {
    std::snprintf(buf, sizeof buf, "%.4f", s.mean);
  }
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string table(const std::vector<std::string>& lead_headers,
                  const std::vector<std::pair<std::vector<std::string>, const MetricsReport*>>& rows) {
  std::vector<std::string> headers = lead_headers;
  for (const char* h : {"accuracy", "macro_f1", "auc", "sensitivity", "specificity"}) headers.emplace_back(h);
  std::vector<std::vector<std::string>> body;
  for (const auto& [lead, r] : rows) {
    auto line = lead;
    for (const Summary* s : {&r->accuracy, &r->macro_f1, &r->auc, &r->sensitivity, &r->specificity}) {
      line.push_back(cell(*s));
    }
    body.push_back(std::move(line));
  }
  std::vector<std::size_t> width(headers.size());
  for (std::size_t c = 0; c < headers.size(); ++c) {
    width[c] = headers[c].size();
    for (const auto& line : body) width[c] = std::max(width[c], line[c].size());
  }
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& line) {
    for (std::size_t c = 0; c < line.size(); ++c) os << pad(line[c], width[c] + 2);
    os << '\n';
  };
  emit(headers);
  for (const auto& line : body) emit(line);
  return os.str();
}

}  // namespace

json to_json(const MetricsReport& r) {
  json seeds = json::array();
  for (const auto& m : r.per_seed) seeds.push_back(to_json(m));
  return {{"accuracy", to_json(r.accuracy)},
          {"macro_f1", to_json(r.macro_f1)},
          {"auc", to_json(r.auc)},
          {"sensitivity", to_json(r.sensitivity)},
          {"specificity", to_json(r.specificity)},
          {"per_seed", seeds}};
}

json to_json(const SweepResult& r) {
  json cells = json::array();
  for (const auto& c : r.cells) cells.push_back({{"ratio", c.ratio}, {"method", c.method}, {"metrics", to_json(c.report)}});
  return {{"experiment", "context-sweep"}, {"cells", cells}};
}

json to_json(const AblationResult& r) {
  json rows = json::array();
  for (const auto& m : r.rows) rows.push_back({{"method", m.method}, {"settings", m.settings}, {"metrics", to_json(m.report)}});
  return {{"experiment", "ablation"}, {"rows", rows}};
}

json to_json(const TabularComparison& r) {
  json rows = json::array();
  for (const auto& m : r.methods) {
    rows.push_back({{"method", m.method}, {"settings", m.settings}, {"metrics", to_json(m.report)}});
  }
  return {{"experiment", "tabular-comparison"}, {"dataset", r.dataset}, {"methods", rows}};
}

std::string to_text(const SweepResult& r) {
  std::vector<std::pair<std::vector<std::string>, const MetricsReport*>> rows;
  for (const auto& c : r.cells) {
    char ratio[32];
    std::snprintf(ratio, sizeof ratio, "%g", c.ratio);
    rows.push_back({{ratio, c.method}, &c.report});
  }
  return table({"ratio", "method"}, rows);
}

std::string to_text(const AblationResult& r) {
  std::vector<std::pair<std::vector<std::string>, const MetricsReport*>> rows;
  for (const auto& m : r.rows) rows.push_back({{m.method}, &m.report});
  return table({"variant"}, rows);
}

std::string to_text(const TabularComparison& r) {
  std::vector<std::pair<std::vector<std::string>, const MetricsReport*>> rows;
  for (const auto& m : r.methods) rows.push_back({{r.dataset, m.method}, &m.report});
  return table({"dataset", "method"}, rows);
}

std::string to_csv(const SweepResult& r) {
  std::ostringstream os;
  os << "ratio,method,seed,metric,value\n";
  char buf[64];
  for (const auto& c : r.cells) {
    for (std::size_t s = 0; s < c.report.per_seed.size(); ++s) {
      const Metrics& m = c.report.per_seed[s];
      const std::pair<const char*, double> values[] = {{"accuracy", m.accuracy},
                                                       {"macro_f1", m.macro_f1},
                                                       {"auc", m.auc},
                                                       {"sensitivity", m.sensitivity},
                                                       {"specificity", m.specificity}};
      for (const auto& [name, value] : values) {
        std::snprintf(buf, sizeof buf, "%.17g", value);
        os << c.ratio << ',' << c.method << ',' << s << ',' << name << ',' << buf << '\n';
      }
    }
  }
  return os.str();
}

}  // namespace pdx
