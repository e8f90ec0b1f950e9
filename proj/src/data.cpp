#include "pdx/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace pdx {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void VolumeSpec::validate() const {
  if (patch == 0 || depth == 0 || height == 0 || width == 0) throw ConfigError("volume: dimensions must be positive");
  if (depth % patch || height % patch || width % patch) {
    throw ConfigError("volume: patch size " + std::to_string(patch) + " must divide every dimension");
  }
}

void TabularSchema::validate() const {
  for (const auto& c : columns) {
    if (c.kind == ColumnKind::categorical && c.cardinality < 2) {
      throw ConfigError("schema: categorical column '" + c.name + "' needs cardinality >= 2");
    }
    if (c.kind == ColumnKind::continuous && !(c.stddev > 0.0)) {
      throw ConfigError("schema: continuous column '" + c.name + "' has non-positive std");
    }
  }
}

void TabularSchema::fit_standardization(const Matrix& table, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ContractError("fit_standardization: no rows");
  for (std::size_t j = 0; j < columns.size(); ++j) {
    auto& col = columns[j];
    if (col.kind != ColumnKind::continuous) continue;
    double mu = 0.0;
    for (std::size_t r : rows) mu += table(r, j);
    mu /= static_cast<double>(rows.size());
    double var = 0.0;
    for (std::size_t r : rows) var += (table(r, j) - mu) * (table(r, j) - mu);
    var /= static_cast<double>(rows.size());
    col.mean = mu;
    col.stddev = var > 0.0 ? std::sqrt(var) : 1.0;
  }
}

double TabularSchema::standardize(std::size_t column, double value) const {
  const auto& c = columns.at(column);
  return (value - c.mean) / c.stddev;
}

void SyntheticMultimodalConfig::validate() const {
  volume.validate();
  if (classes < 2) throw ConfigError("multimodal: classes must be >= 2");
  if (class_priors.size() != classes) throw ConfigError("multimodal: class_priors must have one entry per class");
  double total = 0.0;
  for (double p : class_priors) {
    if (!(p >= 0.0)) throw ConfigError("multimodal: class priors must be nonnegative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("multimodal: class priors must sum to 1");
  if (!(coupling >= 0.0 && coupling <= 1.0)) throw ConfigError("multimodal: coupling must lie in [0, 1]");
  if (!(label_noise >= 0.0 && label_noise < 1.0)) throw ConfigError("multimodal: label_noise must lie in [0, 1)");
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ConfigError("multimodal: missing_rate must lie in [0, 1)");
  if (min_cardinality < 2 || min_cardinality > max_cardinality) {
    throw ConfigError("multimodal: cardinality range must be nonempty and >= 2");
  }
  if (samples < classes) throw ConfigError("multimodal: fewer samples than classes");
  if (categorical_columns + continuous_columns == 0) throw ConfigError("multimodal: schema has no columns");
}

void TabularDatasetSpec::validate() const {
  if (classes < 2) throw ConfigError("tabular: classes must be >= 2");
  if (features == 0) throw ConfigError("tabular: features must be >= 1");
  if (context >= samples) throw ConfigError("tabular: context size must be below the sample count");
  if (context < classes) throw ConfigError("tabular: context must hold at least one sample per class");
  if (!(separation >= 0.0)) throw ConfigError("tabular: separation must be nonnegative");
}

// --- generators -----------------------------------------------------------------

namespace {

constexpr double kTwoPi = 6.283185307179586;

/// Sum of a few random low-frequency cosines over the volume grid.
struct SmoothField {
  struct Wave {
    double fx, fy, fz, phase, amplitude;
  };
  std::vector<Wave> waves;

  static SmoothField draw(SeededRng& rng, std::size_t n_waves, double amplitude, int max_freq) {
    SmoothField f;
    const double per_wave = amplitude / std::sqrt(static_cast<double>(n_waves));
    for (std::size_t i = 0; i < n_waves; ++i) {
      Wave w{};
      w.fx = static_cast<double>(rng.uniform_int(0, max_freq));
      w.fy = static_cast<double>(rng.uniform_int(0, max_freq));
      w.fz = static_cast<double>(rng.uniform_int(0, max_freq));
      w.phase = rng.uniform(0.0, kTwoPi);
      w.amplitude = per_wave * std::sqrt(2.0);
      f.waves.push_back(w);
    }
    return f;
  }

  void accumulate(const VolumeSpec& v, double weight, std::vector<double>& out) const {
    if (weight == 0.0) return;
    for (const auto& w : waves) {
      // cos(a + b + c) expanded through per-axis tables.
      std::vector<double> cx(v.width), sx(v.width), cy(v.height), sy(v.height), cz(v.depth), sz(v.depth);
      for (std::size_t i = 0; i < v.width; ++i) {
        const double a = kTwoPi * w.fx * static_cast<double>(i) / static_cast<double>(v.width) + w.phase;
        cx[i] = std::cos(a);
        sx[i] = std::sin(a);
      }
      for (std::size_t i = 0; i < v.height; ++i) {
        const double a = kTwoPi * w.fy * static_cast<double>(i) / static_cast<double>(v.height);
        cy[i] = std::cos(a);
        sy[i] = std::sin(a);
      }
      for (std::size_t i = 0; i < v.depth; ++i) {
        const double a = kTwoPi * w.fz * static_cast<double>(i) / static_cast<double>(v.depth);
        cz[i] = std::cos(a);
        sz[i] = std::sin(a);
      }
      const double amp = weight * w.amplitude;
      std::size_t idx = 0;
      for (std::size_t z = 0; z < v.depth; ++z)
        for (std::size_t y = 0; y < v.height; ++y) {
          // cos(b + c) and sin(b + c)
          const double cyz = cy[y] * cz[z] - sy[y] * sz[z];
          const double syz = sy[y] * cz[z] + cy[y] * sz[z];
          for (std::size_t x = 0; x < v.width; ++x, ++idx) out[idx] += amp * (cx[x] * cyz - sx[x] * syz);
        }
    }
  }
};

std::vector<int> draw_labels(std::size_t n, std::span<const double> priors, SeededRng& rng) {
  std::vector<int> y(n);
  for (auto& label : y) {
    const double u = rng.uniform();
    double acc = 0.0;
    label = static_cast<int>(priors.size()) - 1;
    for (std::size_t c = 0; c < priors.size(); ++c) {
      acc += priors[c];
      if (u < acc) {
        label = static_cast<int>(c);
        break;
      }
    }
  }
  return y;
}

}  // namespace

MultimodalDataset gen_multimodal(const SyntheticMultimodalConfig& cfg, SeededRng& rng) {
  cfg.validate();
  SeededRng world = rng.split(1);
  SeededRng subjects = rng.split(2);

  MultimodalDataset data;
  data.volume = cfg.volume;
  data.classes = cfg.classes;
  const std::size_t n_cols = cfg.categorical_columns + cfg.continuous_columns;
  const double k = cfg.coupling;

  // Dataset-level structure: shared anatomy, class templates, a severity
  // pattern shared by both modalities, tabular class effects.
  const SmoothField anatomy = SmoothField::draw(world, 8, 1.0, 2);
  std::vector<SmoothField> templates;
  for (std::size_t c = 0; c < cfg.classes; ++c) templates.push_back(SmoothField::draw(world, 6, cfg.image_signal, 2));
  const SmoothField severity_pattern = SmoothField::draw(world, 4, 0.5, 1);

  for (std::size_t j = 0; j < cfg.categorical_columns; ++j) {
    TabularColumn col;
    col.name = "cat" + std::to_string(j);
    col.kind = ColumnKind::categorical;
    col.cardinality = static_cast<int>(world.uniform_int(cfg.min_cardinality, cfg.max_cardinality));
    data.schema.columns.push_back(col);
  }
  for (std::size_t j = 0; j < cfg.continuous_columns; ++j) {
    TabularColumn col;
    col.name = "num" + std::to_string(j);
    col.kind = ColumnKind::continuous;
    data.schema.columns.push_back(col);
  }
  // Class-conditional effects: categorical logits and continuous means.
  std::vector<Matrix> cat_logits;
  for (std::size_t j = 0; j < cfg.categorical_columns; ++j) {
    Matrix l(cfg.classes, static_cast<std::size_t>(data.schema.columns[j].cardinality));
    for (double& v : l.data) v = world.normal(0.0, 1.5 * cfg.tabular_signal);
    cat_logits.push_back(std::move(l));
  }
  Matrix cont_means(cfg.classes, cfg.continuous_columns);
  for (double& v : cont_means.data) v = world.normal(0.0, cfg.tabular_signal);
  std::vector<double> severity_loading(cfg.continuous_columns);
  for (double& v : severity_loading) v = world.bernoulli(0.4) ? world.normal(0.0, 0.8) : 0.0;
  std::vector<double> cont_offset(cfg.continuous_columns), cont_scale(cfg.continuous_columns);
  for (std::size_t j = 0; j < cfg.continuous_columns; ++j) {
    cont_offset[j] = world.normal(0.0, 5.0);
    cont_scale[j] = std::exp(world.normal(0.0, 0.5));
  }

  data.labels = draw_labels(cfg.samples, cfg.class_priors, subjects);
  const std::size_t voxels = cfg.volume.voxels();
  data.volumes.resize(cfg.samples * voxels);
  data.tables = Matrix(cfg.samples, n_cols);
  data.missing.assign(cfg.samples * n_cols, 0);
  std::vector<double> vol(voxels);
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    const int y = data.labels[i];
    SeededRng s = subjects.split(1000 + i);
    // Ordinal severity links the two modalities; its class dependence scales with coupling.
    const double severity = k * static_cast<double>(y) + s.normal();

    std::fill(vol.begin(), vol.end(), 0.0);
    anatomy.accumulate(cfg.volume, 1.0, vol);
    templates[static_cast<std::size_t>(y)].accumulate(cfg.volume, k, vol);
    severity_pattern.accumulate(cfg.volume, severity, vol);
    SmoothField::draw(s, 3, 0.5, 1).accumulate(cfg.volume, 1.0, vol);
    for (std::size_t v = 0; v < voxels; ++v) {
      data.volumes[i * voxels + v] = static_cast<float>(vol[v] + s.normal(0.0, cfg.voxel_noise));
    }

    for (std::size_t j = 0; j < cfg.categorical_columns; ++j) {
      const Matrix& l = cat_logits[j];
      std::vector<double> p(l.cols);
      double z = 0.0;
      for (std::size_t c = 0; c < l.cols; ++c) z += (p[c] = std::exp(k * l(static_cast<std::size_t>(y), c)));
      double u = s.uniform() * z, acc = 0.0;
      std::size_t pick = l.cols - 1;
      for (std::size_t c = 0; c < l.cols; ++c) {
        acc += p[c];
        if (u < acc) {
          pick = c;
          break;
        }
      }
      data.tables(i, j) = static_cast<double>(pick);
    }
    for (std::size_t j = 0; j < cfg.continuous_columns; ++j) {
      const double latent = k * cont_means(static_cast<std::size_t>(y), j) + severity_loading[j] * severity + s.normal();
      const std::size_t col = cfg.categorical_columns + j;
      data.tables(i, col) = cont_offset[j] + cont_scale[j] * latent;
      if (s.bernoulli(cfg.missing_rate)) data.missing[i * n_cols + col] = 1;
    }
    if (s.bernoulli(cfg.label_noise)) data.labels[i] = static_cast<int>(s.uniform_int(0, static_cast<std::int64_t>(cfg.classes) - 1));
  }
  for (std::size_t i = 0; i < cfg.samples; ++i)
    for (std::size_t j = 0; j < n_cols; ++j)
      if (data.missing[i * n_cols + j]) data.tables(i, j) = 0.0;
  return data;
}

TabularDataset gen_tabular(const TabularDatasetSpec& spec, SeededRng& rng) {
  spec.validate();
  SeededRng world = rng.split(1);
  SeededRng rows = rng.split(2);
  const std::size_t f = spec.features;
  Matrix means(spec.classes, f);
  for (double& v : means.data) v = world.normal(0.0, spec.separation);
  // Shared covariance L L^T with L unit lower-triangular.
  Matrix chol(f, f);
  const double off = 0.3 / std::sqrt(static_cast<double>(f));
  for (std::size_t r = 0; r < f; ++r) {
    chol(r, r) = 1.0;
    for (std::size_t c = 0; c < r; ++c) chol(r, c) = world.normal(0.0, off);
  }

  TabularDataset data;
  data.classes = spec.classes;
  if (spec.balanced) {
    data.labels.resize(spec.samples);
    for (std::size_t i = 0; i < spec.samples; ++i) data.labels[i] = static_cast<int>(i % spec.classes);
    rows.shuffle(data.labels);
  } else {
    std::vector<double> priors(spec.classes);
    double z = 0.0;
    for (double& p : priors) z += (p = world.uniform(0.5, 1.5));
    for (double& p : priors) p /= z;
    data.labels = draw_labels(spec.samples, priors, rows);
  }
  data.features = Matrix(spec.samples, f);
  std::vector<double> eps(f);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    for (double& e : eps) e = rows.normal();
    const auto y = static_cast<std::size_t>(data.labels[i]);
    for (std::size_t r = 0; r < f; ++r) {
      double v = means(y, r);
      for (std::size_t c = 0; c <= r; ++c) v += chol(r, c) * eps[c];
      data.features(i, r) = v;
    }
  }
  return data;
}

// --- splits, imputation, context -------------------------------------------------

namespace {

std::vector<std::vector<std::size_t>> members_by_class(std::span<const int> labels, std::span<const std::size_t> pool,
                                                       std::size_t classes) {
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i : pool) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw ContractError("label outside class range");
    members[static_cast<std::size_t>(y)].push_back(i);
  }
  return members;
}

/// Largest-remainder apportionment of `total` over groups proportional to `sizes`.
std::vector<std::size_t> apportion(std::span<const std::size_t> sizes, std::size_t total) {
  const double n = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  std::vector<std::size_t> quota(sizes.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    const double exact = n > 0 ? static_cast<double>(total) * static_cast<double>(sizes[c]) / n : 0.0;
    quota[c] = std::min(sizes[c], static_cast<std::size_t>(std::floor(exact)));
    assigned += quota[c];
    remainders.emplace_back(exact - static_cast<double>(quota[c]), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total && i < remainders.size(); ++i) {
    const std::size_t c = remainders[i].second;
    if (quota[c] < sizes[c]) {
      ++quota[c];
      ++assigned;
    }
  }
  return quota;
}

/// Rounds the class-by-part table of exact shares so every row sums to its
/// class size, every column to its part size, and every cell is within one of
/// its exact value. Leftover units go, at most one per part, to the parts with the
/// largest remaining deficit (a Gale-Ryser style greedy).
std::vector<std::array<std::size_t, 3>> split_quotas(std::span<const std::size_t> sizes,
                                                     const std::array<std::size_t, 3>& parts) {
  const double n = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  std::vector<std::array<std::size_t, 3>> q(sizes.size());
  std::array<std::size_t, 3> deficit = parts;
  std::vector<std::size_t> spare(sizes.size());
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    std::size_t used = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      q[c][p] = static_cast<std::size_t>(
          std::floor(static_cast<double>(parts[p]) * static_cast<double>(sizes[c]) / n + 1e-9));
      used += q[c][p];
      deficit[p] -= q[c][p];
    }
    spare[c] = sizes[c] - used;
  }
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return spare[a] > spare[b]; });
  for (std::size_t c : order) {
    std::array<bool, 3> taken{};
    for (std::size_t k = 0; k < spare[c]; ++k) {
      std::size_t best = 3;
      for (std::size_t p = 0; p < 3; ++p) {
        if (deficit[p] == 0 || taken[p]) continue;
        if (best == 3 || deficit[p] > deficit[best]) best = p;
      }
      if (best == 3) throw ContractError("split_stratified: quota rounding failed");
      taken[best] = true;
      ++q[c][best];
      --deficit[best];
    }
  }
  return q;
}

}  // namespace

SplitIndices split_stratified(std::span<const int> labels, std::span<const double> fractions, SeededRng& rng) {
  if (fractions.size() != 3) throw ContractError("split_stratified: expected {train, validation, test} fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ContractError("split_stratified: fractions must be nonnegative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("split_stratified: fractions must sum to 1");
  const int max_label = labels.empty() ? -1 : *std::max_element(labels.begin(), labels.end());
  const std::size_t classes = static_cast<std::size_t>(max_label + 1);
  std::vector<std::size_t> all(labels.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto members = members_by_class(labels, all, classes);
  std::vector<std::size_t> sizes;
  for (std::size_t c = 0; c < classes; ++c) {
    if (members[c].size() < 3) {
      throw ContractError("split_stratified: class " + std::to_string(c) + " has fewer than 3 members");
    }
    sizes.push_back(members[c].size());
    rng.shuffle(members[c]);
  }
  const double n = static_cast<double>(labels.size());
  const auto n_val = static_cast<std::size_t>(std::lround(fractions[1] * n));
  const auto n_test = static_cast<std::size_t>(std::lround(fractions[2] * n));
  const auto quota = split_quotas(sizes, {labels.size() - n_val - n_test, n_val, n_test});
  SplitIndices split;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto& m = members[c];
    const std::size_t v = quota[c][1], t = quota[c][2];
    std::size_t i = 0;
    for (; i < v; ++i) split.validation.push_back(m[i]);
    for (; i < v + t; ++i) split.test.push_back(m[i]);
    for (; i < m.size(); ++i) split.train.push_back(m[i]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

Matrix impute_mean(const Matrix& table, std::span<const std::uint8_t> missing, std::span<const std::size_t> fit_rows) {
  if (missing.size() != table.rows * table.cols) throw DimensionError("impute_mean: missing mask shape differs");
  Matrix out = table;
  for (std::size_t j = 0; j < table.cols; ++j) {
    bool any_missing = false;
    for (std::size_t r = 0; r < table.rows && !any_missing; ++r) any_missing = missing[r * table.cols + j] != 0;
    if (!any_missing) continue;
    double total = 0.0;
    std::size_t observed = 0;
    for (std::size_t r : fit_rows) {
      if (missing[r * table.cols + j]) continue;
      total += table(r, j);
      ++observed;
    }
    if (observed == 0) {
      throw ContractError("impute_mean: column " + std::to_string(j) + " has no observed value in the fit rows");
    }
    const double mu = total / static_cast<double>(observed);
    for (std::size_t r = 0; r < table.rows; ++r)
      if (missing[r * table.cols + j]) out(r, j) = mu;
  }
  return out;
}

std::vector<std::size_t> sample_context(std::span<const std::size_t> train, std::span<const int> labels,
                                        std::size_t classes, double ratio, SeededRng& rng) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ContractError("sample_context: ratio must lie in (0, 1]");
  if (ratio == 1.0) return {train.begin(), train.end()};
  auto members = members_by_class(labels, train, classes);
  std::vector<std::size_t> sizes;
  std::size_t present = 0;
  for (auto& m : members) {
    sizes.push_back(m.size());
    present += m.empty() ? 0 : 1;
    rng.shuffle(m);
  }
  const std::size_t target = std::min(
      train.size(), std::max(present, static_cast<std::size_t>(std::lround(ratio * static_cast<double>(train.size())))));
  auto quota = apportion(sizes, target);
  // Top up classes that received no slot, taking from the largest quota.
  for (std::size_t c = 0; c < classes; ++c) {
    if (quota[c] > 0 || sizes[c] == 0) continue;
    const auto donor = static_cast<std::size_t>(std::max_element(quota.begin(), quota.end()) - quota.begin());
    --quota[donor];
    quota[c] = 1;
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < quota[c]; ++i) out.push_back(members[c][i]);
  std::sort(out.begin(), out.end());
  return out;
}

// --- persistence ---------------------------------------------------------------------

namespace {

template <typename T>
void write_array(const std::filesystem::path& path, std::span<const T> values) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (!os) throw Error("failed writing " + path.string());
}

template <typename T>
std::vector<T> read_array(const std::filesystem::path& path, std::size_t count) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw CorruptionError("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(is.tellg());
  if (bytes != count * sizeof(T)) {
    throw CorruptionError(path.string() + ": expected " + std::to_string(count * sizeof(T)) + " bytes, found " +
                          std::to_string(bytes));
  }
  is.seekg(0);
  std::vector<T> out(count);
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  if (!is) throw CorruptionError("failed reading " + path.string());
  return out;
}

json read_sidecar(const std::filesystem::path& dir) {
  std::ifstream is(dir / "dataset.json");
  if (!is) throw CorruptionError("missing dataset.json in " + dir.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw CorruptionError("dataset.json: " + std::string(e.what()));
  }
}

void write_sidecar(const std::filesystem::path& dir, json sidecar, const std::string& extra) {
  if (!extra.empty()) sidecar["provenance"] = json::parse(extra);
  std::ofstream os(dir / "dataset.json");
  os << sidecar.dump(2) << '\n';
  if (!os) throw Error("failed writing dataset.json");
}

void check_labels(std::span<const int> labels, std::size_t classes) {
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw CorruptionError("labels.i32: label outside class range");
}

}  // namespace

void save_multimodal(const MultimodalDataset& data, const std::filesystem::path& dir, const std::string& sidecar_extra) {
  std::filesystem::create_directories(dir);
  json cols = json::array();
  for (const auto& c : data.schema.columns) {
    cols.push_back({{"name", c.name},
                    {"kind", c.kind == ColumnKind::categorical ? "categorical" : "continuous"},
                    {"cardinality", c.cardinality}});
  }
  json sidecar = {{"kind", "multimodal"},
                  {"samples", data.size()},
                  {"classes", data.classes},
                  {"volume",
                   {{"depth", data.volume.depth},
                    {"height", data.volume.height},
                    {"width", data.volume.width},
                    {"patch", data.volume.patch}}},
                  {"schema", cols}};
  write_sidecar(dir, sidecar, sidecar_extra);
  write_array<float>(dir / "volumes.f32", data.volumes);
  write_array<double>(dir / "tables.f64", data.tables.data);
  write_array<std::uint8_t>(dir / "missing.u8", data.missing);
  write_array<int>(dir / "labels.i32", data.labels);
}

MultimodalDataset load_multimodal(const std::filesystem::path& dir) {
  const json sidecar = read_sidecar(dir);
  MultimodalDataset data;
  try {
    if (sidecar.at("kind") != "multimodal") throw CorruptionError(dir.string() + " is not a multimodal dataset");
    const auto n = sidecar.at("samples").get<std::size_t>();
    data.classes = sidecar.at("classes").get<std::size_t>();
    const auto& v = sidecar.at("volume");
    data.volume = {v.at("depth").get<std::size_t>(), v.at("height").get<std::size_t>(), v.at("width").get<std::size_t>(),
                   v.at("patch").get<std::size_t>()};
    for (const auto& c : sidecar.at("schema")) {
      TabularColumn col;
      col.name = c.at("name").get<std::string>();
      const auto kind = c.at("kind").get<std::string>();
      if (kind != "categorical" && kind != "continuous") throw CorruptionError("schema: unknown column kind " + kind);
      col.kind = kind == "categorical" ? ColumnKind::categorical : ColumnKind::continuous;
      col.cardinality = c.at("cardinality").get<int>();
      data.schema.columns.push_back(col);
    }
    data.volume.validate();
    const std::size_t cols = data.schema.size();
    data.volumes = read_array<float>(dir / "volumes.f32", n * data.volume.voxels());
    data.tables = Matrix(n, cols, read_array<double>(dir / "tables.f64", n * cols));
    data.missing = read_array<std::uint8_t>(dir / "missing.u8", n * cols);
    data.labels = read_array<int>(dir / "labels.i32", n);
  } catch (const json::exception& e) {
    throw CorruptionError("dataset.json: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw CorruptionError(e.what());
  }
  check_labels(data.labels, data.classes);
  return data;
}

void save_tabular(const TabularDataset& data, const TabularDatasetSpec& spec, const std::filesystem::path& dir,
                  const std::string& sidecar_extra) {
  std::filesystem::create_directories(dir);
  json sidecar = {{"kind", "tabular"},
                  {"name", spec.name},
                  {"samples", data.features.rows},
                  {"features", data.features.cols},
                  {"classes", data.classes},
                  {"context", spec.context},
                  {"balanced", spec.balanced},
                  {"separation", spec.separation}};
  write_sidecar(dir, sidecar, sidecar_extra);
  write_array<double>(dir / "features.f64", data.features.data);
  write_array<int>(dir / "labels.i32", data.labels);
}

TabularDataset load_tabular(const std::filesystem::path& dir, TabularDatasetSpec* spec) {
  const json sidecar = read_sidecar(dir);
  TabularDataset data;
  try {
    if (sidecar.at("kind") != "tabular") throw CorruptionError(dir.string() + " is not a tabular dataset");
    const auto n = sidecar.at("samples").get<std::size_t>();
    const auto f = sidecar.at("features").get<std::size_t>();
    data.classes = sidecar.at("classes").get<std::size_t>();
    data.features = Matrix(n, f, read_array<double>(dir / "features.f64", n * f));
    data.labels = read_array<int>(dir / "labels.i32", n);
    if (spec) {
      spec->name = sidecar.at("name").get<std::string>();
      spec->samples = n;
      spec->features = f;
      spec->classes = data.classes;
      spec->context = sidecar.at("context").get<std::size_t>();
      spec->balanced = sidecar.at("balanced").get<bool>();
      spec->separation = sidecar.at("separation").get<double>();
    }
  } catch (const json::exception& e) {
    throw CorruptionError("dataset.json: " + std::string(e.what()));
  }
  check_labels(data.labels, data.classes);
  return data;
}

std::string dataset_kind(const std::filesystem::path& dir) {
  const json sidecar = read_sidecar(dir);
  if (!sidecar.contains("kind") || !sidecar["kind"].is_string()) throw CorruptionError("dataset.json: missing kind");
  return sidecar["kind"].get<std::string>();
}

}  // namespace pdx
