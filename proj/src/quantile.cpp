#include "pdx/quantile.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>

namespace pdx {

double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

QuantileFit quantile_fit(const Matrix& support, double clip) {
  if (support.rows == 0) throw ContractError("quantile_fit: empty support");
  if (!(clip > 0.0 && clip < 0.5)) throw ContractError("quantile_fit: clip must lie in (0, 0.5)");
  QuantileFit fit;
  fit.fitted_rows = support.rows;
  fit.clip = clip;
  fit.features.resize(support.cols);
  const double n = static_cast<double>(support.rows);
  std::vector<double> column(support.rows);
  for (std::size_t f = 0; f < support.cols; ++f) {
    for (std::size_t r = 0; r < support.rows; ++r) {
      column[r] = support(r, f);
      if (!std::isfinite(column[r])) throw ContractError("quantile_fit: non-finite support value");
    }
    std::sort(column.begin(), column.end());
    auto& feat = fit.features[f];
    feat.degenerate = column.front() == column.back();
    // Positions i..j-1 (0-based) hold one distinct value; its average rank is
    // the mean of the 1-based ranks i+1..j.
    for (std::size_t i = 0; i < column.size();) {
      std::size_t j = i;
      while (j < column.size() && column[j] == column[i]) ++j;
      const double rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
      feat.knots.push_back(column[i]);
      feat.average_ranks.push_back(rank);
      feat.positions.push_back((rank - 0.5) / n);
      i = j;
    }
  }
  return fit;
}

double QuantileFit::position(std::size_t f, double x) const {
  const Feature& feat = features.at(f);
  const auto& k = feat.knots;
  if (x < k.front()) return 0.0;
  if (x > k.back()) return 1.0;
  const auto it = std::lower_bound(k.begin(), k.end(), x);
  const auto hi = static_cast<std::size_t>(it - k.begin());
  if (*it == x) return feat.positions[hi];
  const std::size_t lo = hi - 1;
  const double t = (x - k[lo]) / (k[hi] - k[lo]);
  return feat.positions[lo] + t * (feat.positions[hi] - feat.positions[lo]);
}

Matrix quantile_transform(const QuantileFit& fit, const Matrix& rows) {
  if (rows.cols != fit.feature_count()) {
    throw ContractError("quantile_transform: " + std::to_string(rows.cols) + " features, fit has " +
                        std::to_string(fit.feature_count()));
  }
  Matrix out(rows.rows, rows.cols);
  for (std::size_t f = 0; f < rows.cols; ++f) {
    if (fit.features[f].degenerate) continue;
    for (std::size_t r = 0; r < rows.rows; ++r) {
      if (!std::isfinite(rows(r, f))) throw ContractError("quantile_transform: non-finite value");
      const double p = std::clamp(fit.position(f, rows(r, f)), fit.clip, 1.0 - fit.clip);
      out(r, f) = normal_quantile(p);
    }
  }
  return out;
}

}  // namespace pdx
