#pragma once

#include <vector>

#include "pdx/matrix.hpp"

namespace pdx {

/// Standard normal quantile function.
double normal_quantile(double p);

/// Per-feature empirical CDF fitted by sorting and tie-averaged ranking.
/// A fitted value with average (1-based) rank r out of n sits at CDF
/// position (r - 0.5) / n; unseen values interpolate linearly between the
/// neighbouring distinct values and fall to 0 / 1 outside the fitted range.
struct QuantileFit {
  struct Feature {
    std::vector<double> knots;          // distinct fitted values, ascending
    std::vector<double> average_ranks;  // 1-based, one per knot
    std::vector<double> positions;      // (rank - 0.5) / n, one per knot
    bool degenerate = false;            // constant over the fitted rows
  };

  std::vector<Feature> features;
  std::size_t fitted_rows = 0;
  double clip = 1e-4;

  std::size_t feature_count() const { return features.size(); }
  /// CDF position of `x` for feature `f`, before clipping.
  double position(std::size_t f, double x) const;
};

/// Fits the per-feature empirical CDF. Requires >= 1 row of finite values.
QuantileFit quantile_fit(const Matrix& support, double clip = 1e-4);

/// Maps every value to normal_quantile(clamp(position, clip, 1 - clip)).
/// Degenerate features map to 0. Plain data in, plain data out: this
/// transform has no gradient.
Matrix quantile_transform(const QuantileFit& fit, const Matrix& rows);

}  // namespace pdx
