#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>

#include "pdx/tensor.hpp"

namespace pdx {

/// Builds a scalar on a fresh tape from the current parameter values.
using ScalarGraph = std::function<Var(Tape&)>;

/// Compares backward() gradients with central differences and returns
/// max |analytic - numeric| / max(1, |analytic|) over the probed coordinates.
/// At most `max_coords` coordinates per parameter are probed (chosen by
/// `seed`); eps must lie in [1e-7, 1e-3].
double finite_difference_check(const ScalarGraph& graph, std::span<Parameter* const> params, double eps = 1e-5,
                               std::size_t max_coords = std::numeric_limits<std::size_t>::max(),
                               std::uint64_t seed = 0);

}  // namespace pdx
