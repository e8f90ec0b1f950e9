#include "pdx/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pdx/errors.hpp"
#include "pdx/rng.hpp"

namespace pdx {

namespace {

double evaluate(const ScalarGraph& graph) {
  Tape tape;
  const double v = graph(tape).item();
  if (!std::isfinite(v)) throw NumericError("finite_difference_check: non-finite probe value");
  return v;
}

}  // namespace

double finite_difference_check(const ScalarGraph& graph, std::span<Parameter* const> params, double eps,
                               std::size_t max_coords, std::uint64_t seed) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ContractError("finite_difference_check: eps outside [1e-7, 1e-3]");

  std::vector<std::vector<double>> saved_grads;
  for (Parameter* p : params) {
    saved_grads.push_back(p->grad);
    p->zero_grad();
  }
  {
    Tape tape;
    Var root = graph(tape);
    if (!std::isfinite(root.item())) throw NumericError("finite_difference_check: non-finite base value");
    tape.backward(root);
  }
  std::vector<std::vector<double>> analytic;
  for (std::size_t i = 0; i < params.size(); ++i) {
    analytic.push_back(params[i]->grad);
    params[i]->grad = std::move(saved_grads[i]);
  }

  SeededRng rng(seed, 0x6772616463686bULL);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    std::vector<std::size_t> coords(p.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > max_coords) {
      rng.shuffle(coords);
      coords.resize(max_coords);
    }
    for (std::size_t c : coords) {
      const double orig = p.value[c];
      p.value[c] = orig + eps;
      const double up = evaluate(graph);
      p.value[c] = orig - eps;
      const double down = evaluate(graph);
      p.value[c] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i][c];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

}  // namespace pdx
