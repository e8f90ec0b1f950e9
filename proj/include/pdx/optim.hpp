#pragma once

#include <cstdint>
#include <vector>

#include "pdx/tensor.hpp"

namespace pdx {

/// Adam with bias correction. Defaults are the usual (0.9, 0.999, 1e-8).
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(std::vector<Parameter*> params, Options options);

  /// Applies one update from each parameter's accumulated grad.
  void step();
  void zero_grad();

  std::uint64_t steps() const { return step_; }
  const Options& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

 private:
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  Options options_;
  std::uint64_t step_ = 0;
};

}  // namespace pdx
