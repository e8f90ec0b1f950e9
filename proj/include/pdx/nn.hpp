#pragma once

#include <span>
#include <string>

#include "pdx/rng.hpp"
#include "pdx/tensor.hpp"

namespace pdx::nn {

/// y = x W + b, W stored as [in, out].
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  /// Weights ~ N(0, init_std^2); init_std <= 0 selects 1/sqrt(in). Bias zero.
  static Linear create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, SeededRng& rng,
                       double init_std = -1.0);
  Var operator()(Tape& tape, Var x) const;
  std::size_t in() const { return weight->shape[0]; }
  std::size_t out() const { return weight->shape[1]; }
};

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* shift = nullptr;

  static LayerNorm create(ParamStore& store, const std::string& name, std::size_t width);
  Var operator()(Tape& tape, Var x) const;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then + FFN(LN(x)) with GELU.
struct TransformerBlock {
  LayerNorm norm1, norm2;
  Linear query, key, value, proj;
  Linear ff_in, ff_out;
  std::size_t heads = 1;

  static TransformerBlock create(ParamStore& store, const std::string& name, std::size_t width, std::size_t heads,
                                 std::size_t ff_width, SeededRng& rng);
  /// `mask` is additive over (tokens x tokens); empty means full attention.
  /// When `attn` is non-null it receives the attention node.
  Var operator()(Tape& tape, Var x, std::span<const double> mask = {}, Var* attn = nullptr) const;
};

}  // namespace pdx::nn
