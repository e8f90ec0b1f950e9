#include "pdx/nn.hpp"

#include <cmath>

namespace pdx::nn {

Linear Linear::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, SeededRng& rng,
                      double init_std) {
  Linear l;
  l.weight = &store.add(name + ".weight", {in, out});
  l.bias = &store.add(name + ".bias", {out});
  const double std = init_std > 0.0 ? init_std : 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : l.weight->value) w = rng.normal(0.0, std);
  return l;
}

Var Linear::operator()(Tape& tape, Var x) const {
  return add(matmul(x, tape.param(*weight)), tape.param(*bias));
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, std::size_t width) {
  LayerNorm n;
  n.gain = &store.add(name + ".gain", {width});
  n.shift = &store.add(name + ".shift", {width});
  for (double& g : n.gain->value) g = 1.0;
  return n;
}

Var LayerNorm::operator()(Tape& tape, Var x) const {
  return layer_norm(x, tape.param(*gain), tape.param(*shift));
}

TransformerBlock TransformerBlock::create(ParamStore& store, const std::string& name, std::size_t width,
                                          std::size_t heads, std::size_t ff_width, SeededRng& rng) {
  TransformerBlock b;
  b.heads = heads;
  b.norm1 = LayerNorm::create(store, name + ".norm1", width);
  b.norm2 = LayerNorm::create(store, name + ".norm2", width);
  b.query = Linear::create(store, name + ".query", width, width, rng);
  b.key = Linear::create(store, name + ".key", width, width, rng);
  b.value = Linear::create(store, name + ".value", width, width, rng);
  b.proj = Linear::create(store, name + ".proj", width, width, rng, 0.5 / std::sqrt(static_cast<double>(width)));
  b.ff_in = Linear::create(store, name + ".ff_in", width, ff_width, rng);
  b.ff_out = Linear::create(store, name + ".ff_out", ff_width, width, rng,
                            0.5 / std::sqrt(static_cast<double>(ff_width)));
  return b;
}

Var TransformerBlock::operator()(Tape& tape, Var x, std::span<const double> mask, Var* attn) const {
  Var h = norm1(tape, x);
  Var a = attention(query(tape, h), key(tape, h), value(tape, h), mask, heads);
  if (attn) *attn = a;
  x = add(x, proj(tape, a));
  Var f = ff_out(tape, gelu(ff_in(tape, norm2(tape, x))));
  return add(x, f);
}

}  // namespace pdx::nn
