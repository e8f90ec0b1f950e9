#include "pdx/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "pdx/errors.hpp"

namespace pdx {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using StrideMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStrideMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

[[noreturn]] void dim_error(const char* op, const std::string& what) {
  throw DimensionError(std::string(op) + ": " + what);
}

std::size_t rows_of(const Shape& s) {
  if (s.size() <= 1) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

std::size_t cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

bool same_tape(Var a, Var b) { return &a.tape() == &b.tape(); }

void require_same_tape(const char* op, Var a, Var b) {
  if (!a.valid() || !b.valid()) throw ContractError(std::string(op) + ": invalid operand");
  if (!same_tape(a, b)) throw ContractError(std::string(op) + ": operands live on different tapes");
}

void axpy(std::vector<double>& dst, std::span<const double> src, double s = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

constexpr double kSqrt1_2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void Parameter::zero_grad() { grad.assign(value.size(), 0.0); }

// --- ParamStore -------------------------------------------------------------

Parameter& ParamStore::add(const std::string& name, Shape shape) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value.assign(numel(shape), 0.0);
  p->grad.assign(p->value.size(), 0.0);
  p->shape = std::move(shape);
  index_.emplace(name, params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParamStore::get(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
  return *params_[it->second];
}

const Parameter& ParamStore::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
  return *params_[it->second];
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void ParamStore::set_frozen(bool frozen) {
  for (auto& p : params_) p->frozen = frozen;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.size() != size()) throw ContractError("copy_values_from: parameter count differs");
  for (auto& p : params_) {
    const Parameter& src = other.get(p->name);
    if (src.shape != p->shape) throw DimensionError("copy_values_from: shape differs for " + p->name);
    p->value = src.value;
  }
}

bool ParamStore::bitwise_equal(const ParamStore& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Parameter& a = *params_[i];
    const Parameter& b = *other.params_[i];
    if (a.name != b.name || a.shape != b.shape) return false;
    if (!std::equal(a.value.begin(), a.value.end(), b.value.begin(), b.value.end(),
                    [](double x, double y) { return std::memcmp(&x, &y, sizeof(double)) == 0; })) {
      return false;
    }
  }
  return true;
}

// --- Var ----------------------------------------------------------------------

const Shape& Var::shape() const { return tape_->node(id_).shape; }
std::span<const double> Var::values() const { return tape_->node(id_).value; }
std::size_t Var::size() const { return tape_->node(id_).value.size(); }
std::size_t Var::rows() const { return rows_of(shape()); }
std::size_t Var::cols() const { return cols_of(shape()); }

double Var::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return values()[0];
}

double Var::at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }

// --- Tape ---------------------------------------------------------------------

Var Tape::emit(const char* op, Shape shape, std::vector<double> value, std::vector<int> inputs,
               BackwardFn backward, std::vector<double> saved) {
  if (numel(shape) != value.size()) {
    throw DimensionError(std::string(op) + ": value count does not match shape " + shape_str(shape));
  }
  for (double v : value) {
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "op '" << op << "' produced a non-finite value at tape step " << nodes_.size();
      throw NumericError(os.str());
    }
  }
  Node n;
  n.op = op;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  for (int i : n.inputs) n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(i)].needs_grad;
  if (n.needs_grad) n.backward = std::move(backward);
  n.saved = std::move(saved);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Shape shape, std::vector<double> values) {
  return emit("constant", std::move(shape), std::move(values), {}, nullptr);
}

Var Tape::input(Shape shape, std::vector<double> values, bool requires_grad) {
  Var v = emit("input", std::move(shape), std::move(values), {}, nullptr);
  node(v.id()).needs_grad = requires_grad;
  return v;
}

Var Tape::param(Parameter& p) {
  Var v = emit("param", p.shape, p.value, {}, nullptr);
  if (!p.frozen) {
    Node& n = node(v.id());
    n.needs_grad = true;
    n.param = &p;
  }
  return v;
}

std::vector<double>& Tape::grad_buffer(int id) {
  Node& n = node(id);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw ContractError("backward: root belongs to another tape");
  if (root.size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " + shape_str(root.shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(root.id())[0] = 1.0;
  for (int id = root.id(); id >= 0; --id) {
    Node& n = node(id);
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      Parameter& p = *n.param;
      if (p.grad.size() != p.value.size()) p.zero_grad();
      axpy(p.grad, n.grad);
    }
  }
}

std::vector<double> Tape::grad(Var v) const {
  const Node& n = node(v.id());
  if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
  return n.grad;
}

// --- ops ------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape("matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    dim_error("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() = CMapMat(a.values().data(), m, k) * CMapMat(b.values().data(), k, n);
  const int ia = a.id(), ib = b.id();
  return a.tape().emit("matmul", {m, n}, std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, int self) {
    CMapMat g(t.node(self).grad.data(), m, n);
    if (t.needs_grad(ia)) {
      MapMat ga(t.grad_buffer(ia).data(), m, k);
      ga.noalias() += g * CMapMat(t.node(ib).value.data(), k, n).transpose();
    }
    if (t.needs_grad(ib)) {
      MapMat gb(t.grad_buffer(ib).data(), k, n);
      gb.noalias() += CMapMat(t.node(ia).value.data(), m, k).transpose() * g;
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape("add", a, b);
  const int ia = a.id(), ib = b.id();
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.values().begin(), a.values().end());
    axpy(out, b.values());
    return a.tape().emit("add", a.shape(), std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
      const auto& g = t.node(self).grad;
      if (t.needs_grad(ia)) axpy(t.grad_buffer(ia), g);
      if (t.needs_grad(ib)) axpy(t.grad_buffer(ib), g);
    });
  }
  const std::size_t m = a.rows(), n = a.cols();
  if (b.size() != n || b.rows() != 1) {
    dim_error("add", shape_str(a.shape()) + " + " + shape_str(b.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  return a.tape().emit("add", a.shape(), std::move(out), {ia, ib}, [ia, ib, m, n](Tape& t, int self) {
    const auto& g = t.node(self).grad;
    if (t.needs_grad(ia)) axpy(t.grad_buffer(ia), g);
    if (t.needs_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape("sub", a, b);
  if (a.shape() != b.shape()) dim_error("sub", shape_str(a.shape()) + " - " + shape_str(b.shape()));
  std::vector<double> out(a.values().begin(), a.values().end());
  axpy(out, b.values(), -1.0);
  const int ia = a.id(), ib = b.id();
  return a.tape().emit("sub", a.shape(), std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const auto& g = t.node(self).grad;
    if (t.needs_grad(ia)) axpy(t.grad_buffer(ia), g);
    if (t.needs_grad(ib)) axpy(t.grad_buffer(ib), g, -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same_tape("mul", a, b);
  if (a.shape() != b.shape()) dim_error("mul", shape_str(a.shape()) + " * " + shape_str(b.shape()));
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const int ia = a.id(), ib = b.id();
  return a.tape().emit("mul", a.shape(), std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const auto& g = t.node(self).grad;
    if (t.needs_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      const auto& bv = t.node(ib).value;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      const auto& av = t.node(ia).value;
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= s;
  const int ia = a.id();
  return a.tape().emit("scale", a.shape(), std::move(out), {ia}, [ia, s](Tape& t, int self) {
    axpy(t.grad_buffer(ia), t.node(self).grad, s);
  });
}

Var sum(Var a) {
  const auto v = a.values();
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  const int ia = a.id();
  return a.tape().emit("sum", {}, {total}, {ia}, [ia](Tape& t, int self) {
    const double g = t.node(self).grad[0];
    for (double& x : t.grad_buffer(ia)) x += g;
  });
}

Var mean(Var a) {
  if (a.size() == 0) dim_error("mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var mean_rows(Var a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0) dim_error("mean_rows", "no rows");
  std::vector<double> out(n, 0.0);
  const auto v = a.values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += v[r * n + c];
  for (double& x : out) x /= static_cast<double>(m);
  const int ia = a.id();
  return a.tape().emit("mean_rows", {1, n}, std::move(out), {ia}, [ia, m, n](Tape& t, int self) {
    const auto& g = t.node(self).grad;
    auto& ga = t.grad_buffer(ia);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[c] * inv;
  });
}

namespace {

void softmax_rows(const double* in, double* out, std::size_t m, std::size_t n) {
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = in + r * n;
    double* y = out + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      y[c] = std::exp(x[c] - mx);
      z += y[c];
    }
    for (std::size_t c = 0; c < n; ++c) y[c] /= z;
  }
}

// dx = y * (dy - <dy, y>) per row.
void softmax_rows_backward(const double* y, const double* dy, double* dx, std::size_t m, std::size_t n) {
  for (std::size_t r = 0; r < m; ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < n; ++c) dot += dy[r * n + c] * y[r * n + c];
    for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += y[r * n + c] * (dy[r * n + c] - dot);
  }
}

}  // namespace

Var softmax(Var a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  softmax_rows(a.values().data(), out.data(), m, n);
  const int ia = a.id();
  return a.tape().emit("softmax", a.shape(), std::move(out), {ia}, [ia, m, n](Tape& t, int self) {
    const auto& node = t.node(self);
    softmax_rows_backward(node.value.data(), node.grad.data(), t.grad_buffer(ia).data(), m, n);
  });
}

Var layer_norm(Var x, Var gain, Var shift, double eps) {
  require_same_tape("layer_norm", x, gain);
  require_same_tape("layer_norm", x, shift);
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n || shift.size() != n) {
    dim_error("layer_norm", "gain/shift must have " + std::to_string(n) + " entries");
  }
  const auto xv = x.values(), gv = gain.values(), bv = shift.values();
  std::vector<double> out(m * n);
  // saved: normalized values (m*n) followed by per-row inverse std (m).
  std::vector<double> saved(m * n + m);
  for (std::size_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xv[r * n + c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xv[r * n + c] - mu) * (xv[r * n + c] - mu);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    saved[m * n + r] = inv;
    for (std::size_t c = 0; c < n; ++c) {
      const double xh = (xv[r * n + c] - mu) * inv;
      saved[r * n + c] = xh;
      out[r * n + c] = xh * gv[c] + bv[c];
    }
  }
  const int ix = x.id(), ig = gain.id(), ib = shift.id();
  return x.tape().emit(
      "layer_norm", x.shape(), std::move(out), {ix, ig, ib},
      [ix, ig, ib, m, n](Tape& t, int self) {
        const auto& node = t.node(self);
        const auto& g = node.grad;
        const auto& xh = node.saved;
        const auto& gv = t.node(ig).value;
        if (t.needs_grad(ig)) {
          auto& gg = t.grad_buffer(ig);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gg[c] += g[r * n + c] * xh[r * n + c];
        }
        if (t.needs_grad(ib)) {
          auto& gb = t.grad_buffer(ib);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
        }
        if (t.needs_grad(ix)) {
          auto& gx = t.grad_buffer(ix);
          const double nn = static_cast<double>(n);
          for (std::size_t r = 0; r < m; ++r) {
            const double inv = xh[m * n + r];
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              const double dxh = g[r * n + c] * gv[c];
              s1 += dxh;
              s2 += dxh * xh[r * n + c];
            }
            for (std::size_t c = 0; c < n; ++c) {
              const double dxh = g[r * n + c] * gv[c];
              gx[r * n + c] += inv * (dxh - s1 / nn - xh[r * n + c] * s2 / nn);
            }
          }
        }
      },
      std::move(saved));
}

Var gelu(Var a) {
  const auto v = a.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = 0.5 * v[i] * (1.0 + std::erf(v[i] * kSqrt1_2));
  const int ia = a.id();
  return a.tape().emit("gelu", a.shape(), std::move(out), {ia}, [ia](Tape& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& x = t.node(ia).value;
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * kSqrt1_2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
      ga[i] += g[i] * (cdf + x[i] * pdf);
    }
  });
}

Var relu(Var a) {
  const auto v = a.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  const int ia = a.id();
  return a.tape().emit("relu", a.shape(), std::move(out), {ia}, [ia](Tape& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& x = t.node(ia).value;
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  });
}

Var tanh_act(Var a) {
  const auto v = a.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::tanh(v[i]);
  const int ia = a.id();
  return a.tape().emit("tanh", a.shape(), std::move(out), {ia}, [ia](Tape& t, int self) {
    const auto& node = t.node(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i] * (1.0 - node.value[i] * node.value[i]);
  });
}

Var embedding(Var table, std::span<const int> indices) {
  const std::size_t vocab = table.rows(), d = table.cols();
  std::vector<double> out(indices.size() * d);
  const auto tv = table.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= vocab) {
      throw ContractError("embedding: index " + std::to_string(indices[i]) + " outside table of " +
                          std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(indices[i]) * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<int> idx(indices.begin(), indices.end());
  const int it = table.id();
  return table.tape().emit("embedding", {indices.size(), d}, std::move(out), {it},
                           [it, idx = std::move(idx), d](Tape& t, int self) {
                             const auto& g = t.node(self).grad;
                             auto& gt = t.grad_buffer(it);
                             for (std::size_t i = 0; i < idx.size(); ++i)
                               for (std::size_t c = 0; c < d; ++c)
                                 gt[static_cast<std::size_t>(idx[i]) * d + c] += g[i * d + c];
                           });
}

Var attention(Var q, Var k, Var v, std::span<const double> mask, std::size_t n_heads) {
  require_same_tape("attention", q, k);
  require_same_tape("attention", q, v);
  const std::size_t nq = q.rows(), nk = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != nk) {
    dim_error("attention", "q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                               shape_str(v.shape()));
  }
  if (n_heads == 0 || d % n_heads != 0) dim_error("attention", "model width not divisible by heads");
  if (!mask.empty() && mask.size() != nq * nk) {
    dim_error("attention", "mask has " + std::to_string(mask.size()) + " entries, expected " +
                               std::to_string(nq) + "x" + std::to_string(nk));
  }
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> probs(n_heads * nq * nk);
  std::vector<double> out(nq * d);
  const double* qd = q.values().data();
  const double* kd = k.values().data();
  const double* vd = v.values().data();
  for (std::size_t h = 0; h < n_heads; ++h) {
    MapMat p(probs.data() + h * nq * nk, nq, nk);
    p.noalias() = inv_sqrt * (CStrideMap(qd + h * dh, nq, dh, Eigen::OuterStride<>(d)) *
                              CStrideMap(kd + h * dh, nk, dh, Eigen::OuterStride<>(d)).transpose());
    if (!mask.empty()) p += CMapMat(mask.data(), nq, nk);
    softmax_rows(p.data(), p.data(), nq, nk);
    StrideMap(out.data() + h * dh, nq, dh, Eigen::OuterStride<>(d)).noalias() =
        p * CStrideMap(vd + h * dh, nk, dh, Eigen::OuterStride<>(d));
  }
  const int iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape().emit(
      "attention", {nq, d}, std::move(out), {iq, ik, iv},
      [iq, ik, iv, nq, nk, d, dh, n_heads, inv_sqrt](Tape& t, int self) {
        const auto& node = t.node(self);
        const double* g = node.grad.data();
        const double* qd = t.node(iq).value.data();
        const double* kd = t.node(ik).value.data();
        const double* vd = t.node(iv).value.data();
        double* gq = t.needs_grad(iq) ? t.grad_buffer(iq).data() : nullptr;
        double* gk = t.needs_grad(ik) ? t.grad_buffer(ik).data() : nullptr;
        double* gv = t.needs_grad(iv) ? t.grad_buffer(iv).data() : nullptr;
        RowMat dp(nq, nk), ds(nq, nk);
        for (std::size_t h = 0; h < n_heads; ++h) {
          CMapMat p(node.saved.data() + h * nq * nk, nq, nk);
          CStrideMap go(g + h * dh, nq, dh, Eigen::OuterStride<>(d));
          CStrideMap vh(vd + h * dh, nk, dh, Eigen::OuterStride<>(d));
          if (gv) StrideMap(gv + h * dh, nk, dh, Eigen::OuterStride<>(d)).noalias() += p.transpose() * go;
          if (!gq && !gk) continue;
          dp.noalias() = go * vh.transpose();
          ds.setZero();
          softmax_rows_backward(p.data(), dp.data(), ds.data(), nq, nk);
          ds *= inv_sqrt;
          if (gq) {
            StrideMap(gq + h * dh, nq, dh, Eigen::OuterStride<>(d)).noalias() +=
                ds * CStrideMap(kd + h * dh, nk, dh, Eigen::OuterStride<>(d));
          }
          if (gk) {
            StrideMap(gk + h * dh, nk, dh, Eigen::OuterStride<>(d)).noalias() +=
                ds.transpose() * CStrideMap(qd + h * dh, nq, dh, Eigen::OuterStride<>(d));
          }
        }
      },
      std::move(probs));
}

std::span<const double> attention_probs(Var attention_out) {
  const auto& node = attention_out.tape().node(attention_out.id());
  if (std::string_view(node.op) != "attention") throw ContractError("attention_probs: not an attention node");
  return node.saved;
}

Var l1_distance(Var a, Var b) {
  require_same_tape("l1_distance", a, b);
  if (a.shape() != b.shape()) dim_error("l1_distance", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t m = a.rows();
  const auto av = a.values(), bv = b.values();
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) total += std::abs(av[i] - bv[i]);
  const double inv_m = 1.0 / static_cast<double>(m);
  const int ia = a.id(), ib = b.id();
  return a.tape().emit("l1_distance", {}, {total * inv_m}, {ia, ib}, [ia, ib, inv_m](Tape& t, int self) {
    const double g = t.node(self).grad[0] * inv_m;
    const auto& av = t.node(ia).value;
    const auto& bv = t.node(ib).value;
    const bool need_a = t.needs_grad(ia), need_b = t.needs_grad(ib);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double diff = av[i] - bv[i];
      const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      if (need_a) t.grad_buffer(ia)[i] += g * s;
      if (need_b) t.grad_buffer(ib)[i] -= g * s;
    }
  });
}

Var mse(Var a, Var b) {
  require_same_tape("mse", a, b);
  if (a.shape() != b.shape()) dim_error("mse", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.size() == 0) dim_error("mse", "empty tensor");
  const auto av = a.values(), bv = b.values();
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) total += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double inv_n = 1.0 / static_cast<double>(av.size());
  const int ia = a.id(), ib = b.id();
  return a.tape().emit("mse", {}, {total * inv_n}, {ia, ib}, [ia, ib, inv_n](Tape& t, int self) {
    const double g = 2.0 * t.node(self).grad[0] * inv_n;
    const auto& av = t.node(ia).value;
    const auto& bv = t.node(ib).value;
    if (t.needs_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g * (av[i] - bv[i]);
    }
    if (t.needs_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= g * (av[i] - bv[i]);
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m) {
    dim_error("cross_entropy", std::to_string(targets.size()) + " targets for " + std::to_string(m) + " rows");
  }
  if (m == 0) dim_error("cross_entropy", "no rows");
  std::vector<double> probs(m * n);
  softmax_rows(logits.values().data(), probs.data(), m, n);
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= n) {
      throw ContractError("cross_entropy: target " + std::to_string(targets[r]) + " outside [0, " +
                          std::to_string(n) + ")");
    }
    // log-sum-exp form keeps tiny probabilities exact.
    const double* x = logits.values().data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(x[c] - mx);
    total += mx + std::log(z) - x[targets[r]];
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  const int il = logits.id();
  return logits.tape().emit(
      "cross_entropy", {}, {total / static_cast<double>(m)}, {il},
      [il, m, n, tgt = std::move(tgt)](Tape& t, int self) {
        const auto& node = t.node(self);
        const double g = node.grad[0] / static_cast<double>(m);
        auto& gl = t.grad_buffer(il);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) {
            const double onehot = static_cast<int>(c) == tgt[r] ? 1.0 : 0.0;
            gl[r * n + c] += g * (node.saved[r * n + c] - onehot);
          }
      },
      std::move(probs));
}

Var concat_rows(Var a, Var b) {
  require_same_tape("concat_rows", a, b);
  const std::size_t n = a.cols();
  if (b.cols() != n) dim_error("concat_rows", shape_str(a.shape()) + " ++ " + shape_str(b.shape()));
  std::vector<double> out(a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  const std::size_t na = a.size();
  const int ia = a.id(), ib = b.id();
  return a.tape().emit("concat_rows", {a.rows() + b.rows(), n}, std::move(out), {ia, ib},
                       [ia, ib, na](Tape& t, int self) {
                         const auto& g = t.node(self).grad;
                         if (t.needs_grad(ia)) {
                           auto& ga = t.grad_buffer(ia);
                           for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
                         }
                         if (t.needs_grad(ib)) {
                           auto& gb = t.grad_buffer(ib);
                           for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
                         }
                       });
}

Var concat_cols(Var a, Var b) {
  require_same_tape("concat_cols", a, b);
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
  if (b.rows() != m) dim_error("concat_cols", shape_str(a.shape()) + " || " + shape_str(b.shape()));
  std::vector<double> out(m * (na + nb));
  const auto av = a.values(), bv = b.values();
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(r * na), na, out.begin() + static_cast<std::ptrdiff_t>(r * (na + nb)));
    std::copy_n(bv.begin() + static_cast<std::ptrdiff_t>(r * nb), nb,
                out.begin() + static_cast<std::ptrdiff_t>(r * (na + nb) + na));
  }
  const int ia = a.id(), ib = b.id();
  return a.tape().emit("concat_cols", {m, na + nb}, std::move(out), {ia, ib}, [ia, ib, m, na, nb](Tape& t, int self) {
    const auto& g = t.node(self).grad;
    if (t.needs_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < na; ++c) ga[r * na + c] += g[r * (na + nb) + c];
    }
    if (t.needs_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < nb; ++c) gb[r * nb + c] += g[r * (na + nb) + na + c];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const std::size_t m = a.rows(), n = a.cols();
  if (begin >= end || end > n) {
    dim_error("slice_cols", "[" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_str(a.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  const auto av = a.values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = av[r * n + begin + c];
  const int ia = a.id();
  return a.tape().emit("slice_cols", {m, w}, std::move(out), {ia}, [ia, m, n, w, begin](Tape& t, int self) {
    const auto& g = t.node(self).grad;
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < w; ++c) ga[r * n + begin + c] += g[r * w + c];
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(rows.size() * n);
  const auto av = a.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m) dim_error("gather_rows", "row " + std::to_string(rows[i]) + " of " + shape_str(a.shape()));
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(rows[i] * n), n, out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const int ia = a.id();
  return a.tape().emit("gather_rows", {rows.size(), n}, std::move(out), {ia},
                       [ia, n, idx = std::move(idx)](Tape& t, int self) {
                         const auto& g = t.node(self).grad;
                         auto& ga = t.grad_buffer(ia);
                         for (std::size_t i = 0; i < idx.size(); ++i)
                           for (std::size_t c = 0; c < n; ++c) ga[idx[i] * n + c] += g[i * n + c];
                       });
}

Var replace_rows(Var x, std::span<const std::size_t> rows, Var token) {
  require_same_tape("replace_rows", x, token);
  const std::size_t m = x.rows(), n = x.cols();
  if (token.size() != n) dim_error("replace_rows", "token width " + std::to_string(token.size()) + " vs " + std::to_string(n));
  std::vector<char> replaced(m, 0);
  for (std::size_t r : rows) {
    if (r >= m) dim_error("replace_rows", "row " + std::to_string(r) + " of " + shape_str(x.shape()));
    replaced[r] = 1;
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto tv = token.values();
  for (std::size_t r = 0; r < m; ++r)
    if (replaced[r]) std::copy(tv.begin(), tv.end(), out.begin() + static_cast<std::ptrdiff_t>(r * n));
  const int ix = x.id(), it = token.id();
  return x.tape().emit("replace_rows", x.shape(), std::move(out), {ix, it},
                       [ix, it, m, n, replaced = std::move(replaced)](Tape& t, int self) {
                         const auto& g = t.node(self).grad;
                         const bool need_x = t.needs_grad(ix), need_t = t.needs_grad(it);
                         for (std::size_t r = 0; r < m; ++r) {
                           if (replaced[r]) {
                             if (need_t)
                               for (std::size_t c = 0; c < n; ++c) t.grad_buffer(it)[c] += g[r * n + c];
                           } else if (need_x) {
                             auto& gx = t.grad_buffer(ix);
                             for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[r * n + c];
                           }
                         }
                       });
}

Var pad_cols(Var a, std::size_t width) {
  const std::size_t m = a.rows(), n = a.cols();
  if (width < n) dim_error("pad_cols", "width " + std::to_string(width) + " below " + std::to_string(n) + " columns");
  if (width == n) return a;
  std::vector<double> out(m * width, 0.0);
  const auto av = a.values();
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(r * n), n, out.begin() + static_cast<std::ptrdiff_t>(r * width));
  const int ia = a.id();
  return a.tape().emit("pad_cols", {m, width}, std::move(out), {ia}, [ia, m, n, width](Tape& t, int self) {
    const auto& g = t.node(self).grad;
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[r * width + c];
  });
}

Var reshape(Var a, Shape shape) {
  if (numel(shape) != a.size()) dim_error("reshape", shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  const int ia = a.id();
  return a.tape().emit("reshape", std::move(shape), std::move(out), {ia},
                       [ia](Tape& t, int self) { axpy(t.grad_buffer(ia), t.node(self).grad); });
}

}  // namespace pdx
