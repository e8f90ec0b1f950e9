#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pdx {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Trainable tensor that outlives any single tape. Gradients from every tape
/// that reads the parameter accumulate into `grad` until zero_grad().
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  /// Frozen parameters enter tapes as constants: gradients flow through them
  /// to other leaves but are never accumulated here.
  bool frozen = false;

  std::size_t size() const { return value.size(); }
  void zero_grad();
};

/// Named, ordered collection of parameters with stable addresses.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  /// Registers a zero-initialized parameter. Names must be unique.
  Parameter& add(const std::string& name, Shape shape);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t total_values() const;
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;

  void zero_grad();
  void set_frozen(bool frozen);
  /// Copies values from a store with identical names and shapes.
  void copy_values_from(const ParamStore& other);
  /// Bitwise equality of names, shapes and values.
  bool bitwise_equal(const ParamStore& other) const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }

  const Shape& shape() const;
  std::span<const double> values() const;
  std::size_t size() const;
  /// Matrix view: rank-1 tensors are treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;
  double item() const;
  double at(std::size_t r, std::size_t c) const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
/// so the node vector is always a valid topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  struct Node {
    const char* op = "";
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<int> inputs;
    bool needs_grad = false;
    BackwardFn backward;
    std::vector<double> saved;
    Parameter* param = nullptr;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Shape shape, std::vector<double> values);
  Var scalar(double v) { return constant({}, {v}); }
  /// Differentiable leaf not bound to a parameter; read its gradient with grad().
  Var input(Shape shape, std::vector<double> values, bool requires_grad = true);
  Var param(Parameter& p);

  /// Propagates d(root)/d(node) to every node, then adds parameter-leaf
  /// gradients into Parameter::grad. Root must hold a single value.
  void backward(Var root);

  /// Gradient of the last backward() w.r.t. a node; zeros when unreachable.
  std::vector<double> grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  /// Appends an op result. Throws NumericError if any value is non-finite.
  Var emit(const char* op, Shape shape, std::vector<double> value, std::vector<int> inputs,
           BackwardFn backward, std::vector<double> saved = {});

  /// Gradient buffer of a node, allocated on first use.
  std::vector<double>& grad_buffer(int id);
  bool needs_grad(int id) const { return node(id).needs_grad; }

 private:
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Forward ops. Every op checks operand shapes (DimensionError naming the op)
// and records a backward rule on the operands' tape.

Var matmul(Var a, Var b);
/// Elementwise sum; `b` may also be a row vector broadcast over rows of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var sum(Var a);
Var mean(Var a);
/// Mean over rows: [m, n] -> [1, n].
Var mean_rows(Var a);
/// Softmax over the last axis.
Var softmax(Var a);
/// Layer normalization over the last axis with learned gain and shift.
Var layer_norm(Var x, Var gain, Var shift, double eps = 1e-5);
/// GELU, erf form.
Var gelu(Var a);
Var relu(Var a);
Var tanh_act(Var a);
/// Rows of `table` selected by `indices`.
Var embedding(Var table, std::span<const int> indices);
/// Multi-head scaled dot-product attention. q: [nq, d]; k, v: [nk, d];
/// `mask` is an additive nq x nk matrix (empty for none, -inf blocks a key).
Var attention(Var q, Var k, Var v, std::span<const double> mask, std::size_t n_heads);
/// Attention probabilities saved by an attention node, [heads][nq][nk] flattened.
std::span<const double> attention_probs(Var attention_out);
/// Mean over rows of the L1 norm of (a - b).
Var l1_distance(Var a, Var b);
/// Mean squared error over all elements.
Var mse(Var a, Var b);
/// Mean cross-entropy of row-wise softmax(logits) against integer targets.
Var cross_entropy(Var logits, std::span<const int> targets);
Var concat_rows(Var a, Var b);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var a, std::span<const std::size_t> rows);
/// Copy of `x` with the listed rows replaced by the single row `token`.
Var replace_rows(Var x, std::span<const std::size_t> rows, Var token);
/// Right-pads columns with zeros up to `width`.
Var pad_cols(Var a, std::size_t width);
Var reshape(Var a, Shape shape);

}  // namespace pdx
