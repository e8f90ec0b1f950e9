#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "pdx/errors.hpp"
#include "pdx/gradcheck.hpp"
#include "pdx/nn.hpp"
#include "pdx/optim.hpp"
#include "pdx/rng.hpp"
#include "pdx/tensor.hpp"

using namespace pdx;

namespace {

void randomize(Parameter& p, SeededRng& rng, double scale = 1.0) {
  for (double& v : p.value) v = rng.normal(0.0, scale);
}

// Contracts an op output against fixed random weights so every output
// coordinate contributes to the scalar.
Var contract(Tape& tape, Var out, std::uint64_t seed) {
  SeededRng rng(seed, 77);
  std::vector<double> w(out.size());
  for (double& v : w) v = rng.normal();
  return sum(mul(out, tape.constant(out.shape(), w)));
}

constexpr int kPoints = 10;
constexpr double kTol = 1e-4;

// Runs the finite-difference check at kPoints random parameter draws.
template <typename Build>
void check_op(const char* name, std::vector<Parameter*> params, Build build, double scale = 1.0) {
  for (int point = 0; point < kPoints; ++point) {
    SeededRng rng(1234, static_cast<std::uint64_t>(point));
    for (Parameter* p : params) randomize(*p, rng, scale);
    const double err = finite_difference_check(
        [&](Tape& tape) { return contract(tape, build(tape), static_cast<std::uint64_t>(point)); }, params);
    EXPECT_LT(err, kTol) << name << " at point " << point;
  }
}

Parameter make_param(const std::string& name, Shape shape) {
  Parameter p;
  p.name = name;
  p.shape = shape;
  p.value.assign(numel(shape), 0.0);
  p.grad.assign(numel(shape), 0.0);
  return p;
}

}  // namespace

TEST(TensorOps, MatmulIdentity) {
  Tape tape;
  Var eye = tape.constant({2, 2}, {1, 0, 0, 1});
  Var m = tape.constant({2, 2}, {2, 3, 4, 5});
  Var out = matmul(eye, m);
  EXPECT_EQ(std::vector<double>(out.values().begin(), out.values().end()), (std::vector<double>{2, 3, 4, 5}));
}

TEST(TensorOps, SoftmaxSymmetric) {
  Tape tape;
  Var s = softmax(tape.constant({1, 2}, {0, 0}));
  EXPECT_DOUBLE_EQ(s.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s.at(0, 1), 0.5);
}

TEST(TensorOps, SoftmaxRowsAreDistributions) {
  SeededRng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    std::vector<double> v(5 * 7);
    for (double& x : v) x = rng.normal(0.0, 10.0);
    Var s = softmax(tape.constant({5, 7}, v));
    for (std::size_t r = 0; r < 5; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(s.at(r, c), 0.0);
        total += s.at(r, c);
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(TensorOps, CrossEntropyOfUniformIsLogC) {
  Tape tape;
  const std::vector<int> targets = {0, 2, 1};
  Var ce = cross_entropy(tape.constant({3, 3}, std::vector<double>(9, 0.7)), targets);
  EXPECT_NEAR(ce.item(), std::log(3.0), 1e-12);
  EXPECT_NEAR(ce.item(), 1.0986, 1e-4);
}

TEST(TensorOps, ShapeMismatchNamesTheOp) {
  Tape tape;
  Var a = tape.constant({2, 3}, std::vector<double>(6, 1.0));
  Var b = tape.constant({2, 3}, std::vector<double>(6, 1.0));
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
  }
  EXPECT_THROW(add(a, tape.constant({3, 2}, std::vector<double>(6, 1.0))), DimensionError);
  EXPECT_THROW(attention(a, a, a, std::vector<double>(3), 1), DimensionError);
}

TEST(TensorOps, NonFiniteOutputRaises) {
  Tape tape;
  Var a = tape.constant({1, 1}, {1e300});
  EXPECT_THROW(mul(a, a), NumericError);
}

TEST(TensorOps, EmbeddingIndexOutOfRange) {
  Tape tape;
  Var table = tape.constant({3, 2}, std::vector<double>(6, 0.0));
  const std::vector<int> idx = {0, 3};
  EXPECT_THROW(embedding(table, idx), ContractError);
}

TEST(Backward, SquareAtThree) {
  Tape tape;
  Var x = tape.input({}, {3.0});
  tape.backward(mul(x, x));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 6.0);
}

TEST(Backward, NonScalarRootRejected) {
  Tape tape;
  Var x = tape.input({2}, {1.0, 2.0});
  EXPECT_THROW(tape.backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, ConstantHasZeroGradient) {
  Parameter p = make_param("p", {2});
  p.value = {1.0, -1.0};
  Tape tape;
  Var unused = tape.param(p);
  (void)unused;
  Var c = tape.constant({}, {4.0});
  tape.backward(mul(c, c));
  EXPECT_EQ(p.grad, (std::vector<double>{0.0, 0.0}));
}

TEST(Backward, SoftmaxCrossEntropyGradientIsPMinusOnehot) {
  Tape tape;
  const std::vector<double> logits = {0.3, -1.2, 2.0, 0.5, 0.1, -0.4};
  Var z = tape.input({2, 3}, logits);
  const std::vector<int> targets = {2, 0};
  tape.backward(cross_entropy(z, targets));
  const auto g = tape.grad(z);
  for (std::size_t r = 0; r < 2; ++r) {
    double mx = -1e9, tot = 0.0;
    for (std::size_t c = 0; c < 3; ++c) mx = std::max(mx, logits[r * 3 + c]);
    for (std::size_t c = 0; c < 3; ++c) tot += std::exp(logits[r * 3 + c] - mx);
    for (std::size_t c = 0; c < 3; ++c) {
      const double p = std::exp(logits[r * 3 + c] - mx) / tot;
      const double expected = (p - (static_cast<int>(c) == targets[r] ? 1.0 : 0.0)) / 2.0;
      EXPECT_NEAR(g[r * 3 + c], expected, 1e-12);
    }
  }
}

TEST(Backward, RepeatedBackwardGivesIdenticalGradients) {
  Parameter w = make_param("w", {3, 3});
  SeededRng rng(5);
  randomize(w, rng);
  Tape tape;
  Var x = tape.constant({2, 3}, {0.1, 0.2, 0.3, -0.4, 0.5, 0.6});
  Var loss = sum(gelu(matmul(x, tape.param(w))));
  tape.backward(loss);
  const auto first = w.grad;
  w.zero_grad();
  tape.backward(loss);
  EXPECT_EQ(first, w.grad);
}

TEST(Backward, FrozenParameterPassesGradientThrough) {
  Parameter w = make_param("w", {2, 2});
  w.value = {1.0, 2.0, 3.0, 4.0};
  w.frozen = true;
  Tape tape;
  Var x = tape.input({1, 2}, {1.0, 1.0});
  tape.backward(sum(matmul(x, tape.param(w))));
  EXPECT_EQ(w.grad, (std::vector<double>{0.0, 0.0, 0.0, 0.0}));
  EXPECT_EQ(tape.grad(x), (std::vector<double>{3.0, 7.0}));
}

// --- finite-difference suite, one test per op ---------------------------------

TEST(GradCheck, LinearMapIsExact) {
  Parameter a = make_param("a", {3, 4});
  Parameter x = make_param("x", {4, 2});
  SeededRng rng(1);
  randomize(a, rng);
  randomize(x, rng);
  std::vector<Parameter*> ps = {&x};
  const double err = finite_difference_check(
      [&](Tape& t) { return contract(t, matmul(t.constant(a.shape, a.value), t.param(x)), 9); }, ps);
  EXPECT_LT(err, 1e-9);
}

TEST(GradCheck, Matmul) {
  Parameter a = make_param("a", {3, 4}), b = make_param("b", {4, 5});
  check_op("matmul", {&a, &b}, [&](Tape& t) { return matmul(t.param(a), t.param(b)); });
}

TEST(GradCheck, AddSubMulScale) {
  Parameter a = make_param("a", {3, 4}), b = make_param("b", {3, 4}), row = make_param("row", {4});
  check_op("add", {&a, &b}, [&](Tape& t) { return add(t.param(a), t.param(b)); });
  check_op("add-broadcast", {&a, &row}, [&](Tape& t) { return add(t.param(a), t.param(row)); });
  check_op("sub", {&a, &b}, [&](Tape& t) { return sub(t.param(a), t.param(b)); });
  check_op("mul", {&a, &b}, [&](Tape& t) { return mul(t.param(a), t.param(b)); });
  check_op("scale", {&a}, [&](Tape& t) { return scale(t.param(a), -1.7); });
}

TEST(GradCheck, Reductions) {
  Parameter a = make_param("a", {4, 3});
  check_op("sum", {&a}, [&](Tape& t) { return sum(t.param(a)); });
  check_op("mean", {&a}, [&](Tape& t) { return mean(t.param(a)); });
  check_op("mean_rows", {&a}, [&](Tape& t) { return mean_rows(t.param(a)); });
}

TEST(GradCheck, Softmax) {
  Parameter a = make_param("a", {3, 5});
  check_op("softmax", {&a}, [&](Tape& t) { return softmax(t.param(a)); }, 2.0);
}

TEST(GradCheck, LayerNorm) {
  Parameter x = make_param("x", {4, 6}), g = make_param("g", {6}), s = make_param("s", {6});
  check_op("layer_norm", {&x, &g, &s}, [&](Tape& t) { return layer_norm(t.param(x), t.param(g), t.param(s)); });
}

TEST(GradCheck, Activations) {
  Parameter a = make_param("a", {5, 4});
  check_op("gelu", {&a}, [&](Tape& t) { return gelu(t.param(a)); });
  check_op("relu", {&a}, [&](Tape& t) { return relu(t.param(a)); });
  check_op("tanh", {&a}, [&](Tape& t) { return tanh_act(t.param(a)); });
}

TEST(GradCheck, Embedding) {
  Parameter table = make_param("table", {5, 3});
  const std::vector<int> idx = {4, 0, 4, 2};
  check_op("embedding", {&table}, [&](Tape& t) { return embedding(t.param(table), idx); });
}

TEST(GradCheck, AttentionWithMask) {
  Parameter q = make_param("q", {3, 8}), k = make_param("k", {5, 8}), v = make_param("v", {5, 8});
  std::vector<double> mask(3 * 5, 0.0);
  mask[0 * 5 + 4] = -std::numeric_limits<double>::infinity();
  mask[2 * 5 + 1] = -std::numeric_limits<double>::infinity();
  check_op("attention", {&q, &k, &v}, [&](Tape& t) { return attention(t.param(q), t.param(k), t.param(v), mask, 2); });
  check_op("attention-nomask", {&q, &k, &v},
           [&](Tape& t) { return attention(t.param(q), t.param(k), t.param(v), {}, 4); });
}

TEST(GradCheck, FullAttentionBlock) {
  ParamStore store;
  SeededRng init(8);
  const auto block = nn::TransformerBlock::create(store, "blk", 8, 2, 16, init);
  Parameter x = make_param("x", {4, 8});
  std::vector<Parameter*> ps = store.all();
  ps.push_back(&x);
  for (int point = 0; point < kPoints; ++point) {
    SeededRng rng(99, static_cast<std::uint64_t>(point));
    for (Parameter* p : ps) randomize(*p, rng, 0.5);
    const double err = finite_difference_check(
        [&](Tape& t) { return contract(t, block(t, t.param(x)), static_cast<std::uint64_t>(point)); }, ps, 1e-5, 40,
        static_cast<std::uint64_t>(point));
    EXPECT_LT(err, kTol) << "point " << point;
  }
}

TEST(GradCheck, Losses) {
  Parameter a = make_param("a", {3, 4}), b = make_param("b", {3, 4});
  check_op("l1_distance", {&a, &b}, [&](Tape& t) { return l1_distance(t.param(a), t.param(b)); });
  check_op("mse", {&a, &b}, [&](Tape& t) { return mse(t.param(a), t.param(b)); });
  const std::vector<int> targets = {1, 3, 0};
  check_op("cross_entropy", {&a}, [&](Tape& t) { return cross_entropy(t.param(a), targets); }, 2.0);
}

TEST(GradCheck, Structural) {
  Parameter a = make_param("a", {3, 4}), b = make_param("b", {2, 4}), c = make_param("c", {3, 2});
  Parameter tok = make_param("tok", {4});
  const std::vector<std::size_t> rows = {2, 0, 2};
  const std::vector<std::size_t> masked = {1};
  check_op("concat_rows", {&a, &b}, [&](Tape& t) { return concat_rows(t.param(a), t.param(b)); });
  check_op("concat_cols", {&a, &c}, [&](Tape& t) { return concat_cols(t.param(a), t.param(c)); });
  check_op("slice_cols", {&a}, [&](Tape& t) { return slice_cols(t.param(a), 1, 3); });
  check_op("gather_rows", {&a}, [&](Tape& t) { return gather_rows(t.param(a), rows); });
  check_op("replace_rows", {&a, &tok}, [&](Tape& t) { return replace_rows(t.param(a), masked, t.param(tok)); });
  check_op("pad_cols", {&a}, [&](Tape& t) { return pad_cols(t.param(a), 7); });
  check_op("reshape", {&a}, [&](Tape& t) { return reshape(t.param(a), {2, 6}); });
}

TEST(GradCheck, EpsilonOutsideRangeRejected) {
  Parameter a = make_param("a", {2});
  std::vector<Parameter*> ps = {&a};
  EXPECT_THROW(finite_difference_check([&](Tape& t) { return sum(t.param(a)); }, ps, 1e-2), ContractError);
  EXPECT_THROW(finite_difference_check([&](Tape& t) { return sum(t.param(a)); }, ps, 1e-9), ContractError);
}

// --- optimizer and rng ----------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Parameter p = make_param("p", {3});
  p.value = {1.0, -2.0, 0.5};
  Adam adam({&p}, {});
  adam.step();
  EXPECT_EQ(p.value, (std::vector<double>{1.0, -2.0, 0.5}));
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p = make_param("p", {});
  p.value = {0.0};
  p.grad = {1.0};
  Adam adam({&p}, {.lr = 1e-3});
  adam.step();
  // m_hat = 1, v_hat = 1, so the update is lr / (1 + eps).
  EXPECT_NEAR(p.value[0], -1e-3 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, StepCounterIncrementsByOne) {
  Parameter p = make_param("p", {2});
  Adam adam({&p}, {});
  for (int i = 1; i <= 5; ++i) {
    p.grad = {0.1 * i, -0.2};
    adam.step();
    EXPECT_EQ(adam.steps(), static_cast<std::uint64_t>(i));
  }
}

TEST(Adam, FrozenParameterRejected) {
  Parameter p = make_param("p", {2});
  p.frozen = true;
  EXPECT_THROW(Adam({&p}, {}), ContractError);
}

TEST(Adam, RunsAreBitIdentical) {
  auto run = [] {
    ParamStore store;
    SeededRng init(42);
    const auto lin = nn::Linear::create(store, "lin", 3, 2, init);
    Adam adam(store.all(), {});
    SeededRng data(43);
    for (int step = 0; step < 20; ++step) {
      Tape tape;
      std::vector<double> x(4 * 3);
      for (double& v : x) v = data.normal();
      store.zero_grad();
      tape.backward(mean(mul(lin(tape, tape.constant({4, 3}, x)), lin(tape, tape.constant({4, 3}, x)))));
      adam.step();
    }
    return std::vector<double>(lin.weight->value);
  };
  EXPECT_EQ(run(), run());
}

TEST(Rng, StreamsReplayAndDiffer) {
  SeededRng a(7, 3), b(7, 3), c(7, 4);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
  SeededRng d(7, 3);
  d.next_u64();
  EXPECT_EQ(d.split(1).next_u64(), SeededRng(7, 3).split(1).next_u64());
}
