#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "pdx/dpt.hpp"
#include "pdx/engine.hpp"
#include "pdx/gradcheck.hpp"

using namespace pdx;

namespace {

EngineConfig small_engine() {
  EngineConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.max_features = 8;
  c.max_classes = 4;
  c.ff_width = 16;
  return c;
}

Matrix random_matrix(std::size_t r, std::size_t c, SeededRng& rng) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.normal();
  return m;
}

void set_all(Parameter& p, double v) { std::fill(p.value.begin(), p.value.end(), v); }

}  // namespace

TEST(Adapter, ShapeDepthAndDeterminism) {
  SeededRng init(1), rng(2);
  const Adapter a(8, 8, init);
  EXPECT_EQ(a.depth(), 6u);
  EXPECT_EQ(a.params().get("adapter.layer0.weight").shape, (Shape{8, 16}));
  EXPECT_EQ(a.params().get("adapter.layer5.weight").shape, (Shape{16, 8}));
  const Matrix h = random_matrix(5, 8, rng);
  const Matrix z = a.apply(h);
  EXPECT_EQ(z.rows, 5u);
  EXPECT_EQ(z.cols, 8u);
  EXPECT_EQ(z, a.apply(h));
  EXPECT_THROW(a.apply(random_matrix(2, 7, rng)), DimensionError);
}

TEST(Adapter, ZeroParametersGiveZeroOutput) {
  SeededRng init(3), rng(4);
  Adapter a(6, 6, init);
  for (Parameter* p : a.params().all()) set_all(*p, 0.0);
  const Matrix z = a.apply(random_matrix(4, 6, rng));
  EXPECT_TRUE(std::all_of(z.data.begin(), z.data.end(), [](double v) { return v == 0.0; }));
}

TEST(Episode, StratifiedAndDisjoint) {
  SeededRng rng(5);
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) labels.push_back(i % 7 == 0 ? 2 : i % 3 == 0 ? 1 : 0);
  for (int trial = 0; trial < 20; ++trial) {
    const Episode ep = draw_episode(labels, 3, 0.7, rng);
    std::set<std::size_t> s(ep.support.begin(), ep.support.end()), q(ep.query.begin(), ep.query.end());
    EXPECT_EQ(s.size() + q.size(), labels.size());
    for (std::size_t i : ep.query) EXPECT_FALSE(s.count(i));
    std::set<int> seen;
    for (std::size_t i : ep.support) seen.insert(labels[i]);
    EXPECT_EQ(seen.size(), 3u);
  }
  EXPECT_THROW(draw_episode(labels, 4, 0.7, rng), ContractError);
}

TEST(LossAlign, Examples) {
  SeededRng rng(6);
  const Matrix h = random_matrix(10, 5, rng);
  const QuantileFit fit = quantile_fit(h);
  const Matrix psi = quantile_transform(fit, h);
  Tape tape;
  EXPECT_NEAR(loss_align(tape, tape.constant({10, 5}, psi.data), h, fit).item(), 0.0, 1e-15);
  std::vector<double> shifted = psi.data;
  for (double& v : shifted) v += 1.0;
  EXPECT_NEAR(loss_align(tape, tape.constant({10, 5}, shifted), h, fit).item(), 5.0, 1e-12);
}

TEST(LossIcl, UniformAndConfidentEngines) {
  SeededRng init(7), rng(8);
  Engine engine(small_engine(), init);
  set_all(engine.params().get("engine.head.weight"), 0.0);
  set_all(engine.params().get("engine.head.bias"), 0.0);
  Tape tape;
  Var zs = tape.constant({6, 4}, random_matrix(6, 4, rng).data);
  Var zq = tape.constant({3, 4}, random_matrix(3, 4, rng).data);
  const std::vector<int> ys = {0, 1, 2, 0, 1, 2};
  EXPECT_NEAR(loss_icl(engine, tape, zs, ys, zq, std::vector<int>{0, 2, 1}, 3).item(), std::log(3.0), 1e-12);

  engine.params().get("engine.head.bias").value[1] = 60.0;
  EXPECT_NEAR(loss_icl(engine, tape, zs, ys, zq, std::vector<int>{1, 1, 1}, 3).item(), 0.0, 1e-12);
  EXPECT_THROW(loss_icl(engine, tape, zs, ys, zq, std::vector<int>{1, 1, 3}, 3), ContractError);
}

TEST(LossTotal, WeightedSum) {
  DptConfig cfg;
  EXPECT_NEAR(loss_total(cfg, 1.0986, 0.5), 0.5110, 1e-4);
  Tape tape;
  const double v = loss_total(cfg, tape.scalar(1.0986), tape.scalar(0.5)).item();
  EXPECT_DOUBLE_EQ(v, 0.01 * 1.0986 + 0.5);
  cfg.lambda_icl = 0.0;
  EXPECT_DOUBLE_EQ(loss_total(cfg, 7.0, 0.25), 0.25);
  cfg.lambda_icl = 1.0;
  cfg.lambda_align = 0.0;
  EXPECT_DOUBLE_EQ(loss_total(cfg, 7.0, 0.25), 7.0);
  // Linear in each term.
  cfg = DptConfig{};
  for (double a : {0.0, 0.3, 2.0})
    for (double b : {0.0, 1.5, 4.0})
      EXPECT_NEAR(loss_total(cfg, a, b), cfg.lambda_icl * a + cfg.lambda_align * b, 1e-15);
}

TEST(DptConfigCheck, RejectsBadValues) {
  DptConfig c;
  c.lambda_align = 0.0;
  c.lambda_icl = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DptConfig{};
  c.lambda_icl = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DptConfig{};
  c.support_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(LossTotal, EndToEndGradientOnMicroEpisode) {
  SeededRng init(9), rng(10);
  Engine engine(small_engine(), init);
  engine.params().set_frozen(true);
  Adapter adapter(8, 8, init, 0.3);
  for (Parameter* p : adapter.params().all())
    for (double& v : p->value) v += rng.normal(0.0, 0.05);
  const Matrix hs = random_matrix(6, 8, rng), hq = random_matrix(3, 8, rng);
  const std::vector<int> ys = {0, 1, 2, 0, 1, 2}, yq = {2, 0, 1};
  const QuantileFit fit = quantile_fit(hs);
  Matrix hsq(9, 8);
  std::copy(hs.data.begin(), hs.data.end(), hsq.data.begin());
  std::copy(hq.data.begin(), hq.data.end(), hsq.data.begin() + 48);
  DptConfig cfg;
  cfg.lambda_icl = 1.0;  // weight the engine term enough to matter in the check
  const auto params = adapter.params().all();
  const double err = finite_difference_check(
      [&](Tape& t) {
        Var zs = adapter(t, t.constant({6, 8}, hs.data));
        Var zq = adapter(t, t.constant({3, 8}, hq.data));
        return loss_total(cfg, loss_icl(engine, t, zs, ys, zq, yq, 3), loss_align(t, concat_rows(zs, zq), hsq, fit));
      },
      params);
  EXPECT_LT(err, 1e-4);
}

class TrainDpt : public ::testing::Test {
 protected:
  void SetUp() override {
    SeededRng init(11), rng(12);
    engine_ = std::make_unique<Engine>(small_engine(), init);
    h_ = random_matrix(30, 6, rng);
    hv_ = random_matrix(9, 6, rng);
    for (int i = 0; i < 30; ++i) y_.push_back(i % 3);
    for (int i = 0; i < 9; ++i) yv_.push_back(i % 3);
    cfg_.epochs = 4;
    cfg_.steps_per_epoch = 2;
  }
  std::unique_ptr<Engine> engine_;
  Matrix h_, hv_;
  std::vector<int> y_, yv_;
  DptConfig cfg_;
};

TEST_F(TrainDpt, OnlyAdapterChangesAndRunsReplay) {
  const Engine before = engine_->clone();
  SeededRng a(13), b(13);
  const DptResult r1 = train_dpt(h_, y_, hv_, yv_, 3, *engine_, cfg_, a);
  const DptResult r2 = train_dpt(h_, y_, hv_, yv_, 3, *engine_, cfg_, b);
  EXPECT_TRUE(engine_->params().bitwise_equal(before.params()));
  EXPECT_TRUE(r1.adapter.params().bitwise_equal(r2.adapter.params()));
  ASSERT_EQ(r1.curve.size(), 4u);
  for (const auto& rec : r1.curve) {
    EXPECT_NEAR(rec.l_total, cfg_.lambda_icl * rec.l_icl + cfg_.lambda_align * rec.l_align, 1e-12);
    EXPECT_GE(rec.val_acc, 0.0);
    EXPECT_LE(rec.val_acc, 1.0);
  }
  SeededRng c = SeededRng(13).split(1);
  const Adapter fresh(6, 6, c, cfg_.init_scale);
  EXPECT_FALSE(fresh.params().bitwise_equal(r1.adapter.params()));
}

TEST_F(TrainDpt, AlignOnlyReducesAlignmentLoss) {
  cfg_.lambda_icl = 0.0;
  cfg_.epochs = 200;
  cfg_.steps_per_epoch = 1;
  cfg_.init_scale = 0.2;
  cfg_.lr = 1e-2;
  SeededRng rng(14);
  const DptResult r = train_dpt(h_, y_, Matrix(), {}, 3, *engine_, cfg_, rng);
  EXPECT_LT(r.curve.back().l_align, 0.5 * r.curve.front().l_align);
  EXPECT_GT(r.curve.front().l_icl, 0.0);  // still reported for the curve
}

TEST_F(TrainDpt, BestEpochSelection) {
  cfg_.best_epoch = true;
  SeededRng rng(15);
  const DptResult r = train_dpt(h_, y_, hv_, yv_, 3, *engine_, cfg_, rng);
  double best = -1.0;
  for (const auto& rec : r.curve) best = std::max(best, rec.val_acc);
  EXPECT_EQ(r.curve[r.selected_epoch].val_acc, best);
  const double acc = accuracy(argmax_rows(predict_dpt(r.adapter, *engine_, h_, y_, hv_, 3)), yv_);
  EXPECT_DOUBLE_EQ(acc, best);
}

TEST(Predict, RowsSumToOneAndChunkingIsInvisible) {
  SeededRng init(16), rng(17);
  const Engine engine(small_engine(), init);
  const Adapter adapter(5, 5, init, 0.3);
  const Matrix hc = random_matrix(12, 5, rng), hq = random_matrix(300, 5, rng);
  std::vector<int> yc;
  for (int i = 0; i < 12; ++i) yc.push_back(i % 3);
  const Matrix p = predict_dpt(adapter, engine, hc, yc, hq, 3);
  for (std::size_t r = 0; r < p.rows; ++r) {
    const auto row = p.row(r);
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-9);
  }
  const std::vector<std::size_t> last = {299};
  const Matrix single = predict_dpt(adapter, engine, hc, yc, hq.select_rows(last), 3);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(single(0, c), p(299, c), 1e-12);

  // Raw path: psi fitted on the context, then the engine.
  const QuantileFit fit = quantile_fit(hc);
  EXPECT_EQ(predict_raw(engine, hc, yc, hq, 3),
            predict_prompts(engine, quantile_transform(fit, hc), yc, quantile_transform(fit, hq), 3));
}

TEST(Predict, ArgmaxInvariantToSupportOrder) {
  SeededRng init(18), rng(19);
  const Engine engine(small_engine(), init);
  const Adapter adapter(4, 4, init, 0.3);
  const Matrix hc = random_matrix(15, 4, rng), hq = random_matrix(20, 4, rng);
  std::vector<int> yc;
  for (int i = 0; i < 15; ++i) yc.push_back(i % 3);
  const auto perm = rng.permutation(15);
  const Matrix hp = hc.select_rows(perm);
  std::vector<int> yp;
  for (std::size_t i : perm) yp.push_back(yc[i]);
  EXPECT_EQ(argmax_rows(predict_dpt(adapter, engine, hc, yc, hq, 3)),
            argmax_rows(predict_dpt(adapter, engine, hp, yp, hq, 3)));
}

TEST(Accuracy, CountsMatches) {
  EXPECT_DOUBLE_EQ(accuracy(std::vector<int>{0, 1, 2, 2}, std::vector<int>{0, 1, 1, 2}), 0.75);
  EXPECT_THROW(accuracy(std::vector<int>{0}, std::vector<int>{0, 1}), DimensionError);
}
