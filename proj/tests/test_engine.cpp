#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pdx/engine.hpp"
#include "pdx/gradcheck.hpp"

using namespace pdx;

namespace {

EngineConfig small_config() {
  EngineConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_features = 8;
  c.max_classes = 4;
  c.ff_width = 32;
  return c;
}

ContextBatch random_batch(std::size_t ns, std::size_t nq, std::size_t f, std::size_t classes, SeededRng& rng) {
  ContextBatch b;
  b.support = Matrix(ns, f);
  b.query = Matrix(nq, f);
  for (double& v : b.support.data) v = rng.normal();
  for (double& v : b.query.data) v = rng.normal();
  for (std::size_t i = 0; i < ns; ++i) b.support_labels.push_back(static_cast<int>(i % classes));
  b.classes = classes;
  return b;
}

}  // namespace

TEST(Engine, PosteriorRowsSumToOne) {
  SeededRng init(1), rng(2);
  const Engine engine(small_config(), init);
  const Matrix p = engine.predict(random_batch(9, 5, 5, 3, rng));
  ASSERT_EQ(p.rows, 5u);
  ASSERT_EQ(p.cols, 3u);
  for (std::size_t r = 0; r < p.rows; ++r) {
    const auto row = p.row(r);
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-9);
  }
}

TEST(Engine, SupportPermutationInvariance) {
  SeededRng init(3), rng(4);
  const Engine engine(small_config(), init);
  const ContextBatch b = random_batch(12, 4, 6, 3, rng);
  ContextBatch shuffled = b;
  const auto perm = rng.permutation(12);
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t c = 0; c < 6; ++c) shuffled.support(i, c) = b.support(perm[i], c);
    shuffled.support_labels[i] = b.support_labels[perm[i]];
  }
  const Matrix a = engine.predict(b), c = engine.predict(shuffled);
  for (std::size_t k = 0; k < a.data.size(); ++k) EXPECT_NEAR(a.data[k], c.data[k], 1e-6);
}

TEST(Engine, QueryIndependence) {
  SeededRng init(5), rng(6);
  const Engine engine(small_config(), init);
  const ContextBatch b = random_batch(10, 6, 4, 2, rng);
  const Matrix all = engine.predict(b);
  for (std::size_t q = 0; q < b.query.rows; ++q) {
    ContextBatch one = b;
    const std::vector<std::size_t> row = {q};
    one.query = b.query.select_rows(row);
    const Matrix alone = engine.predict(one);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(alone(0, c), all(q, c), 1e-9);
  }
}

TEST(Engine, DuplicatedQueryGetsIdenticalPosterior) {
  SeededRng init(7), rng(8);
  const Engine engine(small_config(), init);
  ContextBatch b = random_batch(8, 2, 3, 2, rng);
  for (std::size_t c = 0; c < 3; ++c) b.query(1, c) = b.query(0, c);
  const Matrix p = engine.predict(b);
  EXPECT_EQ(p(0, 0), p(1, 0));
  EXPECT_EQ(p(0, 1), p(1, 1));
}

TEST(Engine, TooManyClassesRejected) {
  SeededRng init(9), rng(10);
  const Engine engine(small_config(), init);
  ContextBatch b = random_batch(8, 2, 3, 2, rng);
  b.classes = 5;
  EXPECT_THROW(engine.predict(b), ContractError);
  b = random_batch(8, 2, 9, 2, rng);
  EXPECT_THROW(engine.predict(b), ContractError);
}

TEST(Engine, PredictLeavesParametersUntouched) {
  SeededRng init(11), rng(12);
  const Engine engine(small_config(), init);
  const Engine before = engine.clone();
  for (int i = 0; i < 3; ++i) engine.predict(random_batch(7, 3, 4, 3, rng));
  EXPECT_TRUE(engine.params().bitwise_equal(before.params()));
}

TEST(Engine, MaskLetsQueriesSeeOnlySupportAndThemselves) {
  const auto mask = context_mask(3, 2);
  ASSERT_EQ(mask.size(), 25u);
  auto blocked = [&](std::size_t r, std::size_t c) { return std::isinf(mask[r * 5 + c]); };
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(blocked(r, c), c >= 3);
  }
  EXPECT_FALSE(blocked(3, 3));
  EXPECT_TRUE(blocked(3, 4));
  EXPECT_TRUE(blocked(4, 3));
  EXPECT_FALSE(blocked(4, 4));
}

TEST(Engine, GradientsReachPromptsAndPassFiniteDifferences) {
  EngineConfig cfg = small_config();
  cfg.d_model = 8;
  cfg.ff_width = 16;
  SeededRng init(13), rng(14);
  Engine engine(cfg, init);
  engine.params().set_frozen(true);
  Parameter zs{"zs", {5, 3}, {}, {}}, zq{"zq", {3, 3}, {}, {}};
  for (Parameter* p : {&zs, &zq}) {
    p->value.resize(p->shape[0] * p->shape[1]);
    p->grad.assign(p->value.size(), 0.0);
  }
  const std::vector<int> ys = {0, 1, 2, 0, 1}, yq = {2, 0, 1};
  std::vector<Parameter*> ps = {&zs, &zq};
  for (int point = 0; point < 10; ++point) {
    for (Parameter* p : ps)
      for (double& v : p->value) v = rng.normal();
    const double err = finite_difference_check(
        [&](Tape& t) { return cross_entropy(engine.logits(t, t.param(zs), ys, t.param(zq), 3), yq); }, ps);
    EXPECT_LT(err, 1e-4);
  }
  for (const Parameter* p : engine.params().all()) {
    EXPECT_TRUE(std::all_of(p->grad.begin(), p->grad.end(), [](double g) { return g == 0.0; })) << p->name;
  }
}

TEST(PriorTask, DeterministicAndCoversClasses) {
  PriorTaskConfig prior;
  prior.max_features = 8;
  prior.max_classes = 4;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SeededRng a(seed), b(seed);
    const PriorTask t1 = sample_prior_task(prior, a), t2 = sample_prior_task(prior, b);
    EXPECT_EQ(t1.batch.support, t2.batch.support);
    EXPECT_EQ(t1.query_labels, t2.query_labels);
    for (int c = 0; c < static_cast<int>(t1.batch.classes); ++c) {
      EXPECT_NE(std::find(t1.batch.support_labels.begin(), t1.batch.support_labels.end(), c),
                t1.batch.support_labels.end());
    }
    EXPECT_GE(t1.batch.classes, 2u);
  }
}

TEST(PriorTask, NoiseFreeLabelsAreReproducible) {
  PriorTaskConfig prior;
  prior.max_features = 6;
  prior.max_classes = 3;
  prior.label_noise = 0.0;
  SeededRng a(77), b(77);
  EXPECT_EQ(sample_prior_task(prior, a).batch.support_labels, sample_prior_task(prior, b).batch.support_labels);
}

TEST(PriorTask, ConfigValidation) {
  EngineConfig engine = small_config();
  PriorTaskConfig prior;
  EXPECT_THROW(prior.validate(engine), ConfigError);  // 128 features exceed the engine's 8
  prior.max_features = 8;
  prior.max_classes = 4;
  EXPECT_NO_THROW(prior.validate(engine));
  prior.label_noise = 0.3;
  EXPECT_THROW(prior.validate(engine), ConfigError);
}

TEST(Preprocess, AppliesSupportFittedQuantiles) {
  SeededRng rng(15);
  const ContextBatch raw = random_batch(20, 5, 3, 2, rng);
  const ContextBatch z = preprocess(raw);
  const QuantileFit fit = quantile_fit(raw.support);
  EXPECT_EQ(z.support, quantile_transform(fit, raw.support));
  EXPECT_EQ(z.query, quantile_transform(fit, raw.query));
}

TEST(Pretrain, InitialLossNearLogCAndDecreases) {
  EngineConfig cfg = small_config();
  PriorTaskConfig prior;
  prior.max_features = 8;
  prior.max_classes = 2;
  prior.max_samples = 64;
  EnginePretrainOptions opt;
  opt.steps = 300;
  opt.tasks_per_step = 2;
  SeededRng rng(16);
  const auto result = pretrain_engine(cfg, prior, opt, rng);
  ASSERT_EQ(result.loss_curve.size(), 300u);
  EXPECT_NEAR(result.loss_curve.front(), std::log(2.0), 0.35);
  const auto window = [&](std::size_t begin) {
    return std::accumulate(result.loss_curve.begin() + begin, result.loss_curve.begin() + begin + 50, 0.0) / 50.0;
  };
  EXPECT_LT(window(250), window(0));
}

TEST(Divergence, RaisesAfterPatience) {
  DivergenceMonitor monitor("test", 5, 10.0);
  monitor.observe(1.0);
  for (int i = 0; i < 4; ++i) monitor.observe(20.0);
  monitor.observe(2.0);  // streak broken
  for (int i = 0; i < 4; ++i) monitor.observe(20.0);
  EXPECT_THROW(monitor.observe(20.0), DivergenceError);
}
