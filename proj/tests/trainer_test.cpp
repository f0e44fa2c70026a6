#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "wraploss/datagen.hpp"
#include "wraploss/trainer.hpp"

namespace wraploss {
namespace {

PerOutputLosses losses_of(std::vector<double> v) {
  PerOutputLosses l;
  l.values = Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  l.coverage.assign(v.size(), 1);
  return l;
}

WrapWeights weights_of(std::vector<double> v) {
  return {Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size())),
          kDefaultWeightFloor};
}

Dataset small_regression(std::uint64_t seed, int n = 40, double sigma = 0.3) {
  HeteroSpec s;
  s.input_dim = 3;
  s.output_dim = 2;
  s.sigma = {sigma, 2 * sigma};
  s.n_train = n;
  s.n_test = 10;
  s.mixture_units = 4;
  s.seed = seed;
  return gen_heteroscedastic_regression(s).train;
}

EpochMetrics with_loss(int epoch, double v) {
  EpochMetrics m;
  m.epoch = epoch;
  m.train_wrapped = v;
  m.eval_metric = v;
  return m;
}

TEST(UpdateWrapWeights, GradientStep) {
  const WrapWeights o = update_wrap_weights(WrapWeights::ones(1), losses_of({4.0}),
                                            OMode::kGradient, 0.1);
  EXPECT_NEAR(o.o[0], 0.7, 1e-15);
}

TEST(UpdateWrapWeights, GradientStepAtStationaryPointIsNoOp) {
  const WrapWeights o =
      update_wrap_weights(weights_of({0.5}), losses_of({2.0}), OMode::kGradient, 0.1);
  EXPECT_EQ(o.o[0], 0.5);
}

TEST(UpdateWrapWeights, Assignment) {
  const WrapWeights o =
      update_wrap_weights(WrapWeights::ones(2), losses_of({2.0, 0.25}), OMode::kAssignment, 0.1);
  EXPECT_EQ(o.o[0], 0.5);
  EXPECT_EQ(o.o[1], 4.0);
}

TEST(UpdateWrapWeights, SmoothedBlendsTowardInverse) {
  const WrapWeights o = update_wrap_weights(WrapWeights::ones(1), losses_of({2.0}),
                                            OMode::kSmoothed, 0.1, 0.5);
  EXPECT_DOUBLE_EQ(o.o[0], 0.75);
}

TEST(UpdateWrapWeights, OffLeavesWeights) {
  const WrapWeights o =
      update_wrap_weights(weights_of({0.3, 3.0}), losses_of({9.0, 1.0}), OMode::kOff, 0.1);
  EXPECT_EQ(o.o[0], 0.3);
  EXPECT_EQ(o.o[1], 3.0);
}

TEST(UpdateWrapWeights, ZeroCoverageKeepsWeight) {
  PerOutputLosses l = losses_of({2.0, 5.0});
  l.coverage[1] = 0;
  const WrapWeights o =
      update_wrap_weights(weights_of({1.0, 0.3}), l, OMode::kAssignment, 0.1);
  EXPECT_EQ(o.o[0], 0.5);
  EXPECT_EQ(o.o[1], 0.3);
}

TEST(UpdateWrapWeights, ClampsAtFloor) {
  int clamped = 0;
  const WrapWeights o = update_wrap_weights(WrapWeights::ones(1), losses_of({100.0}),
                                            OMode::kGradient, 1.0, 0.5, &clamped);
  EXPECT_EQ(o.o[0], kDefaultWeightFloor);
  EXPECT_EQ(clamped, 1);
}

TEST(UpdateWrapWeights, ZeroLossAssignmentIsFinite) {
  const WrapWeights o =
      update_wrap_weights(WrapWeights::ones(1), losses_of({0.0}), OMode::kAssignment, 0.1);
  EXPECT_TRUE(std::isfinite(o.o[0]));
  EXPECT_EQ(o.o[0], 1.0 / kDefaultWeightFloor);
}

// Larger loss, smaller weight: a poorly fit (typically rare) output is never
// up-weighted above a better fit one by the assignment rule.
TEST(UpdateWrapWeights, AssignmentOrderIsInverseToLoss) {
  Engine rng = make_engine(77, {});
  std::uniform_real_distribution<double> d(1e-4, 20.0);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> v(6);
    for (double& x : v) x = d(rng);
    const auto o =
        update_wrap_weights(WrapWeights::ones(6), losses_of(v), OMode::kAssignment, 0.1);
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) {
        if (v[i] > v[j]) {
          EXPECT_LT(o.o[i], o.o[j]);
        }
      }
    }
  }
}

TEST(Validate, ListsEveryViolation) {
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.learning_rate = -1;
  cfg.batch_size = 0;
  cfg.patience = 0;
  const auto v = validate(cfg);
  EXPECT_EQ(v.size(), 4u);
  bool names_lr = false;
  for (const auto& s : v) names_lr |= s.find("learning_rate") != std::string::npos;
  EXPECT_TRUE(names_lr);
  EXPECT_TRUE(validate(TrainConfig{}).empty());
}

TEST(Train, InvalidConfigRaisesConfigError) {
  const Dataset d = small_regression(1);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  try {
    train(init_network({3, 2}, Head::kLinear, {}, 1), d, d, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
}

// o_mode = off reproduces a hand-written plain mean-squared-error loop bit for bit.
TEST(Train, OffModeIsTrajectoryIdenticalToPlainTraining) {
  const Dataset d = small_regression(3, 37);
  for (OptimizerKind opt : {OptimizerKind::kSgd, OptimizerKind::kAdagrad}) {
    TrainConfig cfg;
    cfg.o_mode = OMode::kOff;
    cfg.optimizer = opt;
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.seed = 11;
    const Network net0 = init_network({3, 6, 5, 2}, Head::kLinear, {0.2, 0.0}, 4);
    const TrainResult wrapped = train(net0, d, d, cfg);

    Network net = net0;
    OptimizerState state{opt, cfg.learning_rate, 1e-8, {}};
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      const auto order = batch_order(d.size(), cfg.seed, epoch);
      int b = 0;
      for (Eigen::Index start = 0; start < d.size(); start += cfg.batch_size, ++b) {
        const Eigen::Index len = std::min<Eigen::Index>(cfg.batch_size, d.size() - start);
        const Batch batch = gather_batch(
            d, std::span<const Eigen::Index>(order).subspan(start, len));
        const auto res = forward(net, batch.X, Mode::kTrain, dropout_seed(cfg.seed, epoch, b));
        const Matrix g = 2.0 * (res.outputs - batch.Y) / static_cast<double>(len);
        auto step = apply_grads(std::move(net), backward(net, res.trace, g), std::move(state));
        net = std::move(step.net);
        state = std::move(step.opt);
      }
    }
    EXPECT_EQ(flatten(wrapped.net), flatten(net));
    for (const auto& m : wrapped.history) EXPECT_EQ(m.train_wrapped, m.train_original);
  }
}

TEST(Train, HistoryHasOneEntryPerEpoch) {
  const Dataset d = small_regression(2);
  TrainConfig cfg;
  cfg.epochs = 7;
  cfg.patience = 100;
  const TrainResult r = train(init_network({3, 4, 2}, Head::kLinear, {}, 1), d, d, cfg);
  ASSERT_EQ(r.history.size(), 7u);
  for (int e = 0; e < 7; ++e) EXPECT_EQ(r.history[e].epoch, e + 1);
  EXPECT_FALSE(r.converged);
}

TEST(Train, SameSeedIsDeterministic) {
  const Dataset d = small_regression(2);
  TrainConfig cfg;
  cfg.epochs = 3;
  const Network net = init_network({3, 4, 2}, Head::kLinear, {0.3}, 1);
  const TrainResult a = train(net, d, d, cfg);
  const TrainResult b = train(net, d, d, cfg);
  EXPECT_EQ(flatten(a.net), flatten(b.net));
  EXPECT_EQ(a.o.o, b.o.o);
}

// y = A x + b with no noise: plain SGD reaches the least-squares solution.
TEST(Train, RecoversNoiseFreeLinearMap) {
  HeteroSpec s;
  s.input_dim = 3;
  s.output_dim = 2;
  s.map = TrueMap::kLinear;
  s.sigma = {0.0, 0.0};
  s.n_train = 64;
  s.n_test = 16;
  const DatasetSplit split = gen_heteroscedastic_regression(s);
  const HeteroTruth truth = make_truth(s);
  for (OMode mode : {OMode::kOff, OMode::kGradient}) {
    TrainConfig cfg;
    cfg.o_mode = mode;
    cfg.optimizer = OptimizerKind::kSgd;
    cfg.epochs = 2000;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.05;
    cfg.convergence_tol = 1e-12;
    cfg.patience = 2000;
    const TrainResult r =
        train(init_network({3, 2}, Head::kLinear, {}, 1), split.train, split.test, cfg);
    EXPECT_LE(r.history.size(), 2000u);
    EXPECT_LT(evaluate(r.net, split.train, Metric::kRmse), 1e-3);
    EXPECT_LT((r.net.layers[0].weight - truth.A).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((r.net.layers[0].bias - truth.b).cwiseAbs().maxCoeff(), 1e-6);
  }
}

// With o = 1/l the weight step is grad(log l): it does not shrink as the
// residual vanishes, so assignment mode hovers near (not at) an exact fit.
TEST(Train, AssignmentModeOnRealizableDataStaysFiniteAndImproves) {
  HeteroSpec s;
  s.input_dim = 3;
  s.output_dim = 2;
  s.map = TrueMap::kLinear;
  s.sigma = {0.0, 0.0};
  s.n_train = 64;
  s.n_test = 16;
  const DatasetSplit split = gen_heteroscedastic_regression(s);
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.epochs = 500;
  cfg.batch_size = 16;
  const Network net0 = init_network({3, 2}, Head::kLinear, {}, 1);
  const TrainResult r = train(net0, split.train, split.test, cfg);
  EXPECT_LT(evaluate(r.net, split.train, Metric::kRmse),
            0.5 * evaluate(net0, split.train, Metric::kRmse));
  EXPECT_TRUE(r.o.o.allFinite());
}

// Every batch in assignment mode realizes sum(1 + log l_i) and sits at the
// o-stationary point.
TEST(Train, AssignmentIdentityAndStationarityEveryBatch) {
  const Dataset d = small_regression(9, 60);
  TrainConfig cfg;
  cfg.epochs = 10;
  int batches = 0;
  TrainHooks hooks;
  hooks.on_batch = [&](const BatchEvent& ev) {
    ++batches;
    double expected = 0.0;
    for (Eigen::Index i = 0; i < ev.losses.size(); ++i) {
      expected += 1.0 + std::log(ev.losses.values[i]);
    }
    EXPECT_NEAR(ev.report.wrapped_total, expected, 1e-10);
    const Vector g = grad_wrapped_wrt_o(ev.o, ev.losses);
    EXPECT_LE(g.cwiseAbs().maxCoeff(), 1e-8);
  };
  train(init_network({3, 8, 2}, Head::kLinear, {}, 2), d, d, cfg, hooks);
  EXPECT_EQ(batches, 60);
}

// One small SGD step on fixed o never increases the wrapped loss on its batch.
TEST(TrainStep, SmallStepsDescend) {
  int checked = 0;
  for (std::uint64_t s = 0; s < 120; ++s) {
    const Dataset d = small_regression(s, 12);
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::kSgd;
    cfg.learning_rate = 1e-4;
    cfg.o_mode = s % 2 == 0 ? OMode::kAssignment : OMode::kGradient;
    TrainState st = initial_state(init_network({3, 5, 2}, Head::kLinear, {}, s), cfg);
    const Batch batch{d.X, d.Y, {}};
    const StepOutcome out = train_step(st, batch, cfg, 0);
    auto wrapped_at = [&](const Network& net) {
      const Matrix f = forward(net, batch.X, Mode::kEval, 0).outputs;
      return wrapped_total(out.state.o, per_output_squared_error(batch.Y, f)).wrapped_total;
    };
    EXPECT_LE(wrapped_at(out.state.net), wrapped_at(st.net) + 1e-12) << "seed " << s;
    ++checked;
  }
  EXPECT_GE(checked, 100);
}

TEST(Evaluate, RmseHandExample) {
  Network net = init_network({1, 2}, Head::kLinear, {}, 0);
  net.layers[0].weight.setZero();
  net.layers[0].bias.setZero();
  Dataset d;
  d.X = Matrix::Zero(1, 1);
  d.Y = Matrix(1, 2);
  d.Y << 3.0, 4.0;  // residuals (3, 4)
  d.num_outputs = 2;
  EXPECT_NEAR(evaluate(net, d, Metric::kRmse), std::sqrt(12.5), 1e-15);
  EXPECT_NEAR(evaluate(net, d, Metric::kRmse), 3.5355, 1e-4);
  EXPECT_DOUBLE_EQ(evaluate(net, d, Metric::kOriginalLoss), 25.0);  // 9 + 16
}

TEST(Evaluate, ConstantClassifierPerClassAccuracy) {
  Network net = init_network({2, 3}, Head::kSoftmax, {}, 0);
  net.layers[0].weight.setZero();
  net.layers[0].bias << 5.0, 0.0, 0.0;
  Dataset d;
  d.X = Matrix::Random(6, 2);
  d.labels = {0, 1, 2, 0, 1, 2};
  d.num_outputs = 3;
  const auto acc = per_class_accuracy(net, d);
  EXPECT_EQ(acc, (std::vector<double>{1.0, 0.0, 0.0}));
  EXPECT_NEAR(evaluate(net, d, Metric::kAccuracy), 1.0 / 3.0, 1e-15);
}

TEST(Convergence, StallsForPatienceEpochs) {
  std::vector<EpochMetrics> h{with_loss(1, 10.0), with_loss(2, 10.0), with_loss(3, 10.0)};
  EXPECT_TRUE(has_converged(h, 1e-5, 2));
  EXPECT_FALSE(has_converged(h, 1e-5, 3));
}

TEST(Convergence, ImprovementResetsCounter) {
  std::vector<EpochMetrics> h{with_loss(1, 10.0), with_loss(2, 10.0), with_loss(3, 5.0)};
  EXPECT_FALSE(has_converged(h, 1e-5, 2));
  EXPECT_FALSE(has_converged({}, 1e-5, 1));
}

TEST(Convergence, ImprovementExactlyAtToleranceCounts) {
  // 8 - 0.5 * 8 = 4: an improvement of exactly tol * |best|
  std::vector<EpochMetrics> h{with_loss(1, 8.0), with_loss(2, 4.0)};
  EXPECT_FALSE(has_converged(h, 0.5, 1));
  h[1].train_wrapped = 4.0000001;
  EXPECT_TRUE(has_converged(h, 0.5, 1));
}

TEST(EpochOfBest, EarliestTieWins) {
  std::vector<EpochMetrics> h{with_loss(1, 3.0), with_loss(2, 1.0), with_loss(3, 1.0),
                              with_loss(4, 2.0)};
  EXPECT_EQ(epoch_of_best(h, false), 2);
  EXPECT_EQ(epoch_of_best(h, true), 1);
  EXPECT_EQ(best_epoch_metrics(h, false).epoch, 2);
}

TEST(Train, NonFiniteLossIsNumericError) {
  Dataset d = small_regression(1, 20);
  d.Y(3, 1) = 1e200;
  TrainConfig cfg;
  cfg.epochs = 2;
  try {
    train(init_network({3, 2}, Head::kLinear, {}, 1), d, small_regression(1, 20), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}

}  // namespace
}  // namespace wraploss
