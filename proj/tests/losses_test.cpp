#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "wraploss/analysis.hpp"
#include "wraploss/losses.hpp"
#include "wraploss/random.hpp"
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

Matrix mat(int r, int c, std::initializer_list<double> v) {
  Matrix m(r, c);
  auto it = v.begin();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = *it++;
  return m;
}

TEST(SquaredError, PerOutputBatchMean) {
  const auto l = per_output_squared_error(mat(1, 2, {0, 0}), mat(1, 2, {1, 2}));
  EXPECT_DOUBLE_EQ(l.values[0], 1.0);
  EXPECT_DOUBLE_EQ(l.values[1], 4.0);

  const auto m = per_output_squared_error(mat(2, 1, {0, 0}), mat(2, 1, {1, 3}));
  EXPECT_DOUBLE_EQ(m.values[0], 5.0);
  EXPECT_EQ(m.coverage[0], 2);
}

TEST(SquaredError, ShapeMismatch) {
  EXPECT_THROW(per_output_squared_error(Matrix::Zero(2, 2), Matrix::Zero(2, 3)), Error);
}

TEST(CrossEntropy, PerClassMean) {
  const Matrix p = mat(2, 2, {0.25, 0.75, 0.5, 0.5});
  const std::vector<int> labels{0, 0};
  const auto l = per_class_cross_entropy(labels, p);
  EXPECT_NEAR(l.values[0], 0.5 * (std::log(4.0) + std::log(2.0)), 1e-15);
  EXPECT_EQ(l.values[1], 0.0);
  EXPECT_EQ(l.coverage[1], 0);
}

TEST(CrossEntropy, SingleSampleIsLogOfInverse) {
  const std::vector<int> labels{0};
  EXPECT_NEAR(per_class_cross_entropy(labels, mat(1, 2, {0.25, 0.75})).values[0],
              std::log(4.0), 1e-15);
}

TEST(CrossEntropy, AbsentClassTakesCarry) {
  const std::vector<int> labels{1};
  const auto carry = losses_of({3.5, 9.0});
  const auto l = per_class_cross_entropy(labels, mat(1, 2, {0.5, 0.5}), carry);
  EXPECT_EQ(l.values[0], 3.5);
  EXPECT_NEAR(l.values[1], std::log(2.0), 1e-15);
  EXPECT_EQ(l.coverage[0], 0);
}

TEST(CrossEntropy, RejectsBadLabelsAndProbabilities) {
  const std::vector<int> bad{2};
  try {
    per_class_cross_entropy(bad, mat(1, 2, {0.5, 0.5}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kLabel);
  }
  const std::vector<int> ok{0};
  try {
    per_class_cross_entropy(ok, mat(1, 2, {0.5, 0.6}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProbability);
  }
}

TEST(WrappedTotal, HandExamples) {
  const auto l = losses_of({3.0, 4.0});
  EXPECT_DOUBLE_EQ(wrapped_total(WrapWeights::ones(2), l).wrapped_total, 7.0);
  EXPECT_DOUBLE_EQ(wrapped_total(WrapWeights::ones(2), l).original_total, 7.0);

  const auto one = losses_of({2.0});
  EXPECT_NEAR(wrapped_total(weights_of({0.5}), one).wrapped_total, 1.0 + std::log(2.0),
              1e-15);
  EXPECT_NEAR(wrapped_total(weights_of({0.5}), one).wrapped_total, 1.6931, 1e-4);

  EXPECT_NEAR(wrapped_total(weights_of({2.0}), one).wrapped_total, 4.0 - std::log(2.0), 1e-15);
}

TEST(WrappedTotal, RejectsWeightsBelowFloor) {
  try {
    wrapped_total(weights_of({1.0, 0.0}), losses_of({1.0, 1.0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDomain);
  }
  EXPECT_THROW(wrapped_total(weights_of({1.0}), losses_of({1.0, 1.0})), Error);
}

TEST(GradWrtO, HandExamples) {
  EXPECT_DOUBLE_EQ(grad_wrapped_wrt_o(weights_of({0.5}), losses_of({2.0}))[0], 0.0);
  EXPECT_DOUBLE_EQ(grad_wrapped_wrt_o(weights_of({1.0}), losses_of({4.0}))[0], 3.0);
}

TEST(OutputGrad, SquaredHandExample) {
  // o = 2, f = 3, y = 1, one sample: 2 * 2 * (3 - 1) = 8
  const Matrix g = wrapped_output_grad(weights_of({2.0}), mat(1, 1, {1}), mat(1, 1, {3}));
  EXPECT_DOUBLE_EQ(g(0, 0), 8.0);
}

TEST(OutputGrad, OnesWeightsGivePlainMeanGradient) {
  Engine rng = make_engine(5, {});
  std::normal_distribution<double> d;
  Matrix y(6, 3), f(6, 3);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    y.data()[i] = d(rng);
    f.data()[i] = d(rng);
  }
  const Matrix g = wrapped_output_grad(WrapWeights::ones(3), y, f);
  EXPECT_TRUE(g.isApprox(2.0 * (f - y) / 6.0, 1e-15));
}

TEST(SigmaNll, HandExamples) {
  const SigmaNll a = sigma_nll({Vector::Constant(1, 2.0)}, losses_of({4.0}));
  EXPECT_NEAR(a.value, 1.0 + std::log(4.0), 1e-15);
  EXPECT_NEAR(a.value, 2.3863, 1e-4);
  EXPECT_NEAR(a.grad[0], 0.0, 1e-15);  // sigma^2 = l is stationary

  const SigmaNll b = sigma_nll({Vector::Constant(1, 1.0)}, losses_of({4.0}));
  EXPECT_DOUBLE_EQ(b.grad[0], -6.0);
  EXPECT_THROW(sigma_nll({Vector::Constant(1, 0.0)}, losses_of({1.0})), Error);
}

TEST(MedianFrequency, HandExample) {
  // freq = (0.5, 0.3, 0.2), median 0.3
  const std::vector<long> counts{50, 30, 20};
  const Vector w = median_frequency_weights(counts);
  EXPECT_NEAR(w[0], 0.6, 1e-15);
  EXPECT_DOUBLE_EQ(w[1], 1.0);
  EXPECT_NEAR(w[2], 1.5, 1e-15);
}

TEST(MedianFrequency, EvenClassCountAveragesMiddle) {
  const std::vector<long> counts{10, 20, 30, 40};
  const Vector w = median_frequency_weights(counts);
  // freq = .1 .2 .3 .4; median .25
  EXPECT_NEAR(w[0], 2.5, 1e-15);
  EXPECT_NEAR(w[3], 0.625, 1e-15);
}

TEST(MedianFrequency, EmptyClassIsDegenerate) {
  const std::vector<long> counts{10, 0, 5};
  try {
    median_frequency_weights(counts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerateClass);
  }
}

TEST(MedianFrequency, InvariantToCountScaling) {
  const std::vector<long> a{7, 3, 12, 5, 9}, b{14, 6, 24, 10, 18};
  EXPECT_TRUE(median_frequency_weights(a).isApprox(median_frequency_weights(b), 1e-15));
}

class RandomLosses : public ::testing::Test {
 protected:
  Engine rng = make_engine(2024, {});
  std::uniform_real_distribution<double> l_d{1e-3, 50.0};
  std::uniform_real_distribution<double> o_d{1e-3, 10.0};
  std::uniform_int_distribution<int> c_d{1, 12};

  PerOutputLosses draw_losses(int c) {
    std::vector<double> v(c);
    for (double& x : v) x = l_d(rng);
    return losses_of(v);
  }
};

TEST_F(RandomLosses, ReductionToOriginalAtOnes) {
  for (int t = 0; t < 1000; ++t) {
    const auto l = draw_losses(c_d(rng));
    const LossReport r = wrapped_total(WrapWeights::ones(l.size()), l);
    EXPECT_LE(std::abs(r.wrapped_total - r.original_total),
              1e-12 * std::abs(r.original_total));
  }
}

TEST_F(RandomLosses, StationaryAtInverseAndConvexInO) {
  for (int t = 0; t < 200; ++t) {
    const double l = l_d(rng);
    const auto losses = losses_of({l});
    auto f = [&](double o) { return wrapped_total(weights_of({o}), losses).wrapped_total; };
    const double o_star = 1.0 / l;
    EXPECT_LE(std::abs(grad_wrapped_wrt_o(weights_of({o_star}), losses)[0]), 1e-8 * l);
    for (double s : {0.5, 0.9, 1.1, 2.0}) EXPECT_GE(f(s * o_star), f(o_star));
    const double a = o_d(rng), b = o_d(rng);
    EXPECT_LE(f(0.5 * (a + b)), 0.5 * (f(a) + f(b)) + 1e-12);
  }
}

TEST_F(RandomLosses, AssignmentValueIdentity) {
  for (int t = 0; t < 500; ++t) {
    const auto l = draw_losses(c_d(rng));
    const WrapWeights o =
        update_wrap_weights(WrapWeights::ones(l.size()), l, OMode::kAssignment, 0.01);
    double expected = 0.0;
    for (Eigen::Index i = 0; i < l.size(); ++i) expected += 1.0 + std::log(l.values[i]);
    EXPECT_NEAR(wrapped_total(o, l).wrapped_total, expected, 1e-10 * l.size());
  }
}

// At o = 1/sigma^2 the wrapped loss and sigma-NLL coincide.
TEST_F(RandomLosses, SigmaNllMatchesWrappedAtInverseVariance) {
  std::uniform_real_distribution<double> s_d(0.1, 5.0);
  for (int t = 0; t < 500; ++t) {
    const int c = c_d(rng);
    const auto l = draw_losses(c);
    Vector sigma(c);
    WrapWeights o = WrapWeights::ones(c);
    for (int i = 0; i < c; ++i) {
      sigma[i] = s_d(rng);
      o.o[i] = 1.0 / (sigma[i] * sigma[i]);
    }
    const double a = sigma_nll({sigma}, l).value;
    const double b = wrapped_total(o, l).wrapped_total;
    EXPECT_NEAR(a, b, 1e-12 * std::max(1.0, std::abs(a)));
  }
}

TEST_F(RandomLosses, GradWrtOMatchesFiniteDifferences) {
  for (int t = 0; t < 200; ++t) {
    const int c = c_d(rng);
    const auto l = draw_losses(c);
    std::vector<double> o0(c);
    for (double& v : o0) v = 0.2 + o_d(rng);
    auto J = [&](std::span<const double> v) {
      return wrapped_total({Eigen::Map<const Vector>(v.data(), c), kDefaultWeightFloor}, l)
          .wrapped_total;
    };
    const Vector g = grad_wrapped_wrt_o(weights_of(o0), l);
    const auto num = finite_diff_gradient(J, o0, 1e-5);
    EXPECT_LE(relative_error(std::vector<double>(g.data(), g.data() + c), num), 1e-6);
  }
}

// The composed weight gradient equals the loss gradient chained by hand.
TEST(ComposedGradient, OutputGradTimesBackwardIsConsistent) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Network net = init_network({3, 4, 2}, Head::kLinear, {}, s);
    Engine rng = make_engine(s, {1});
    std::normal_distribution<double> d;
    Matrix X(5, 3), Y(5, 2);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = d(rng);
    for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = d(rng);
    const WrapWeights o = weights_of({0.7, 2.3});
    const auto res = forward(net, X, Mode::kTrain, 0);
    const auto g1 = flatten(backward(net, res.trace, wrapped_output_grad(o, Y, res.outputs)));
    // same gradient assembled one output column at a time
    std::vector<double> g2(g1.size(), 0.0);
    for (int c = 0; c < 2; ++c) {
      Matrix G = Matrix::Zero(5, 2);
      G.col(c) = o.o[c] * 2.0 * (res.outputs.col(c) - Y.col(c)) / 5.0;
      const auto part = flatten(backward(net, res.trace, G));
      for (std::size_t i = 0; i < g2.size(); ++i) g2[i] += part[i];
    }
    EXPECT_LE(relative_error(g1, g2), 1e-10);
  }
}

}  // namespace
}  // namespace wraploss
