#pragma once

// Verification tools: central finite differences, the near-one approximation
// bound for the wrapped loss, WrapErr = o P^2 + log(1/o) surfaces, and the
// DoF-based expected wrap-loss estimate.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "wraploss/core_nn.hpp"
#include "wraploss/datagen.hpp"
#include "wraploss/errors.hpp"
#include "wraploss/losses.hpp"
#include "wraploss/random.hpp"

namespace wraploss {

using ScalarFn = std::function<double(std::span<const double>)>;

inline std::vector<double> finite_diff_gradient(const ScalarFn& f,
                                                std::span<const double> at,
                                                double step = 1e-5) {
  detail::require(step > 0.0, ErrorKind::kDomain, "step must be positive");
  std::vector<double> x(at.begin(), at.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f(x);
    x[i] = orig - step;
    const double down = f(x);
    x[i] = orig;
    detail::require(std::isfinite(up) && std::isfinite(down), ErrorKind::kNumeric,
                    "non-finite evaluation at coordinate " + std::to_string(i));
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

// ||a - b|| / max(||a||, ||b||, 1e-12).
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  detail::require(a.size() == b.size(), ErrorKind::kShape,
                  "gradient lengths differ");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

// ---------------------------------------------------------------------------

struct Theorem1Report {
  int c = 0;
  double L = 0.0;
  double delta = 0.0;
  long trials = 0;
  double max_observed = 0.0;
  double bound = 0.0;  // 1 / (c (L + 1))
  double slack = 1.05;
  bool pass = false;
};

inline double theorem1_bound(int c, double L) { return 1.0 / (c * (L + 1.0)); }
inline double theorem1_delta_max(int c, double L) {
  const double b = theorem1_bound(c, L);
  return b * b;
}

// Samples o_i uniform on [1 - delta, 1 + delta] and l_i uniform on [0, L].
// Each trial draws from its own stream derived from (seed, trial).
inline Theorem1Report check_theorem1(int c, double L, double delta, long trials,
                                     std::uint64_t seed, double slack = 1.05) {
  using detail::require;
  require(c >= 1, ErrorKind::kDomain, "c must be >= 1");
  require(L > 1.0, ErrorKind::kDomain, "L must exceed 1");
  require(delta >= 0.0 && delta <= theorem1_delta_max(c, L), ErrorKind::kDomain,
          "delta must lie in [0, (c(L+1))^-2]");
  require(trials >= 1, ErrorKind::kDomain, "trials must be >= 1");
  require(slack > 0.0, ErrorKind::kDomain, "slack must be positive");

  Theorem1Report rep{c, L, delta, trials, 0.0, theorem1_bound(c, L), slack, false};
  PerOutputLosses losses{Vector(c), std::vector<long>(c, 1)};
  WrapWeights o{Vector(c), kDefaultWeightFloor};
  for (long t = 0; t < trials; ++t) {
    Engine rng = make_engine(seed, {0x7401, static_cast<std::uint64_t>(t)});
    std::uniform_real_distribution<double> od(1.0 - delta, 1.0 + delta);
    std::uniform_real_distribution<double> ld(0.0, L);
    for (int i = 0; i < c; ++i) {
      o.o[i] = delta == 0.0 ? 1.0 : od(rng);
      losses.values[i] = ld(rng);
    }
    const LossReport r = wrapped_total(o, losses);
    rep.max_observed =
        std::max(rep.max_observed, std::abs(r.wrapped_total - r.original_total));
  }
  rep.pass = rep.max_observed <= slack * rep.bound;
  return rep;
}

// ---------------------------------------------------------------------------

struct SurfaceGrid {
  std::string axis1_name;
  std::string axis2_name;
  std::vector<double> axis1;  // rows
  std::vector<double> axis2;  // columns
  Matrix values;              // axis1.size() x axis2.size()
};

// n evenly spaced points on [lo, hi] (n == 1 yields lo).
inline std::vector<double> linspace(double lo, double hi, int n) {
  detail::require(n >= 1, ErrorKind::kDomain, "resolution must be >= 1");
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    v[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / (n - 1);
  }
  return v;
}

// Points k * step on [lo, hi]. When 1/step is an integer the points are
// computed as k / (1/step), so decimal values such as 1.0 come out exact.
inline std::vector<double> decimal_grid(double lo, double hi, double step) {
  detail::require(step > 0.0 && hi >= lo, ErrorKind::kDomain,
                  "grid needs step > 0 and hi >= lo");
  const double inv = 1.0 / step;
  const double den = std::round(inv);
  const bool exact = std::abs(inv - den) <= 1e-9 * inv;
  const auto k_lo = static_cast<long>(std::ceil(lo / step - 1e-9));
  const auto k_hi = static_cast<long>(std::floor(hi / step + 1e-9));
  detail::require(k_hi - k_lo < 50'000'000, ErrorKind::kDomain, "grid too large");
  std::vector<double> v;
  for (long k = k_lo; k <= k_hi; ++k) {
    v.push_back(exact ? static_cast<double>(k) / den : static_cast<double>(k) * step);
  }
  return v;
}

inline double wrap_error(double o, double p) {
  return o * p * p + std::log(1.0 / o);
}

// Rows indexed by o, columns by the prediction error P.
inline SurfaceGrid wrap_error_surface(std::vector<double> o_values,
                                      std::vector<double> p_values,
                                      double floor = kDefaultWeightFloor) {
  for (double o : o_values) {
    detail::require(o > 0.0 && o >= floor, ErrorKind::kDomain,
                    "o grid values must be >= the floor");
  }
  SurfaceGrid g{"o", "P", std::move(o_values), std::move(p_values), {}};
  g.values.resize(static_cast<Eigen::Index>(g.axis1.size()),
                  static_cast<Eigen::Index>(g.axis2.size()));
  for (std::size_t i = 0; i < g.axis1.size(); ++i) {
    for (std::size_t j = 0; j < g.axis2.size(); ++j) {
      g.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          wrap_error(g.axis1[i], g.axis2[j]);
    }
  }
  return g;
}

inline SurfaceGrid wrap_error_surface(double o_lo, double o_hi, int o_res,
                                      double p_lo, double p_hi, int p_res) {
  detail::require(o_lo > 0.0, ErrorKind::kDomain, "o range must be positive");
  return wrap_error_surface(linspace(o_lo, o_hi, o_res), linspace(p_lo, p_hi, p_res));
}

// ---------------------------------------------------------------------------

// c (1 + log DoF) + sum_i log sigma_i^2
inline double expected_wrap_estimate(int c, double dof,
                                     std::span<const double> sigma_sq) {
  using detail::require;
  require(c >= 0, ErrorKind::kDomain, "c must be >= 0");
  require(dof >= 1.0, ErrorKind::kDomain, "DoF must be >= 1");
  require(static_cast<int>(sigma_sq.size()) == c, ErrorKind::kShape,
          "need one variance per output");
  double v = c * (1.0 + std::log(dof));
  for (double s : sigma_sq) {
    require(s > 0.0 && std::isfinite(s), ErrorKind::kDomain,
            "variances must be positive");
    v += std::log(s);
  }
  return v;
}

// Surface of c (1 + log DoF) over (DoF, c), the sigma term omitted.
inline SurfaceGrid expected_wrap_surface(std::vector<double> dof_values,
                                         std::vector<double> c_values) {
  SurfaceGrid g{"dof", "c", std::move(dof_values), std::move(c_values), {}};
  g.values.resize(static_cast<Eigen::Index>(g.axis1.size()),
                  static_cast<Eigen::Index>(g.axis2.size()));
  for (std::size_t i = 0; i < g.axis1.size(); ++i) {
    detail::require(g.axis1[i] >= 1.0, ErrorKind::kDomain, "DoF must be >= 1");
    for (std::size_t j = 0; j < g.axis2.size(); ++j) {
      detail::require(g.axis2[j] >= 0.0, ErrorKind::kDomain, "c must be >= 0");
      g.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          g.axis2[j] * (1.0 + std::log(g.axis1[i]));
    }
  }
  return g;
}

// L = max over samples and outputs of the squared residual.
inline double compute_residual_bound_L(const Network& net, const Dataset& data) {
  detail::require(!data.is_classification(), ErrorKind::kConfig,
                  "residual bound needs a regression dataset");
  detail::require(data.input_dim() == net.input_width() &&
                      data.Y.cols() == net.output_width(),
                  ErrorKind::kShape, "dataset does not match network dims");
  const Matrix out = forward(net, data.X, Mode::kEval, 0).outputs;
  return (data.Y - out).cwiseAbs2().maxCoeff();
}

}  // namespace wraploss
