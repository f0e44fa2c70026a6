#pragma once

// Per-output losses and the wrapped loss family.
//
//   original  = sum_i l_i
//   weighted  = sum_i o_i l_i
//   wrapped   = sum_i (o_i l_i + log(1/o_i))
//   sigma-NLL = sum_i (l_i / s_i^2 + log s_i^2)
//
// l_i is always a batch mean, so o_i does not scale with batch size.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wraploss/core_nn.hpp"
#include "wraploss/errors.hpp"

namespace wraploss {

inline constexpr double kDefaultWeightFloor = 1e-8;

struct PerOutputLosses {
  Vector values;                 // l_i >= 0
  std::vector<long> coverage;    // samples contributing to l_i in this batch

  Eigen::Index size() const { return values.size(); }
};

struct WrapWeights {
  Vector o;
  double floor = kDefaultWeightFloor;

  static WrapWeights ones(Eigen::Index c, double floor = kDefaultWeightFloor) {
    return {Vector::Ones(c), floor};
  }
  Eigen::Index size() const { return o.size(); }
};

struct SigmaVector {
  Vector sigma;
};

struct LossReport {
  double original_total = 0.0;
  double wrapped_total = 0.0;
  PerOutputLosses per_output;
  Vector o;
};

struct SigmaNll {
  double value = 0.0;
  Vector grad;  // d/d sigma_i
};

enum class LossKind { kSquared, kCrossEntropy };

namespace detail {

inline void check_weights(const WrapWeights& w, Eigen::Index c) {
  require(w.floor > 0.0, ErrorKind::kDomain, "weight floor must be positive");
  require(w.o.size() == c, ErrorKind::kShape,
          "weight vector has length " + std::to_string(w.o.size()) +
              ", expected " + std::to_string(c));
  for (Eigen::Index i = 0; i < c; ++i) {
    require(std::isfinite(w.o[i]) && w.o[i] >= w.floor, ErrorKind::kDomain,
            "o[" + std::to_string(i) + "] = " + std::to_string(w.o[i]) +
                " is below the floor");
  }
}

}  // namespace detail

inline PerOutputLosses per_output_squared_error(const Matrix& targets,
                                                const Matrix& outputs) {
  detail::require(targets.rows() == outputs.rows() &&
                      targets.cols() == outputs.cols() && targets.rows() > 0,
                  ErrorKind::kShape, "targets and outputs must have equal shape");
  PerOutputLosses out;
  out.values = (targets - outputs).cwiseAbs2().colwise().mean().transpose();
  out.coverage.assign(targets.cols(), static_cast<long>(targets.rows()));
  return out;
}

// Class-mean cross entropy. Classes absent from the batch take the carried
// value (coverage 0) or 0 without a carry.
inline PerOutputLosses per_class_cross_entropy(
    std::span<const int> labels, const Matrix& probs,
    const std::optional<PerOutputLosses>& carry = std::nullopt) {
  using detail::require;
  const Eigen::Index c = probs.cols();
  require(static_cast<Eigen::Index>(labels.size()) == probs.rows(),
          ErrorKind::kShape, "label count does not match probability rows");
  if (carry) {
    require(carry->values.size() == c, ErrorKind::kShape,
            "carried losses have wrong length");
  }
  PerOutputLosses out;
  out.values = Vector::Zero(c);
  out.coverage.assign(c, 0);
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const int y = labels[r];
    require(y >= 0 && y < c, ErrorKind::kLabel,
            "label " + std::to_string(y) + " out of range [0, " +
                std::to_string(c) + ")");
    const double row_sum = probs.row(r).sum();
    require(std::abs(row_sum - 1.0) <= 1e-9 && probs.row(r).minCoeff() >= 0.0,
            ErrorKind::kProbability,
            "row " + std::to_string(r) + " is not a probability vector");
    const double p = std::max(probs(r, y), std::numeric_limits<double>::min());
    out.values[y] -= std::log(p);
    out.coverage[y] += 1;
  }
  for (Eigen::Index i = 0; i < c; ++i) {
    if (out.coverage[i] > 0) {
      out.values[i] /= static_cast<double>(out.coverage[i]);
    } else if (carry) {
      out.values[i] = carry->values[i];
    }
  }
  return out;
}

inline LossReport wrapped_total(const WrapWeights& o,
                                const PerOutputLosses& losses) {
  detail::check_weights(o, losses.size());
  LossReport report;
  for (Eigen::Index i = 0; i < losses.size(); ++i) {
    report.original_total += losses.values[i];
    report.wrapped_total += o.o[i] * losses.values[i] + std::log(1.0 / o.o[i]);
  }
  report.per_output = losses;
  report.o = o.o;
  return report;
}

// Static-weight loss without the log regularizer (weighted least squares form).
inline LossReport weighted_total(const Vector& weights,
                                 const PerOutputLosses& losses) {
  detail::require(weights.size() == losses.size(), ErrorKind::kShape,
                  "weight vector length does not match losses");
  LossReport report;
  report.original_total = losses.values.sum();
  report.wrapped_total = weights.dot(losses.values);
  report.per_output = losses;
  report.o = weights;
  return report;
}

inline Vector grad_wrapped_wrt_o(const WrapWeights& o,
                                 const PerOutputLosses& losses) {
  detail::check_weights(o, losses.size());
  return (losses.values.array() - o.o.array().inverse()).matrix();
}

// Gradient of sum_i w_i * mean_batch (f_i - y_i)^2 with respect to the outputs.
inline Matrix weighted_output_grad(const Vector& weights, const Matrix& targets,
                                   const Matrix& outputs) {
  detail::require(targets.rows() == outputs.rows() &&
                      targets.cols() == outputs.cols(),
                  ErrorKind::kShape, "targets and outputs must have equal shape");
  detail::require(weights.size() == outputs.cols(), ErrorKind::kShape,
                  "weight vector length does not match output width");
  const double batch = static_cast<double>(outputs.rows());
  Matrix g(outputs.rows(), outputs.cols());
  for (Eigen::Index c = 0; c < outputs.cols(); ++c) {
    const double w2 = weights[c] * 2.0;
    for (Eigen::Index r = 0; r < outputs.rows(); ++r) {
      g(r, c) = w2 * (outputs(r, c) - targets(r, c)) / batch;
    }
  }
  return g;
}

// Gradient with respect to softmax logits of (1/B) sum_s w_{y_s} * -log p_{y_s}.
inline Matrix weighted_logit_grad(const Vector& weights,
                                  std::span<const int> labels,
                                  const Matrix& probs) {
  using detail::require;
  require(static_cast<Eigen::Index>(labels.size()) == probs.rows(),
          ErrorKind::kShape, "label count does not match probability rows");
  require(weights.size() == probs.cols(), ErrorKind::kShape,
          "weight vector length does not match class count");
  const double batch = static_cast<double>(probs.rows());
  Matrix g = probs;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const int y = labels[r];
    require(y >= 0 && y < probs.cols(), ErrorKind::kLabel,
            "label " + std::to_string(y) + " out of range");
    g(r, y) -= 1.0;
    g.row(r) *= weights[y] / batch;
  }
  return g;
}

inline Matrix wrapped_output_grad(const WrapWeights& o, const Matrix& targets,
                                  const Matrix& outputs) {
  detail::check_weights(o, outputs.cols());
  return weighted_output_grad(o.o, targets, outputs);
}

inline Matrix wrapped_output_grad(const WrapWeights& o,
                                  std::span<const int> labels,
                                  const Matrix& probs) {
  detail::check_weights(o, probs.cols());
  return weighted_logit_grad(o.o, labels, probs);
}

inline SigmaNll sigma_nll(const SigmaVector& s, const PerOutputLosses& losses) {
  detail::require(s.sigma.size() == losses.size(), ErrorKind::kShape,
                  "sigma length does not match losses");
  SigmaNll out;
  out.grad = Vector(s.sigma.size());
  for (Eigen::Index i = 0; i < s.sigma.size(); ++i) {
    const double sigma = s.sigma[i];
    detail::require(std::isfinite(sigma) && sigma > 0.0, ErrorKind::kDomain,
                    "sigma must be positive");
    const double var = sigma * sigma;
    const double l = losses.values[i];
    out.value += l / var + std::log(var);
    out.grad[i] = 2.0 / sigma - 2.0 * l / (var * sigma);
  }
  return out;
}

// weight_c = median(freq) / freq(c), freq(c) = count_c / total.
inline Vector median_frequency_weights(std::span<const long> class_counts) {
  detail::require(!class_counts.empty(), ErrorKind::kDegenerateClass,
                  "no classes");
  double total = 0.0;
  for (std::size_t i = 0; i < class_counts.size(); ++i) {
    detail::require(class_counts[i] > 0, ErrorKind::kDegenerateClass,
                    "class " + std::to_string(i) + " has no samples");
    total += static_cast<double>(class_counts[i]);
  }
  std::vector<double> freq(class_counts.size());
  for (std::size_t i = 0; i < freq.size(); ++i) {
    freq[i] = static_cast<double>(class_counts[i]) / total;
  }
  std::vector<double> sorted = freq;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 == 1 ? sorted[n / 2]
                                   : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  Vector w(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) w[i] = median / freq[i];
  return w;
}

}  // namespace wraploss
