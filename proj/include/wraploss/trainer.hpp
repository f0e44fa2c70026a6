#pragma once

// Wrapped-loss training.
//
// Each mini-batch runs one pass of the loop body:
//   1. per-output losses l from the current network
//   2. o update (gradient step, assignment o = 1/l, or smoothed assignment)
//   3. output gradient of the wrapped loss using the *new* o
//   4. backward + optimizer step on the network weights
// An epoch is one full shuffled pass over the training set.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "wraploss/core_nn.hpp"
#include "wraploss/datagen.hpp"
#include "wraploss/errors.hpp"
#include "wraploss/io.hpp"
#include "wraploss/losses.hpp"
#include "wraploss/random.hpp"

namespace wraploss {

enum class OMode { kOff, kGradient, kAssignment, kSmoothed };
enum class Metric { kRmse, kOriginalLoss, kAccuracy };

inline bool higher_is_better(Metric m) { return m == Metric::kAccuracy; }

struct TrainConfig {
  int epochs = 100;  // t_max
  double learning_rate = 0.01;
  int batch_size = 10;
  OptimizerKind optimizer = OptimizerKind::kAdagrad;
  LossKind loss = LossKind::kSquared;
  OMode o_mode = OMode::kAssignment;
  double beta = 0.5;  // smoothed mode only
  std::optional<Vector> static_weights;
  double o_floor = kDefaultWeightFloor;
  double convergence_tol = 1e-5;
  int patience = 50;
  std::uint64_t seed = 1;
  Metric eval_metric = Metric::kRmse;
};

// Every violation, not just the first.
inline std::vector<std::string> validate(const TrainConfig& cfg) {
  std::vector<std::string> v;
  if (!(cfg.epochs >= 1)) v.push_back("train.epochs must be >= 1");
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    v.push_back("train.learning_rate must be > 0");
  }
  if (!(cfg.batch_size >= 1)) v.push_back("train.batch_size must be >= 1");
  if (cfg.o_mode == OMode::kSmoothed && !(cfg.beta > 0.0 && cfg.beta < 1.0)) {
    v.push_back("train.beta must lie in (0, 1) for smoothed mode");
  }
  if (!(cfg.o_floor > 0.0)) v.push_back("train.o_floor must be > 0");
  if (!(cfg.convergence_tol > 0.0)) v.push_back("train.convergence_tol must be > 0");
  if (!(cfg.patience >= 1)) v.push_back("train.patience must be >= 1");
  if (cfg.static_weights) {
    if (cfg.o_mode != OMode::kOff) {
      v.push_back("train.static_weights requires train.o_mode = off");
    }
    for (Eigen::Index i = 0; i < cfg.static_weights->size(); ++i) {
      if (!((*cfg.static_weights)[i] > 0.0)) {
        v.push_back("train.static_weights entries must be > 0");
        break;
      }
    }
  }
  if (cfg.loss == LossKind::kSquared && cfg.eval_metric == Metric::kAccuracy) {
    v.push_back("accuracy metric requires the cross-entropy loss");
  }
  return v;
}

struct TrainState {
  Network net;
  WrapWeights o;
  OptimizerState opt;
  int epoch = 0;  // completed epochs
};

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double train_wrapped = 0.0;
  double train_original = 0.0;
  double eval_metric = 0.0;
  double o_min = 0.0;
  double o_max = 0.0;
  double o_mean = 0.0;
  std::vector<double> per_class_accuracy;  // classification only
};

struct Batch {
  Matrix X;
  Matrix Y;
  std::vector<int> labels;
};

struct BatchEvent {
  int epoch = 0;
  int batch = 0;
  const PerOutputLosses& losses;
  const WrapWeights& o;  // after the update
  const LossReport& report;
};

struct TrainHooks {
  std::function<void(const BatchEvent&)> on_batch;
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  Network net;
  WrapWeights o;
  std::vector<EpochMetrics> history;
  bool converged = false;
};

namespace detail {

inline double safe_inverse(double loss, double floor) {
  return 1.0 / std::max(loss, floor);
}

}  // namespace detail

// One o update. Outputs with zero coverage keep their weight. Values pushed
// below the floor are clamped and counted in `clamped`.
inline WrapWeights update_wrap_weights(const WrapWeights& o,
                                       const PerOutputLosses& losses, OMode mode,
                                       double alpha, double beta = 0.5,
                                       int* clamped = nullptr) {
  detail::require(o.size() == losses.size(), ErrorKind::kShape,
                  "weight and loss lengths differ");
  WrapWeights next = o;
  if (mode == OMode::kOff) return next;
  int n_clamped = 0;
  for (Eigen::Index i = 0; i < o.size(); ++i) {
    if (!losses.coverage.empty() && losses.coverage[i] == 0) continue;
    const double l = losses.values[i];
    double v = o.o[i];
    switch (mode) {
      case OMode::kGradient:
        v = o.o[i] - alpha * (l - 1.0 / o.o[i]);
        break;
      case OMode::kAssignment:
        v = detail::safe_inverse(l, o.floor);
        break;
      case OMode::kSmoothed:
        v = (1.0 - beta) * o.o[i] + beta * detail::safe_inverse(l, o.floor);
        break;
      case OMode::kOff:
        break;
    }
    if (!(v >= o.floor)) {  // also catches NaN
      v = o.floor;
      ++n_clamped;
    }
    next.o[i] = v;
  }
  if (clamped) *clamped += n_clamped;
  return next;
}

// Deterministic sample order for one epoch.
inline std::vector<Eigen::Index> batch_order(Eigen::Index n, std::uint64_t seed,
                                             int epoch) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Engine rng = make_engine(seed, {0x5a11, static_cast<std::uint64_t>(epoch)});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

inline std::uint64_t dropout_seed(std::uint64_t seed, int epoch, int batch) {
  return derive_seed(seed, {0xd0, static_cast<std::uint64_t>(epoch),
                            static_cast<std::uint64_t>(batch)});
}

inline Batch gather_batch(const Dataset& d, std::span<const Eigen::Index> rows) {
  Dataset sub = select_rows(d, rows);
  return {std::move(sub.X), std::move(sub.Y), std::move(sub.labels)};
}

inline TrainState initial_state(Network net, const TrainConfig& cfg) {
  const int c = net.output_width();
  TrainState s;
  s.o = WrapWeights::ones(c, cfg.o_floor);
  if (cfg.static_weights) {
    detail::require(cfg.static_weights->size() == c, ErrorKind::kShape,
                    "static weights length does not match output width");
    s.o.o = *cfg.static_weights;
  }
  s.opt.kind = cfg.optimizer;
  s.opt.learning_rate = cfg.learning_rate;
  s.net = std::move(net);
  return s;
}

struct StepOutcome {
  TrainState state;
  PerOutputLosses losses;
  LossReport report;
  int clamped = 0;
};

inline StepOutcome train_step(TrainState state, const Batch& batch,
                              const TrainConfig& cfg, std::uint64_t step_seed,
                              const std::optional<PerOutputLosses>& carry =
                                  std::nullopt) {
  auto [outputs, trace] = forward(state.net, batch.X, Mode::kTrain, step_seed);
  StepOutcome out;
  out.losses = cfg.loss == LossKind::kSquared
                   ? per_output_squared_error(batch.Y, outputs)
                   : per_class_cross_entropy(batch.labels, outputs, carry);

  const bool fixed_weights = cfg.static_weights.has_value();
  if (!fixed_weights) {
    state.o = update_wrap_weights(state.o, out.losses, cfg.o_mode,
                                  cfg.learning_rate, cfg.beta, &out.clamped);
  }
  out.report = fixed_weights ? weighted_total(state.o.o, out.losses)
                             : wrapped_total(state.o, out.losses);

  Matrix out_grad;
  GradientAt at = GradientAt::kOutputs;
  if (cfg.loss == LossKind::kSquared) {
    out_grad = weighted_output_grad(state.o.o, batch.Y, outputs);
  } else {
    out_grad = weighted_logit_grad(state.o.o, batch.labels, outputs);
    at = GradientAt::kLogits;
  }
  const ParamGrads grads = backward(state.net, trace, out_grad, at);
  auto step = apply_grads(std::move(state.net), grads, std::move(state.opt));
  state.net = std::move(step.net);
  state.opt = std::move(step.opt);
  out.state = std::move(state);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation (always with o = 1 semantics: the reported loss is the original)

inline double evaluate(const Network& net, const Dataset& data, Metric metric) {
  using detail::require;
  require(data.input_dim() == net.input_width(), ErrorKind::kShape,
          "dataset feature count does not match network");
  require(data.num_outputs == net.output_width(), ErrorKind::kShape,
          "dataset output count does not match network");
  const Matrix out = forward(net, data.X, Mode::kEval, 0).outputs;
  switch (metric) {
    case Metric::kRmse: {
      require(!data.is_classification(), ErrorKind::kConfig,
              "rmse needs a regression dataset");
      return std::sqrt((data.Y - out).cwiseAbs2().mean());
    }
    case Metric::kOriginalLoss: {
      if (data.is_classification()) {
        require(net.head == Head::kSoftmax, ErrorKind::kConfig,
                "cross-entropy needs a softmax head");
        return per_class_cross_entropy(data.labels, out).values.sum();
      }
      return per_output_squared_error(data.Y, out).values.sum();
    }
    case Metric::kAccuracy: {
      require(net.head == Head::kSoftmax && data.is_classification(),
              ErrorKind::kConfig, "accuracy needs a softmax head and labels");
      long correct = 0;
      for (Eigen::Index r = 0; r < out.rows(); ++r) {
        Eigen::Index arg = 0;
        out.row(r).maxCoeff(&arg);
        if (arg == data.labels[r]) ++correct;
      }
      return static_cast<double>(correct) / static_cast<double>(out.rows());
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

// Fraction correct per true label; classes absent from `data` report 0.
inline std::vector<double> per_class_accuracy(const Network& net,
                                              const Dataset& data) {
  detail::require(net.head == Head::kSoftmax && data.is_classification(),
                  ErrorKind::kConfig,
                  "per-class accuracy needs a softmax head and labels");
  const Matrix out = forward(net, data.X, Mode::kEval, 0).outputs;
  std::vector<long> hit(data.num_outputs, 0), total(data.num_outputs, 0);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    Eigen::Index arg = 0;
    out.row(r).maxCoeff(&arg);
    total[data.labels[r]] += 1;
    if (arg == data.labels[r]) hit[data.labels[r]] += 1;
  }
  std::vector<double> acc(data.num_outputs, 0.0);
  for (int k = 0; k < data.num_outputs; ++k) {
    if (total[k] > 0) acc[k] = static_cast<double>(hit[k]) / static_cast<double>(total[k]);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Convergence and epoch-of-best

// True iff the best train wrapped loss has gone `patience` consecutive epochs
// without improving by at least tol * |best|. An improvement of exactly the
// tolerance counts.
inline bool has_converged(const std::vector<EpochMetrics>& history, double tol,
                          int patience) {
  detail::require(tol > 0.0 && patience >= 1, ErrorKind::kDomain,
                  "convergence needs tol > 0 and patience >= 1");
  if (history.empty()) return false;
  double best = history.front().train_wrapped;
  int since = 0;
  for (std::size_t e = 1; e < history.size(); ++e) {
    const double v = history[e].train_wrapped;
    if (v <= best - tol * std::abs(best)) {
      best = v;
      since = 0;
    } else {
      ++since;
    }
  }
  return since >= patience;
}

// 1-based epoch of the best eval metric; earliest epoch wins ties.
inline int epoch_of_best(const std::vector<EpochMetrics>& history,
                         bool maximize) {
  if (history.empty()) return 0;
  std::size_t best = 0;
  for (std::size_t e = 1; e < history.size(); ++e) {
    const double v = history[e].eval_metric;
    const double b = history[best].eval_metric;
    if (maximize ? v > b : v < b) best = e;
  }
  return history[best].epoch;
}

inline const EpochMetrics& best_epoch_metrics(
    const std::vector<EpochMetrics>& history, bool maximize) {
  const int e = epoch_of_best(history, maximize);
  return history.at(static_cast<std::size_t>(e - 1));
}

// ---------------------------------------------------------------------------

inline TrainResult train(Network net, const Dataset& train_data,
                         const Dataset& eval_data, const TrainConfig& cfg,
                         const TrainHooks& hooks = {}) {
  using detail::require;
  if (auto violations = validate(cfg); !violations.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& v : violations) msg += "\n  - " + v;
    detail::fail(ErrorKind::kConfig, msg);
  }
  validate(train_data);
  validate(eval_data);
  require(train_data.input_dim() == net.input_width() &&
              train_data.num_outputs == net.output_width(),
          ErrorKind::kShape, "training data does not match network dims");
  const bool classification = cfg.loss == LossKind::kCrossEntropy;
  require(classification == train_data.is_classification(), ErrorKind::kConfig,
          "loss kind does not match dataset kind");
  require((net.head == Head::kSoftmax) == classification, ErrorKind::kConfig,
          "cross-entropy needs a softmax head; squared error a linear head");

  TrainState state = initial_state(std::move(net), cfg);
  TrainResult result;
  const Eigen::Index n = train_data.size();
  const auto bs = static_cast<Eigen::Index>(cfg.batch_size);
  std::optional<PerOutputLosses> carry;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = batch_order(n, cfg.seed, epoch);
    double sum_wrapped = 0.0;
    double sum_original = 0.0;
    int n_batches = 0;
    int clamped = 0;
    for (Eigen::Index start = 0; start < n; start += bs, ++n_batches) {
      const Eigen::Index len = std::min(bs, n - start);
      const Batch batch = gather_batch(
          train_data, std::span<const Eigen::Index>(order).subspan(
                          static_cast<std::size_t>(start),
                          static_cast<std::size_t>(len)));
      StepOutcome step =
          train_step(std::move(state), batch, cfg,
                     dropout_seed(cfg.seed, epoch, n_batches), carry);
      state = std::move(step.state);
      clamped += step.clamped;
      if (!std::isfinite(step.report.wrapped_total) ||
          !std::isfinite(step.report.original_total)) {
        std::string msg = "non-finite loss at epoch " + std::to_string(epoch) +
                          ", batch " + std::to_string(n_batches) + "; o = [";
        for (Eigen::Index i = 0; i < state.o.size(); ++i) {
          msg += (i ? ", " : "") + format_double(state.o.o[i]);
        }
        detail::fail(ErrorKind::kNumeric, msg + "]");
      }
      if (hooks.on_batch) {
        hooks.on_batch({epoch, n_batches, step.losses, state.o, step.report});
      }
      sum_wrapped += step.report.wrapped_total;
      sum_original += step.report.original_total;
      if (classification) carry = std::move(step.losses);
    }
    state.epoch = epoch;
    if (clamped > 0 && hooks.log) {
      hooks.log("epoch " + std::to_string(epoch) + ": clamped " +
                std::to_string(clamped) + " wrap weights to the floor");
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_wrapped = sum_wrapped / n_batches;
    m.train_original = sum_original / n_batches;
    m.eval_metric = evaluate(state.net, eval_data, cfg.eval_metric);
    m.o_min = state.o.o.minCoeff();
    m.o_max = state.o.o.maxCoeff();
    m.o_mean = state.o.o.mean();
    if (classification) m.per_class_accuracy = per_class_accuracy(state.net, eval_data);
    if (!std::isfinite(m.eval_metric)) {
      detail::fail(ErrorKind::kNumeric,
                   "non-finite eval metric at epoch " + std::to_string(epoch));
    }
    if (hooks.on_epoch) hooks.on_epoch(m);
    result.history.push_back(std::move(m));

    if (has_converged(result.history, cfg.convergence_tol, cfg.patience)) {
      result.converged = true;
      break;
    }
  }
  result.net = std::move(state.net);
  result.o = std::move(state.o);
  return result;
}

}  // namespace wraploss
