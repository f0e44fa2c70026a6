#pragma once

// Dense feed-forward network with exact reverse-mode gradients.
//
// Batches are row-major in the logical sense: one sample per row, so a batch
// of n samples through a layer of width m yields an n x m matrix.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wraploss/errors.hpp"
#include "wraploss/random.hpp"

namespace wraploss {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { kRelu, kIdentity };
enum class Head { kLinear, kSoftmax };
enum class Mode { kTrain, kEval };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out

  Eigen::Index in_width() const { return weight.cols(); }
  Eigen::Index out_width() const { return weight.rows(); }
};

struct Network {
  std::vector<int> arch;
  std::vector<DenseLayer> layers;
  std::vector<Activation> hidden_activation;  // one per hidden layer
  std::vector<double> dropout;                // one per hidden layer
  Head head = Head::kLinear;

  int input_width() const { return arch.front(); }
  int output_width() const { return arch.back(); }
  std::size_t depth() const { return layers.size(); }
};

struct ForwardTrace {
  std::vector<Matrix> inputs;       // input to layer k
  std::vector<Matrix> pre;          // pre-activation of layer k
  std::vector<Matrix> masks;        // dropout mask of hidden layer k; empty if none
  Matrix outputs;                   // head output
};

struct ParamGrads {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
};

enum class OptimizerKind { kSgd, kAdagrad };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 0.01;
  double epsilon = 1e-8;
  ParamGrads accumulator;  // adagrad only; lazily shaped on first step
};

struct ForwardResult {
  Matrix outputs;
  ForwardTrace trace;
};

struct StepResult {
  Network net;
  OptimizerState opt;
};

// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      out(r, c) = std::exp(logits(r, c) - m);
      sum += out(r, c);
    }
    out.row(r) /= sum;
  }
  return out;
}

inline Network init_network(const std::vector<int>& arch, Head head,
                            const std::vector<double>& dropout,
                            std::uint64_t seed,
                            Activation hidden = Activation::kRelu) {
  using detail::require;
  require(arch.size() >= 2, ErrorKind::kArchitecture,
          "architecture needs at least input and output widths");
  for (int w : arch) {
    require(w > 0, ErrorKind::kArchitecture, "layer widths must be positive");
  }
  const std::size_t n_hidden = arch.size() - 2;
  require(dropout.empty() || dropout.size() == n_hidden,
          ErrorKind::kArchitecture,
          "dropout needs one rate per hidden layer (got " +
              std::to_string(dropout.size()) + ", expected " +
              std::to_string(n_hidden) + ")");
  for (double r : dropout) {
    require(r >= 0.0 && r < 1.0, ErrorKind::kArchitecture,
            "dropout rate must lie in [0, 1)");
  }

  Network net;
  net.arch = arch;
  net.head = head;
  net.hidden_activation.assign(n_hidden, hidden);
  net.dropout = dropout.empty() ? std::vector<double>(n_hidden, 0.0) : dropout;

  Engine rng = make_engine(seed, {0x1417});
  for (std::size_t k = 0; k + 1 < arch.size(); ++k) {
    const int in = arch[k];
    const int out = arch[k + 1];
    const double limit = std::sqrt(1.0 / in);
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{Matrix(out, in), Vector::Zero(out)};
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
    }
    net.layers.push_back(std::move(layer));
  }
  return net;
}

inline ForwardResult forward(const Network& net, const Matrix& batch, Mode mode,
                             std::uint64_t seed) {
  detail::require(batch.cols() == net.input_width(), ErrorKind::kShape,
                  "batch has " + std::to_string(batch.cols()) +
                      " columns, network expects " +
                      std::to_string(net.input_width()));
  ForwardTrace trace;
  const std::size_t depth = net.depth();
  trace.inputs.reserve(depth);
  trace.pre.reserve(depth);
  trace.masks.resize(depth);

  Engine rng = make_engine(seed, {0xd20f});
  Matrix x = batch;
  for (std::size_t k = 0; k < depth; ++k) {
    const DenseLayer& layer = net.layers[k];
    Matrix z = x * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    trace.inputs.push_back(std::move(x));
    trace.pre.push_back(z);

    if (k + 1 == depth) {
      x = net.head == Head::kSoftmax ? softmax_rows(z) : std::move(z);
      break;
    }
    if (net.hidden_activation[k] == Activation::kRelu) z = z.cwiseMax(0.0);
    const double rate = net.dropout[k];
    if (mode == Mode::kTrain && rate > 0.0) {
      std::bernoulli_distribution keep(1.0 - rate);
      const double scale = 1.0 / (1.0 - rate);
      Matrix mask(z.rows(), z.cols());
      for (Eigen::Index c = 0; c < mask.cols(); ++c) {
        for (Eigen::Index r = 0; r < mask.rows(); ++r) {
          mask(r, c) = keep(rng) ? scale : 0.0;
        }
      }
      z = z.cwiseProduct(mask);
      trace.masks[k] = std::move(mask);
    }
    x = std::move(z);
  }
  trace.outputs = x;
  return {std::move(x), std::move(trace)};
}

// Where the upstream gradient is taken: with respect to the head outputs, or
// (softmax head only) directly with respect to the logits feeding the softmax.
enum class GradientAt { kOutputs, kLogits };

// Reverse-mode gradient of sum_{rows} <output_grad, outputs>. Batch
// normalization is the caller's job: loss gradients already carry the 1/batch.
inline ParamGrads backward(const Network& net, const ForwardTrace& trace,
                           const Matrix& output_grad,
                           GradientAt at = GradientAt::kOutputs) {
  using detail::require;
  const std::size_t depth = net.depth();
  require(trace.pre.size() == depth && trace.inputs.size() == depth,
          ErrorKind::kShape, "trace depth does not match network");
  require(output_grad.rows() == trace.outputs.rows() &&
              output_grad.cols() == trace.outputs.cols(),
          ErrorKind::kShape, "output gradient shape does not match outputs");

  ParamGrads grads;
  grads.weight.resize(depth);
  grads.bias.resize(depth);

  Matrix delta;  // gradient wrt pre-activation of current layer
  if (net.head == Head::kSoftmax && at == GradientAt::kOutputs) {
    const Matrix& p = trace.outputs;
    const Vector dot = p.cwiseProduct(output_grad).rowwise().sum();
    delta = p.cwiseProduct(output_grad - dot.replicate(1, p.cols()));
  } else {
    delta = output_grad;
  }

  for (std::size_t k = depth; k-- > 0;) {
    grads.weight[k] = delta.transpose() * trace.inputs[k];
    grads.bias[k] = delta.colwise().sum().transpose();
    if (k == 0) break;
    Matrix upstream = delta * net.layers[k].weight;
    const std::size_t h = k - 1;
    if (trace.masks[h].size() != 0) upstream = upstream.cwiseProduct(trace.masks[h]);
    if (net.hidden_activation[h] == Activation::kRelu) {
      upstream = upstream.cwiseProduct(
          (trace.pre[h].array() > 0.0).cast<double>().matrix());
    }
    delta = std::move(upstream);
  }
  return grads;
}

inline std::size_t degrees_of_freedom(const Network& net) {
  std::size_t count = 0;
  for (const auto& layer : net.layers) {
    count += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
  }
  return count;
}

inline ParamGrads zeros_like(const Network& net) {
  ParamGrads g;
  for (const auto& layer : net.layers) {
    g.weight.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    g.bias.push_back(Vector::Zero(layer.bias.size()));
  }
  return g;
}

inline bool all_finite(const ParamGrads& g) {
  for (const auto& w : g.weight) {
    if (!w.allFinite()) return false;
  }
  for (const auto& b : g.bias) {
    if (!b.allFinite()) return false;
  }
  return true;
}

inline StepResult apply_grads(Network net, const ParamGrads& grads,
                              OptimizerState opt) {
  using detail::require;
  require(grads.weight.size() == net.depth() && grads.bias.size() == net.depth(),
          ErrorKind::kShape, "gradient depth does not match network");
  for (std::size_t k = 0; k < net.depth(); ++k) {
    require(grads.weight[k].rows() == net.layers[k].weight.rows() &&
                grads.weight[k].cols() == net.layers[k].weight.cols() &&
                grads.bias[k].size() == net.layers[k].bias.size(),
            ErrorKind::kShape, "gradient shape does not match layer " +
                                   std::to_string(k));
  }
  require(all_finite(grads), ErrorKind::kNumeric, "non-finite gradient entry");

  const double lr = opt.learning_rate;
  if (opt.kind == OptimizerKind::kSgd) {
    for (std::size_t k = 0; k < net.depth(); ++k) {
      net.layers[k].weight -= lr * grads.weight[k];
      net.layers[k].bias -= lr * grads.bias[k];
    }
    return {std::move(net), std::move(opt)};
  }

  if (opt.accumulator.weight.size() != net.depth()) {
    opt.accumulator = zeros_like(net);
  }
  const double eps = opt.epsilon;
  for (std::size_t k = 0; k < net.depth(); ++k) {
    Matrix& acc_w = opt.accumulator.weight[k];
    Vector& acc_b = opt.accumulator.bias[k];
    acc_w += grads.weight[k].cwiseAbs2();
    acc_b += grads.bias[k].cwiseAbs2();
    net.layers[k].weight.array() -=
        lr * grads.weight[k].array() / (acc_w.array() + eps).sqrt();
    net.layers[k].bias.array() -=
        lr * grads.bias[k].array() / (acc_b.array() + eps).sqrt();
  }
  return {std::move(net), std::move(opt)};
}

// Parameter flattening: layer by layer, weights (column-major) then biases.
inline std::vector<double> flatten(const Network& net) {
  std::vector<double> out;
  out.reserve(degrees_of_freedom(net));
  for (const auto& layer : net.layers) {
    out.insert(out.end(), layer.weight.data(),
               layer.weight.data() + layer.weight.size());
    out.insert(out.end(), layer.bias.data(),
               layer.bias.data() + layer.bias.size());
  }
  return out;
}

inline std::vector<double> flatten(const ParamGrads& g) {
  std::vector<double> out;
  for (std::size_t k = 0; k < g.weight.size(); ++k) {
    out.insert(out.end(), g.weight[k].data(),
               g.weight[k].data() + g.weight[k].size());
    out.insert(out.end(), g.bias[k].data(), g.bias[k].data() + g.bias[k].size());
  }
  return out;
}

inline Network with_params(Network net, std::span<const double> params) {
  detail::require(params.size() == degrees_of_freedom(net), ErrorKind::kShape,
                  "parameter vector length does not match network");
  std::size_t pos = 0;
  for (auto& layer : net.layers) {
    std::copy_n(params.begin() + pos, layer.weight.size(), layer.weight.data());
    pos += layer.weight.size();
    std::copy_n(params.begin() + pos, layer.bias.size(), layer.bias.data());
    pos += layer.bias.size();
  }
  return net;
}

}  // namespace wraploss
