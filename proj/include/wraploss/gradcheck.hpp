#pragma once

// Randomized comparison of every analytic gradient against central finite
// differences. Networks have 1-3 layers, widths 1-5 and batches of 1-8.

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "wraploss/analysis.hpp"
#include "wraploss/core_nn.hpp"
#include "wraploss/losses.hpp"
#include "wraploss/random.hpp"

namespace wraploss {

struct GradCheckReport {
  int instances = 0;
  double step = 1e-5;
  std::map<std::string, double> max_rel_error;

  double worst() const {
    double w = 0.0;
    for (const auto& [_, v] : max_rel_error) w = std::max(w, v);
    return w;
  }
};

struct GradInstance {
  Network net;
  Matrix X;
  std::uint64_t dropout_seed = 0;
};

namespace detail {

inline Matrix random_matrix(Engine& rng, Eigen::Index r, Eigen::Index c,
                            double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
  }
  return m;
}

inline bool kink_free(const GradInstance& inst, double margin) {
  const auto res = forward(inst.net, inst.X, Mode::kTrain, inst.dropout_seed);
  for (std::size_t k = 0; k + 1 < inst.net.depth(); ++k) {
    if (inst.net.hidden_activation[k] != Activation::kRelu) continue;
    if ((res.trace.pre[k].array().abs() < margin).any()) return false;
  }
  return true;
}

}  // namespace detail

// Random network and batch whose relu pre-activations all sit at least
// `margin` away from the kink, so central differences are valid.
inline GradInstance random_instance(std::uint64_t seed, Head head, int out_width = 0,
                                    double margin = 1e-3) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    Engine rng = make_engine(seed, {0x6c, attempt});
    std::uniform_int_distribution<int> depth_d(1, 3), width_d(1, 5), batch_d(1, 8);
    const int depth = depth_d(rng);
    std::vector<int> arch{width_d(rng)};
    for (int k = 1; k < depth; ++k) arch.push_back(width_d(rng));
    arch.push_back(out_width > 0 ? out_width : std::max(2, width_d(rng)));
    std::vector<double> dropout(arch.size() - 2, 0.0);
    std::bernoulli_distribution use_dropout(0.3);
    for (double& r : dropout) r = use_dropout(rng) ? 0.25 : 0.0;
    GradInstance inst;
    inst.net = init_network(arch, head, dropout, rng());
    for (auto& layer : inst.net.layers) {
      layer.bias = detail::random_matrix(rng, layer.bias.size(), 1, -0.5, 0.5);
    }
    inst.X = detail::random_matrix(rng, batch_d(rng), arch.front(), -2.0, 2.0);
    inst.dropout_seed = rng();
    if (detail::kink_free(inst, margin)) return inst;
  }
}

inline GradCheckReport run_gradcheck(int instances, std::uint64_t seed,
                                     double step = 1e-5) {
  GradCheckReport rep;
  rep.instances = instances;
  rep.step = step;
  auto record = [&](const std::string& name, const std::vector<double>& a,
                    const std::vector<double>& b) {
    double& slot = rep.max_rel_error[name];
    slot = std::max(slot, relative_error(a, b));
  };
  auto to_vec = [](const Matrix& m) {
    return std::vector<double>(m.data(), m.data() + m.size());
  };

  for (int t = 0; t < instances; ++t) {
    const auto ts = static_cast<std::uint64_t>(t);
    Engine rng = make_engine(seed, {0x9c, ts});
    std::uniform_real_distribution<double> o_d(0.2, 3.0), sig_d(0.3, 3.0),
        l_d(0.1, 10.0);

    // core_nn.backward, both heads, against sum <G, outputs>
    for (Head head : {Head::kLinear, Head::kSoftmax}) {
      const GradInstance inst = random_instance(derive_seed(seed, {ts, 1}), head);
      const Matrix G = detail::random_matrix(rng, inst.X.rows(),
                                             inst.net.output_width(), -1.0, 1.0);
      auto J = [&](std::span<const double> p) {
        const Network n = with_params(inst.net, p);
        return forward(n, inst.X, Mode::kTrain, inst.dropout_seed)
            .outputs.cwiseProduct(G)
            .sum();
      };
      const auto res = forward(inst.net, inst.X, Mode::kTrain, inst.dropout_seed);
      const auto analytic = flatten(backward(inst.net, res.trace, G));
      const auto numeric = finite_diff_gradient(J, flatten(inst.net), step);
      record(head == Head::kLinear ? "core_nn.backward.linear"
                                   : "core_nn.backward.softmax",
             analytic, numeric);
    }

    // wrapped squared-error output gradient and its composition with backward
    {
      const GradInstance inst = random_instance(derive_seed(seed, {ts, 2}), Head::kLinear);
      const int c = inst.net.output_width();
      WrapWeights o{Vector(c), kDefaultWeightFloor};
      for (int i = 0; i < c; ++i) o.o[i] = o_d(rng);
      const Matrix Y = detail::random_matrix(rng, inst.X.rows(), c, -2.0, 2.0);
      const auto res = forward(inst.net, inst.X, Mode::kTrain, inst.dropout_seed);

      auto J_out = [&](std::span<const double> v) {
        const Matrix out = Eigen::Map<const Matrix>(v.data(), res.outputs.rows(),
                                                    res.outputs.cols());
        return wrapped_total(o, per_output_squared_error(Y, out)).wrapped_total;
      };
      const Matrix g_out = wrapped_output_grad(o, Y, res.outputs);
      record("losses.wrapped_output_grad.squared", to_vec(g_out),
             finite_diff_gradient(J_out, to_vec(res.outputs), step));

      auto J_w = [&](std::span<const double> p) {
        const Network n = with_params(inst.net, p);
        const Matrix out = forward(n, inst.X, Mode::kTrain, inst.dropout_seed).outputs;
        return wrapped_total(o, per_output_squared_error(Y, out)).wrapped_total;
      };
      record("composed.wrapped_wrt_w.squared",
             flatten(backward(inst.net, res.trace, g_out)),
             finite_diff_gradient(J_w, flatten(inst.net), step));
    }

    // weighted cross entropy through softmax
    {
      const GradInstance inst = random_instance(derive_seed(seed, {ts, 3}), Head::kSoftmax);
      const int c = inst.net.output_width();
      WrapWeights o{Vector(c), kDefaultWeightFloor};
      for (int i = 0; i < c; ++i) o.o[i] = o_d(rng);
      std::uniform_int_distribution<int> label_d(0, c - 1);
      std::vector<int> labels(static_cast<std::size_t>(inst.X.rows()));
      for (int& y : labels) y = label_d(rng);
      const auto res = forward(inst.net, inst.X, Mode::kTrain, inst.dropout_seed);
      const double batch = static_cast<double>(inst.X.rows());
      auto weighted_ce = [&](const Matrix& probs) {
        double v = 0.0;
        for (Eigen::Index r = 0; r < probs.rows(); ++r) {
          v -= o.o[labels[r]] * std::log(probs(r, labels[r]));
        }
        return v / batch;
      };

      auto J_logits = [&](std::span<const double> v) {
        const Matrix z = Eigen::Map<const Matrix>(v.data(), res.outputs.rows(),
                                                  res.outputs.cols());
        return weighted_ce(softmax_rows(z));
      };
      const Matrix g_logits = wrapped_output_grad(o, labels, res.outputs);
      record("losses.wrapped_output_grad.cross_entropy", to_vec(g_logits),
             finite_diff_gradient(J_logits, to_vec(res.trace.pre.back()), step));

      auto J_w = [&](std::span<const double> p) {
        const Network n = with_params(inst.net, p);
        return weighted_ce(forward(n, inst.X, Mode::kTrain, inst.dropout_seed).outputs);
      };
      record("composed.wrapped_wrt_w.cross_entropy",
             flatten(backward(inst.net, res.trace, g_logits, GradientAt::kLogits)),
             finite_diff_gradient(J_w, flatten(inst.net), step));
    }

    // d l_wrap / d o and d sigma-NLL / d sigma
    {
      std::uniform_int_distribution<int> c_d(1, 6);
      const int c = c_d(rng);
      PerOutputLosses losses{Vector(c), std::vector<long>(c, 1)};
      std::vector<double> o0(c), s0(c);
      for (int i = 0; i < c; ++i) {
        losses.values[i] = l_d(rng);
        o0[i] = o_d(rng);
        s0[i] = sig_d(rng);
      }
      auto J_o = [&](std::span<const double> v) {
        WrapWeights o{Eigen::Map<const Vector>(v.data(), c), kDefaultWeightFloor};
        return wrapped_total(o, losses).wrapped_total;
      };
      const Vector g_o = grad_wrapped_wrt_o(
          WrapWeights{Eigen::Map<const Vector>(o0.data(), c), kDefaultWeightFloor}, losses);
      record("losses.grad_wrapped_wrt_o",
             std::vector<double>(g_o.data(), g_o.data() + c),
             finite_diff_gradient(J_o, o0, step));

      auto J_s = [&](std::span<const double> v) {
        return sigma_nll(SigmaVector{Eigen::Map<const Vector>(v.data(), c)}, losses).value;
      };
      const SigmaNll s = sigma_nll(SigmaVector{Eigen::Map<const Vector>(s0.data(), c)}, losses);
      record("losses.sigma_nll", std::vector<double>(s.grad.data(), s.grad.data() + c),
             finite_diff_gradient(J_s, s0, step));
    }
  }
  return rep;
}

}  // namespace wraploss
