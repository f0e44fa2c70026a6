#pragma once

// Config-driven experiments: single runs and comparison grids.
//
// A run config is a JSON object with sections `data`, `network`, `train`
// plus a few top-level keys. Unknown keys anywhere are validation errors.
// All artifacts written here are byte-reproducible from the config.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "wraploss/analysis.hpp"
#include "wraploss/core_nn.hpp"
#include "wraploss/datagen.hpp"
#include "wraploss/errors.hpp"
#include "wraploss/io.hpp"
#include "wraploss/losses.hpp"
#include "wraploss/trainer.hpp"

namespace wraploss {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum class Task { kRegression, kClassification };

struct CsvSource {
  fs::path train;
  fs::path test;
  CsvSchema schema;
};

enum class StaticWeights { kNone, kExplicit, kMedianFrequency };

struct ExperimentConfig {
  std::string label = "run";
  Task task = Task::kRegression;
  std::variant<HeteroSpec, ImbalanceSpec, CsvSource> data;
  bool standardize = true;
  std::vector<int> hidden{32, 32};
  Activation activation = Activation::kRelu;
  std::vector<double> dropout;
  std::optional<std::uint64_t> init_seed;
  TrainConfig train;
  StaticWeights static_mode = StaticWeights::kNone;
  std::vector<Metric> metrics;  // first one drives epoch-of-best
  std::optional<int> adjusted_class;
  std::optional<fs::path> output_dir;
  json raw;  // config echo
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) error("", "must be a JSON object");
  }

  bool has(const std::string& key) const {
    return j_.is_object() && j_.contains(key);
  }

  template <typename T>
  bool read(const std::string& key, T& out) {
    if (!has(key)) return false;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
      return true;
    } catch (const json::exception&) {
      error(key, "has the wrong type");
      return false;
    }
  }

  const json* object(const std::string& key) {
    if (!has(key)) return nullptr;
    seen_.insert(key);
    const json& v = j_.at(key);
    if (!v.is_object()) {
      error(key, "must be a JSON object");
      return nullptr;
    }
    return &v;
  }

  const json* raw(const std::string& key) {
    if (!has(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  void error(const std::string& key, const std::string& what) {
    errors_.push_back(field(key) + " " + what);
  }

  std::string field(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() {
    if (!j_.is_object()) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) errors_.push_back("unknown key " + field(key));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

template <typename Enum>
bool parse_enum(ObjectReader& r, const std::string& key,
                const std::map<std::string, Enum>& names, Enum& out) {
  std::string s;
  if (!r.read(key, s)) return false;
  auto it = names.find(s);
  if (it == names.end()) {
    std::string allowed;
    for (const auto& [n, _] : names) allowed += (allowed.empty() ? "" : "|") + n;
    r.error(key, "must be one of " + allowed + " (got '" + s + "')");
    return false;
  }
  out = it->second;
  return true;
}

inline const std::map<std::string, Metric>& metric_names() {
  static const std::map<std::string, Metric> m{
      {"rmse", Metric::kRmse},
      {"original_loss", Metric::kOriginalLoss},
      {"accuracy", Metric::kAccuracy}};
  return m;
}

inline std::string metric_name(Metric m) {
  for (const auto& [n, v] : metric_names()) {
    if (v == m) return n;
  }
  return "?";
}

inline std::string o_mode_name(OMode m) {
  switch (m) {
    case OMode::kOff: return "off";
    case OMode::kGradient: return "gradient";
    case OMode::kAssignment: return "assignment";
    case OMode::kSmoothed: return "smoothed";
  }
  return "?";
}

inline HeteroSpec parse_hetero(const json& j, std::vector<std::string>& errors) {
  ObjectReader r(j, "data.synthetic_regression", errors);
  HeteroSpec s;
  r.read("input_dim", s.input_dim);
  r.read("output_dim", s.output_dim);
  parse_enum(r, "map",
             std::map<std::string, TrueMap>{{"linear", TrueMap::kLinear},
                                            {"tanh_mixture", TrueMap::kTanhMixture}},
             s.map);
  if (!r.read("sigma", s.sigma)) s.sigma.assign(s.output_dim, 1.0);
  r.read("n_train", s.n_train);
  r.read("n_test", s.n_test);
  r.read("mixture_units", s.mixture_units);
  r.read("seed", s.seed);
  r.finish();
  if (s.input_dim < 1) r.error("input_dim", "must be >= 1");
  if (s.output_dim < 1) r.error("output_dim", "must be >= 1");
  if (static_cast<int>(s.sigma.size()) != s.output_dim) {
    r.error("sigma", "needs one entry per output");
  }
  for (double v : s.sigma) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      r.error("sigma", "entries must be finite and >= 0");
      break;
    }
  }
  if (s.n_train < 1) r.error("n_train", "must be >= 1");
  if (s.n_test < 1) r.error("n_test", "must be >= 1");
  if (s.mixture_units < 1) r.error("mixture_units", "must be >= 1");
  return s;
}

inline ImbalanceSpec parse_imbalance(const json& j, std::optional<int>& adjusted,
                                     std::vector<std::string>& errors) {
  ObjectReader r(j, "data.synthetic_classification", errors);
  ImbalanceSpec s;
  r.read("num_classes", s.num_classes);
  r.read("input_dim", s.input_dim);
  r.read("separation", s.separation);
  r.read("spread", s.spread);
  r.read("base_per_class", s.base_per_class);
  r.read("test_per_class", s.test_per_class);
  r.read("retention", s.retention);
  r.read("seed", s.seed);
  int adj = -1;
  double adj_retention = 1.0;
  const bool has_adj = r.read("adjusted_class", adj);
  const bool has_adj_ret = r.read("adjusted_retention", adj_retention);
  r.finish();
  if (s.num_classes < 2) r.error("num_classes", "must be >= 2");
  if (s.input_dim < 1) r.error("input_dim", "must be >= 1");
  if (!(s.spread > 0.0)) r.error("spread", "must be > 0");
  if (s.base_per_class < 1) r.error("base_per_class", "must be >= 1");
  if (s.test_per_class < 1) r.error("test_per_class", "must be >= 1");
  if (has_adj) {
    if (adj < 0 || adj >= s.num_classes) {
      r.error("adjusted_class", "out of range");
    } else {
      adjusted = adj;
      if (has_adj_ret) {
        if (!s.retention.empty()) {
          r.error("adjusted_retention", "conflicts with an explicit retention list");
        } else {
          s.retention.assign(s.num_classes, 1.0);
          s.retention[adj] = adj_retention;
        }
      }
    }
  } else if (has_adj_ret) {
    r.error("adjusted_retention", "requires adjusted_class");
  }
  if (!s.retention.empty()) {
    if (static_cast<int>(s.retention.size()) != s.num_classes) {
      r.error("retention", "needs one entry per class");
    }
    for (double v : s.retention) {
      if (!(v > 0.0 && v <= 1.0)) {
        r.error("retention", "entries must lie in (0, 1]");
        break;
      }
      if (std::lround(s.base_per_class * v) < 1) {
        r.error("retention", "leaves a class with no samples");
        break;
      }
    }
  }
  return s;
}

inline CsvSource parse_csv(const json& j, const fs::path& base_dir,
                           std::vector<std::string>& errors) {
  ObjectReader r(j, "data.csv", errors);
  CsvSource src;
  std::string train, test;
  if (!r.read("train", train)) r.error("train", "is required");
  if (!r.read("test", test)) r.error("test", "is required");
  src.train = fs::path(train).is_absolute() ? fs::path(train) : base_dir / train;
  src.test = fs::path(test).is_absolute() ? fs::path(test) : base_dir / test;
  r.read("target_columns", src.schema.target_columns);
  std::string label;
  if (r.read("label_column", label)) src.schema.label_column = label;
  int nc = 0;
  if (r.read("num_classes", nc)) src.schema.num_classes = nc;
  std::string delim;
  if (r.read("delimiter", delim)) {
    if (delim.size() != 1) {
      r.error("delimiter", "must be a single character");
    } else {
      src.schema.delimiter = delim[0];
    }
  }
  r.read("header", src.schema.header);
  r.finish();
  if (src.schema.label_column.has_value() == !src.schema.target_columns.empty()) {
    r.error("", "needs exactly one of target_columns or label_column");
  }
  if (!train.empty() && !fs::exists(src.train)) {
    r.error("train", "file does not exist: " + src.train.string());
  }
  if (!test.empty() && !fs::exists(src.test)) {
    r.error("test", "file does not exist: " + src.test.string());
  }
  return src;
}

}  // namespace detail

// Collects every violation and throws one config error listing them all.
inline ExperimentConfig parse_config(const json& j, const fs::path& base_dir = ".") {
  using detail::ObjectReader;
  std::vector<std::string> errors;
  ExperimentConfig cfg;
  cfg.raw = j;
  ObjectReader root(j, "", errors);

  root.read("label", cfg.label);
  detail::parse_enum(root, "task",
                     std::map<std::string, Task>{{"regression", Task::kRegression},
                                                 {"classification", Task::kClassification}},
                     cfg.task);
  int adjusted = -1;
  if (root.read("adjusted_class", adjusted)) cfg.adjusted_class = adjusted;
  std::string out_dir;
  if (root.read("output_dir", out_dir)) cfg.output_dir = out_dir;

  const bool classification = cfg.task == Task::kClassification;
  cfg.train.loss = classification ? LossKind::kCrossEntropy : LossKind::kSquared;

  // data
  if (const json* data = root.object("data")) {
    ObjectReader r(*data, "data", errors);
    int sources = 0;
    if (const json* s = r.object("synthetic_regression")) {
      cfg.data = detail::parse_hetero(*s, errors);
      ++sources;
      if (classification) r.error("synthetic_regression", "does not match task classification");
    }
    if (const json* s = r.object("synthetic_classification")) {
      cfg.data = detail::parse_imbalance(*s, cfg.adjusted_class, errors);
      ++sources;
      if (!classification) r.error("synthetic_classification", "does not match task regression");
    }
    if (const json* s = r.object("csv")) {
      cfg.data = detail::parse_csv(*s, base_dir, errors);
      ++sources;
    }
    r.read("standardize", cfg.standardize);
    r.finish();
    if (sources != 1) {
      r.error("", "needs exactly one of synthetic_regression, synthetic_classification, csv");
    }
  } else {
    root.error("data", "is required");
  }

  // network
  if (const json* net = root.object("network")) {
    ObjectReader r(*net, "network", errors);
    r.read("hidden", cfg.hidden);
    detail::parse_enum(r, "activation",
                       std::map<std::string, Activation>{{"relu", Activation::kRelu},
                                                         {"identity", Activation::kIdentity}},
                       cfg.activation);
    r.read("dropout", cfg.dropout);
    std::uint64_t s = 0;
    if (r.read("init_seed", s)) cfg.init_seed = s;
    r.finish();
    for (int w : cfg.hidden) {
      if (w < 1) {
        r.error("hidden", "widths must be >= 1");
        break;
      }
    }
    if (!cfg.dropout.empty() && cfg.dropout.size() != cfg.hidden.size()) {
      r.error("dropout", "needs one rate per hidden layer");
    }
    for (double d : cfg.dropout) {
      if (!(d >= 0.0 && d < 1.0)) {
        r.error("dropout", "rates must lie in [0, 1)");
        break;
      }
    }
  }

  // train
  if (const json* tr = root.object("train")) {
    ObjectReader r(*tr, "train", errors);
    TrainConfig& t = cfg.train;
    r.read("epochs", t.epochs);
    r.read("learning_rate", t.learning_rate);
    r.read("batch_size", t.batch_size);
    detail::parse_enum(r, "optimizer",
                       std::map<std::string, OptimizerKind>{{"sgd", OptimizerKind::kSgd},
                                                            {"adagrad", OptimizerKind::kAdagrad}},
                       t.optimizer);
    detail::parse_enum(r, "o_mode",
                       std::map<std::string, OMode>{{"off", OMode::kOff},
                                                    {"gradient", OMode::kGradient},
                                                    {"assignment", OMode::kAssignment},
                                                    {"smoothed", OMode::kSmoothed}},
                       t.o_mode);
    r.read("beta", t.beta);
    if (const json* sw = r.raw("static_weights")) {
      if (sw->is_string() && sw->get<std::string>() == "median_frequency") {
        cfg.static_mode = StaticWeights::kMedianFrequency;
        if (!classification) r.error("static_weights", "median_frequency needs task classification");
      } else if (sw->is_array()) {
        try {
          const auto w = sw->get<std::vector<double>>();
          t.static_weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
          cfg.static_mode = StaticWeights::kExplicit;
        } catch (const json::exception&) {
          r.error("static_weights", "must be an array of numbers");
        }
      } else {
        r.error("static_weights", "must be an array or \"median_frequency\"");
      }
    }
    r.read("o_floor", t.o_floor);
    r.read("convergence_tol", t.convergence_tol);
    r.read("patience", t.patience);
    r.read("seed", t.seed);
    r.finish();
    if (cfg.static_mode == StaticWeights::kMedianFrequency && t.o_mode != OMode::kOff) {
      r.error("static_weights", "requires o_mode = off");
    }
  }

  // metrics
  if (const json* m = root.raw("metrics")) {
    if (!m->is_array() || m->empty()) {
      root.error("metrics", "must be a non-empty array");
    } else {
      for (const auto& item : *m) {
        const auto it = item.is_string() ? detail::metric_names().find(item.get<std::string>())
                                         : detail::metric_names().end();
        if (it == detail::metric_names().end()) {
          root.error("metrics", "contains an unknown metric " + item.dump());
        } else {
          cfg.metrics.push_back(it->second);
        }
      }
    }
  }
  if (cfg.metrics.empty()) {
    cfg.metrics.push_back(classification ? Metric::kAccuracy : Metric::kRmse);
  }
  for (Metric m : cfg.metrics) {
    if (m == Metric::kAccuracy && !classification) {
      root.error("metrics", "accuracy needs task classification");
    }
    if (m == Metric::kRmse && classification) {
      root.error("metrics", "rmse needs task regression");
    }
  }
  cfg.train.eval_metric = cfg.metrics.front();
  root.finish();

  for (const auto& v : validate(cfg.train)) {
    if (v.find("accuracy metric") == std::string::npos) errors.push_back(v);
  }
  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  - " + e;
    detail::fail(ErrorKind::kConfig, msg);
  }
  return cfg;
}

inline json parse_json_text(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    detail::fail(ErrorKind::kParse, "malformed JSON in " + where + ": " + e.what());
  }
}

inline json load_json(const fs::path& path) {
  if (!fs::exists(path)) detail::fail(ErrorKind::kIo, "no such file: " + path.string());
  return parse_json_text(read_file(path), path.string());
}

inline ExperimentConfig load_config(const fs::path& path) {
  return parse_config(load_json(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Running

struct RunSummary {
  std::string label;
  bool ok = true;
  std::string error;
  ErrorKind error_kind = ErrorKind::kConfig;
  std::string eval_metric;
  double best_metric = 0.0;
  int epoch_of_best = 0;
  int epochs_run = 0;
  bool converged = false;
  double wall_time_s = 0.0;
  std::vector<double> final_o;
  std::size_t dof = 0;
  std::map<std::string, double> final_metrics;
  std::optional<int> adjusted_class;
  std::optional<double> adjusted_accuracy;  // at epoch of best
  std::optional<double> total_accuracy;     // at epoch of best
  std::vector<double> per_class_accuracy;   // at epoch of best
  std::optional<double> expected_wrap_estimate;
  double final_train_wrapped = 0.0;
  std::vector<EpochMetrics> history;
};

inline std::string sanitize_label(const std::string& label) {
  std::string s;
  for (char ch : label) {
    const bool keep = std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' ||
                      ch == '_' || ch == '.';
    s += keep ? ch : '_';
  }
  return s.empty() ? "run" : s;
}

inline std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,wrapped_loss,original_loss,eval_metric,o_min,o_max,o_mean\n";
  for (const auto& m : history) {
    out += std::to_string(m.epoch) + "," + format_double(m.train_wrapped) + "," +
           format_double(m.train_original) + "," + format_double(m.eval_metric) + "," +
           format_double(m.o_min) + "," + format_double(m.o_max) + "," +
           format_double(m.o_mean) + "\n";
  }
  return out;
}

inline json network_to_json(const Network& net, const WrapWeights& o) {
  json layers = json::array();
  for (const auto& layer : net.layers) {
    json w = json::array();
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      std::vector<double> row(layer.weight.cols());
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) row[c] = layer.weight(r, c);
      w.push_back(row);
    }
    layers.push_back({{"weight", w},
                      {"bias", std::vector<double>(layer.bias.data(),
                                                   layer.bias.data() + layer.bias.size())}});
  }
  return {{"arch", net.arch},
          {"head", net.head == Head::kSoftmax ? "softmax" : "linear"},
          {"dropout", net.dropout},
          {"layers", layers},
          {"o", std::vector<double>(o.o.data(), o.o.data() + o.o.size())}};
}

inline json summary_to_json(const RunSummary& s) {
  json j{{"label", s.label},
         {"ok", s.ok},
         {"eval_metric", s.eval_metric},
         {"best_metric", s.best_metric},
         {"epoch_of_best", s.epoch_of_best},
         {"epochs_run", s.epochs_run},
         {"converged", s.converged},
         {"final_o", s.final_o},
         {"dof", s.dof},
         {"final_metrics", s.final_metrics},
         {"final_train_wrapped", s.final_train_wrapped}};
  if (!s.ok) j["error"] = s.error;
  if (s.adjusted_class) j["adjusted_class"] = *s.adjusted_class;
  if (s.adjusted_accuracy) j["adjusted_accuracy"] = *s.adjusted_accuracy;
  if (s.total_accuracy) j["total_accuracy"] = *s.total_accuracy;
  if (!s.per_class_accuracy.empty()) j["per_class_accuracy"] = s.per_class_accuracy;
  if (s.expected_wrap_estimate) j["expected_wrap_estimate"] = *s.expected_wrap_estimate;
  return j;
}

struct LoadedData {
  DatasetSplit split;
  std::optional<std::vector<double>> sigma;  // synthetic regression only
};

inline LoadedData load_data(const ExperimentConfig& cfg) {
  LoadedData out;
  if (const auto* h = std::get_if<HeteroSpec>(&cfg.data)) {
    out.split = gen_heteroscedastic_regression(*h);
    out.sigma = h->sigma;
  } else if (const auto* im = std::get_if<ImbalanceSpec>(&cfg.data)) {
    out.split = gen_imbalanced_classification(*im);
  } else {
    const auto& csv = std::get<CsvSource>(cfg.data);
    out.split.train = load_csv_dataset(csv.train, csv.schema);
    CsvSchema test_schema = csv.schema;
    if (out.split.train.is_classification()) {
      test_schema.num_classes = out.split.train.num_outputs;
    }
    out.split.test = load_csv_dataset(csv.test, test_schema);
  }
  const bool classification = cfg.task == Task::kClassification;
  detail::require(out.split.train.is_classification() == classification,
                  ErrorKind::kConfig, "data kind does not match task");
  if (cfg.standardize) {
    auto s = standardize(out.split.train, out.split.test);
    out.split.train = std::move(s.train);
    out.split.test = std::move(s.test);
  }
  return out;
}

struct RunOutput {
  RunSummary summary;
  Network net;
  WrapWeights o;
};

// Trains one configuration in memory; no files are written.
inline RunOutput execute(const ExperimentConfig& cfg_in, const TrainHooks& hooks = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = cfg_in;
  const LoadedData data = load_data(cfg);
  const Dataset& train_set = data.split.train;
  const Dataset& test_set = data.split.test;
  const bool classification = cfg.task == Task::kClassification;

  std::vector<int> arch{static_cast<int>(train_set.input_dim())};
  arch.insert(arch.end(), cfg.hidden.begin(), cfg.hidden.end());
  arch.push_back(train_set.num_outputs);
  Network net = init_network(arch, classification ? Head::kSoftmax : Head::kLinear,
                             cfg.dropout, cfg.init_seed.value_or(cfg.train.seed),
                             cfg.activation);
  if (cfg.static_mode == StaticWeights::kMedianFrequency) {
    cfg.train.static_weights = median_frequency_weights(class_counts(train_set));
  }

  TrainResult tr = train(net, train_set, test_set, cfg.train, hooks);

  RunSummary s;
  s.label = cfg.label;
  s.eval_metric = detail::metric_name(cfg.train.eval_metric);
  const bool maximize = higher_is_better(cfg.train.eval_metric);
  s.epoch_of_best = epoch_of_best(tr.history, maximize);
  const EpochMetrics& best = best_epoch_metrics(tr.history, maximize);
  s.best_metric = best.eval_metric;
  s.epochs_run = static_cast<int>(tr.history.size());
  s.converged = tr.converged;
  s.final_o.assign(tr.o.o.data(), tr.o.o.data() + tr.o.o.size());
  s.dof = degrees_of_freedom(tr.net);
  s.final_train_wrapped = tr.history.back().train_wrapped;
  for (Metric m : cfg.metrics) {
    s.final_metrics[detail::metric_name(m)] = evaluate(tr.net, test_set, m);
  }
  if (classification) {
    s.per_class_accuracy = best.per_class_accuracy;
    s.adjusted_class = cfg.adjusted_class;
    if (cfg.train.eval_metric == Metric::kAccuracy) s.total_accuracy = best.eval_metric;
    if (cfg.adjusted_class && *cfg.adjusted_class < static_cast<int>(best.per_class_accuracy.size())) {
      s.adjusted_accuracy = best.per_class_accuracy[*cfg.adjusted_class];
    }
  } else if (data.sigma) {
    std::vector<double> var;
    for (double v : *data.sigma) var.push_back(v * v);
    if (std::all_of(var.begin(), var.end(), [](double v) { return v > 0.0; })) {
      s.expected_wrap_estimate = expected_wrap_estimate(
          static_cast<int>(var.size()), static_cast<double>(s.dof), var);
    }
  }
  s.history = std::move(tr.history);
  s.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(s), std::move(tr.net), std::move(tr.o)};
}

inline fs::path default_out_root() {
  if (const char* env = std::getenv("WRAPLOSS_OUT"); env && *env) return env;
  return "wraploss_out";
}

// Writes metrics.csv, summary.json and model.json under out_root/<label>/.
inline RunSummary run_experiment(const ExperimentConfig& cfg, const fs::path& out_root,
                                 const TrainHooks& hooks = {}) {
  RunOutput out = execute(cfg, hooks);
  const fs::path dir = out_root / sanitize_label(cfg.label);
  write_file_atomic(dir / "metrics.csv", metrics_csv(out.summary.history));
  json summary = summary_to_json(out.summary);
  summary["config"] = cfg.raw;
  write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");
  write_file_atomic(dir / "model.json", network_to_json(out.net, out.o).dump() + "\n");
  return out.summary;
}

// ---------------------------------------------------------------------------
// Comparison grids

struct PlannedRun {
  std::string label;
  std::string group;  // variant label; seeds of one variant share a group
  json config;
};

struct GroupStats {
  std::string group;
  int runs = 0;
  int failed = 0;
  double mean_best_metric = 0.0;
  double mean_epoch_of_best = 0.0;
  std::optional<double> mean_adjusted_accuracy;
  std::optional<double> mean_total_accuracy;
};

struct ComparisonReport {
  std::string label;
  std::vector<RunSummary> runs;
  std::vector<std::string> groups_of_runs;  // parallel to runs
  std::vector<GroupStats> groups;
  bool imbalance = false;

  bool all_ok() const {
    return std::all_of(runs.begin(), runs.end(), [](const RunSummary& r) { return r.ok; });
  }
  const GroupStats* group(const std::string& name) const {
    for (const auto& g : groups) {
      if (g.group == name) return &g;
    }
    return nullptr;
  }
};

namespace detail {

inline void set_dotted(json& j, const std::string& dotted, const json& value) {
  json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? dot : dot - start);
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

inline std::string value_label(const json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

}  // namespace detail

struct GridConfig {
  std::string label = "compare";
  std::optional<fs::path> output_dir;
  std::vector<PlannedRun> runs;
  fs::path base_dir;
};

// Grid forms: {"configs": [paths]} or {"base": {...} | "base_config": path,
// "variants": [{"label", "set": {dotted: value}}], "grid": {dotted: [values]}}.
// Runs are variants x cartesian(grid).
inline GridConfig parse_grid(const json& j, const fs::path& base_dir,
                             std::optional<std::uint64_t> seed_override = std::nullopt) {
  using detail::ObjectReader;
  std::vector<std::string> errors;
  ObjectReader r(j, "", errors);
  GridConfig g;
  g.base_dir = base_dir;
  r.read("label", g.label);
  std::string out;
  if (r.read("output_dir", out)) g.output_dir = out;

  std::vector<std::string> config_paths;
  const bool has_configs = r.read("configs", config_paths);
  json base;
  bool has_base = false;
  if (const json* b = r.object("base")) {
    base = *b;
    has_base = true;
  }
  std::string base_path;
  if (r.read("base_config", base_path)) {
    if (has_base) {
      r.error("base_config", "conflicts with base");
    } else {
      const fs::path p = fs::path(base_path).is_absolute() ? fs::path(base_path) : base_dir / base_path;
      base = load_json(p);
      has_base = true;
    }
  }
  const json* variants = r.raw("variants");
  const json* grid = r.object("grid");
  r.finish();

  auto apply_seed = [&](json& cfg) {
    if (seed_override) detail::set_dotted(cfg, "train.seed", *seed_override);
  };

  if (has_configs == has_base) {
    errors.push_back("grid needs exactly one of configs or base/base_config");
  } else if (has_configs) {
    for (const auto& p : config_paths) {
      const fs::path path = fs::path(p).is_absolute() ? fs::path(p) : base_dir / p;
      json cfg = load_json(path);
      apply_seed(cfg);
      const std::string label = cfg.value("label", path.stem().string());
      g.runs.push_back({label, label, std::move(cfg)});
    }
  } else {
    std::vector<std::pair<std::string, json>> vs;
    if (variants) {
      if (!variants->is_array()) {
        errors.push_back("variants must be an array");
      } else {
        for (const auto& v : *variants) {
          if (!v.is_object() || !v.contains("label") || !v["label"].is_string()) {
            errors.push_back("each variant needs a string label");
            continue;
          }
          for (const auto& [k, _] : v.items()) {
            if (k != "label" && k != "set") errors.push_back("unknown key variants." + k);
          }
          vs.emplace_back(v["label"].get<std::string>(), v.value("set", json::object()));
        }
      }
    } else {
      vs.emplace_back(base.value("label", "run"), json::object());
    }
    std::vector<std::pair<std::string, std::vector<json>>> axes;
    if (grid) {
      for (const auto& [k, vals] : grid->items()) {
        if (!vals.is_array() || vals.empty()) {
          errors.push_back("grid." + k + " must be a non-empty array");
        } else {
          axes.emplace_back(k, std::vector<json>(vals.begin(), vals.end()));
        }
      }
    }
    for (const auto& [vlabel, set] : vs) {
      std::vector<std::size_t> idx(axes.size(), 0);
      while (true) {
        json cfg = base;
        apply_seed(cfg);
        if (set.is_object()) {
          for (const auto& [k, val] : set.items()) detail::set_dotted(cfg, k, val);
        }
        std::string suffix;
        for (std::size_t a = 0; a < axes.size(); ++a) {
          const json& val = axes[a].second[idx[a]];
          detail::set_dotted(cfg, axes[a].first, val);
          const std::string key = axes[a].first.substr(axes[a].first.rfind('.') + 1);
          suffix += (suffix.empty() ? "" : ",") + key + "=" + detail::value_label(val);
        }
        const std::string label = suffix.empty() ? vlabel : vlabel + "[" + suffix + "]";
        cfg["label"] = label;
        // group: variant plus every non-seed axis
        std::string group = vlabel;
        for (std::size_t a = 0; a < axes.size(); ++a) {
          if (axes[a].first == "train.seed") continue;
          group += "," + axes[a].first + "=" + detail::value_label(axes[a].second[idx[a]]);
        }
        g.runs.push_back({label, group, std::move(cfg)});
        std::size_t a = 0;
        for (; a < axes.size(); ++a) {
          if (++idx[a] < axes[a].second.size()) break;
          idx[a] = 0;
        }
        if (a == axes.size()) break;
      }
    }
  }

  if (g.runs.size() < 2) errors.push_back("a comparison needs at least two runs");
  std::set<std::string> labels, dirs;
  for (const auto& run : g.runs) {
    if (!labels.insert(run.label).second) errors.push_back("duplicate run label " + run.label);
    if (!dirs.insert(sanitize_label(run.label)).second) {
      errors.push_back("run labels collide after sanitizing: " + run.label);
    }
  }
  if (!g.runs.empty()) {
    const json& data0 = g.runs.front().config.contains("data") ? g.runs.front().config["data"] : json();
    for (const auto& run : g.runs) {
      const json& d = run.config.contains("data") ? run.config["data"] : json();
      if (d != data0) {
        errors.push_back("run " + run.label + " does not share the eval data of " + g.runs.front().label);
      }
    }
  }
  // Validate every constituent config before anything runs.
  for (const auto& run : g.runs) {
    try {
      parse_config(run.config, base_dir);
    } catch (const Error& e) {
      errors.push_back("run " + run.label + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid comparison config:";
    for (const auto& e : errors) msg += "\n  - " + e;
    detail::fail(ErrorKind::kConfig, msg);
  }
  return g;
}

inline std::string report_csv(const ComparisonReport& rep) {
  std::string out =
      "label,group,ok,eval_metric,best_metric,epoch_of_best,epochs_run,o_min,o_max,o_mean";
  if (rep.imbalance) out += ",adj_accuracy,total_accuracy";
  out += "\n";
  for (std::size_t i = 0; i < rep.runs.size(); ++i) {
    const RunSummary& r = rep.runs[i];
    const auto& o = r.final_o;
    const double omin = o.empty() ? 0.0 : *std::min_element(o.begin(), o.end());
    const double omax = o.empty() ? 0.0 : *std::max_element(o.begin(), o.end());
    double omean = 0.0;
    for (double v : o) omean += v;
    if (!o.empty()) omean /= static_cast<double>(o.size());
    out += "\"" + r.label + "\",\"" + rep.groups_of_runs[i] + "\"," + (r.ok ? "1" : "0") + "," +
           r.eval_metric + "," + format_double(r.best_metric) + "," +
           std::to_string(r.epoch_of_best) + "," + std::to_string(r.epochs_run) + "," +
           format_double(omin) + "," + format_double(omax) + "," + format_double(omean);
    if (rep.imbalance) {
      out += "," + (r.adjusted_accuracy ? format_double(*r.adjusted_accuracy) : std::string()) +
             "," + (r.total_accuracy ? format_double(*r.total_accuracy) : std::string());
    }
    out += "\n";
  }
  return out;
}

inline json report_json(const ComparisonReport& rep) {
  json runs = json::array();
  for (std::size_t i = 0; i < rep.runs.size(); ++i) {
    json r = summary_to_json(rep.runs[i]);
    r["group"] = rep.groups_of_runs[i];
    runs.push_back(std::move(r));
  }
  json groups = json::array();
  for (const auto& g : rep.groups) {
    json jg{{"group", g.group},
            {"runs", g.runs},
            {"failed", g.failed},
            {"mean_best_metric", g.mean_best_metric},
            {"mean_epoch_of_best", g.mean_epoch_of_best}};
    if (g.mean_adjusted_accuracy) jg["mean_adjusted_accuracy"] = *g.mean_adjusted_accuracy;
    if (g.mean_total_accuracy) jg["mean_total_accuracy"] = *g.mean_total_accuracy;
    groups.push_back(std::move(jg));
  }
  return {{"label", rep.label}, {"runs", runs}, {"groups", groups}};
}

// Runs every planned config (up to `jobs` at a time) and writes report.csv,
// report.json (deterministic) and timings.json (wall clock) under
// out_root/<grid label>/. Constituent failures produce a partial report.
inline ComparisonReport compare(const GridConfig& grid, const fs::path& out_root,
                                int jobs = 1) {
  const fs::path dir = out_root / sanitize_label(grid.label);
  ComparisonReport rep;
  rep.label = grid.label;
  rep.runs.resize(grid.runs.size());
  for (const auto& run : grid.runs) rep.groups_of_runs.push_back(run.group);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < grid.runs.size(); i = next++) {
      const PlannedRun& run = grid.runs[i];
      RunSummary s;
      try {
        const ExperimentConfig cfg = parse_config(run.config, grid.base_dir);
        s = run_experiment(cfg, dir);
      } catch (const Error& e) {
        s.ok = false;
        s.error = e.what();
        s.error_kind = e.kind();
      } catch (const std::exception& e) {
        s.ok = false;
        s.error = e.what();
        s.error_kind = ErrorKind::kNumeric;
      }
      s.label = run.label;
      rep.runs[i] = std::move(s);
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(grid.runs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (const auto& r : rep.runs) {
    if (r.adjusted_class) rep.imbalance = true;
  }
  for (std::size_t i = 0; i < rep.runs.size(); ++i) {
    const std::string& name = rep.groups_of_runs[i];
    auto it = std::find_if(rep.groups.begin(), rep.groups.end(),
                           [&](const GroupStats& g) { return g.group == name; });
    if (it == rep.groups.end()) {
      GroupStats fresh;
      fresh.group = name;
      rep.groups.push_back(std::move(fresh));
      it = std::prev(rep.groups.end());
    }
    const RunSummary& r = rep.runs[i];
    if (!r.ok) {
      ++it->failed;
      continue;
    }
    const double n = ++it->runs;
    it->mean_best_metric += (r.best_metric - it->mean_best_metric) / n;
    it->mean_epoch_of_best += (r.epoch_of_best - it->mean_epoch_of_best) / n;
    if (r.adjusted_accuracy) {
      const double prev = it->mean_adjusted_accuracy.value_or(0.0);
      it->mean_adjusted_accuracy = prev + (*r.adjusted_accuracy - prev) / n;
    }
    if (r.total_accuracy) {
      const double prev = it->mean_total_accuracy.value_or(0.0);
      it->mean_total_accuracy = prev + (*r.total_accuracy - prev) / n;
    }
  }

  write_file_atomic(dir / "report.csv", report_csv(rep));
  write_file_atomic(dir / "report.json", report_json(rep).dump(2) + "\n");
  json timings = json::object();
  for (const auto& r : rep.runs) timings[r.label] = r.wall_time_s;
  write_file_atomic(dir / "timings.json", timings.dump(2) + "\n");
  return rep;
}

}  // namespace wraploss
