#pragma once

// Versioned JSON experiment configuration. Unknown keys and type mismatches are
// errors reported with their key path.

#include "ltlab/binning.hpp"
#include "ltlab/classifier.hpp"
#include "ltlab/core.hpp"
#include "ltlab/dataset.hpp"
#include "ltlab/inference.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace ltlab {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "config reader assumes a 64-bit size_t");

inline constexpr int kSchemaVersion = 1;

struct DataConfig {
  std::string source = "synthetic";  // synthetic | files
  GeneratorConfig generator;
  std::string train_path;
  std::string test_path;
};

struct PartitionConfig {
  std::string strategy = "fixed";  // fixed | clustered | random
  std::vector<std::uint64_t> thresholds = default_bin_thresholds();
  std::size_t clusters = 5;
};

struct ModelConfig {
  bool embed = false;
  std::string bias = "auto";  // auto | on | off; auto enables it for group-softmax heads only
  double init_std = 0.01;
};

struct InferenceConfig {
  std::string method = "auto";  // auto | softmax | bags | knn | cosine | euclidean
  double tau = 0.0;
  std::string knn_distance = "euclidean";  // euclidean | squared
};

struct ReportConfig {
  std::vector<double> tau_values{0.0, 0.5, 1.0};
  bool export_features = false;
  bool epoch_metrics = false;
};

struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  DataConfig data;
  FrequencyThresholds census;
  PartitionConfig partition;
  ModelConfig model;
  TrainConfig train;
  InferenceConfig inference;
  ReportConfig report;

  bool uses_partition() const {
    return train.loss.kind == LossKind::bags || resolved_method() == "bags";
  }
  bool head_bias() const {
    if (model.bias == "auto") return train.loss.kind == LossKind::bags;
    return model.bias == "on";
  }
  std::string resolved_method() const {
    if (inference.method != "auto") return inference.method;
    switch (train.loss.kind) {
      case LossKind::bags: return "bags";
      case LossKind::lmcl: return "cosine";
      case LossKind::ece: return "euclidean";
      default: return "softmax";
    }
  }
};

namespace detail {

inline bool is_count(const nlohmann::json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "/" : path_, "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  Reader child(const char* key) {
    seen_.insert(key);
    static const nlohmann::json kEmpty = nlohmann::json::object();
    return Reader(j_.contains(key) ? j_.at(key) : kEmpty, path_ + "/" + key);
  }

  void get(const char* key, bool& out) {
    if (const auto* v = take(key)) {
      if (!v->is_boolean()) fail(key, "expected a boolean");
      out = v->get<bool>();
    }
  }
  void get(const char* key, double& out) {
    if (const auto* v = take(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const auto* v = take(key)) {
      if (!is_count(*v)) fail(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, std::string& out, std::initializer_list<const char*> allowed = {}) {
    if (const auto* v = take(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
      if (allowed.size() > 0) {
        bool ok = false;
        std::string options;
        for (const char* a : allowed) {
          ok = ok || out == a;
          options += options.empty() ? a : std::string("|") + a;
        }
        if (!ok) fail(key, "expected one of " + options + ", got '" + out + "'");
      }
    }
  }
  void get(const char* key, std::vector<std::uint64_t>& out) {
    if (const auto* v = take(key)) {
      if (!v->is_array()) fail(key, "expected an array of non-negative integers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!is_count((*v)[i])) fail(key, "element " + std::to_string(i) + " is not a non-negative integer");
        out.push_back((*v)[i].get<std::uint64_t>());
      }
    }
  }
  void get(const char* key, std::vector<double>& out) {
    if (const auto* v = take(key)) {
      if (!v->is_array()) fail(key, "expected an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number()) fail(key, "element " + std::to_string(i) + " is not a number");
        out.push_back((*v)[i].get<double>());
      }
    }
  }

  /// Rejects keys that no getter consumed.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(path_ + "/" + key, "unknown key");
    }
  }

  [[noreturn]] void fail(const char* key, const std::string& what) const { throw ConfigError(path_ + "/" + key, what); }
  const std::string& path() const { return path_; }

 private:
  const nlohmann::json* take(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "ce") return LossKind::ce;
  if (s == "bags") return LossKind::bags;
  if (s == "center") return LossKind::center;
  if (s == "lmcl") return LossKind::lmcl;
  return LossKind::ece;
}

inline BagsMode parse_bags_mode(const std::string& s) {
  if (s == "weighted") return BagsMode::weighted;
  if (s == "focal") return BagsMode::focal;
  if (s == "hybrid") return BagsMode::hybrid;
  return BagsMode::plain;
}

template <class F>
void checked(const std::string& path, F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  detail::Reader root(j, "");
  std::uint64_t version = 0;
  root.get("schema_version", version);
  if (!root.has("schema_version")) throw ConfigError("/schema_version", "missing");
  if (version != kSchemaVersion) {
    throw ConfigError("/schema_version", "unsupported version " + std::to_string(version));
  }
  ExperimentConfig c;
  root.get("name", c.name);
  root.get("seed", c.seed);

  {
    auto data = root.child("data");
    data.get("source", c.data.source, {"synthetic", "files"});
    data.get("train_path", c.data.train_path);
    data.get("test_path", c.data.test_path);
    auto g = data.child("generator");
    auto& gc = c.data.generator;
    g.get("num_categories", gc.num_categories);
    g.get("feature_dim", gc.feature_dim);
    g.get("zipf_exponent", gc.zipf_exponent);
    g.get("max_count", gc.max_count);
    g.get("min_count", gc.min_count);
    g.get("head_sigma", gc.head_sigma);
    g.get("tail_sigma", gc.tail_sigma);
    g.get("nesting_fraction", gc.nesting_fraction);
    g.get("center_scale", gc.center_scale);
    g.get("center_offset", gc.center_offset);
    g.get("head_count_threshold", gc.head_count_threshold);
    g.get("test_per_class", gc.test_per_class);
    g.get("max_total", gc.max_total);
    g.finish();
    data.finish();
    gc.seed = c.seed;
    if (c.data.source == "synthetic") detail::checked(g.path(), [&] { gc.validate(); });
    if (c.data.source == "files" && c.data.train_path.empty()) throw ConfigError("/data/train_path", "required for files");
  }
  {
    auto cen = root.child("census");
    cen.get("rare_max", c.census.rare_max);
    cen.get("common_max", c.census.common_max);
    cen.finish();
    if (c.census.rare_max >= c.census.common_max) throw ConfigError("/census", "rare_max must be < common_max");
  }
  {
    auto p = root.child("partition");
    p.get("strategy", c.partition.strategy, {"fixed", "clustered", "random"});
    p.get("thresholds", c.partition.thresholds);
    p.get("clusters", c.partition.clusters);
    p.finish();
    const auto& t = c.partition.thresholds;
    if (t.empty() || t.front() != 0) throw ConfigError("/partition/thresholds", "must start at 0");
    for (std::size_t i = 1; i < t.size(); ++i) {
      if (t[i] <= t[i - 1]) throw ConfigError("/partition/thresholds", "must be strictly increasing");
    }
    if (c.partition.clusters < 2) throw ConfigError("/partition/clusters", "must be >= 2");
  }
  {
    auto m = root.child("model");
    m.get("embed", c.model.embed);
    m.get("bias", c.model.bias, {"auto", "on", "off"});
    m.get("init_std", c.model.init_std);
    m.finish();
    if (!(c.model.init_std >= 0.0)) throw ConfigError("/model/init_std", "must be >= 0");
  }
  {
    auto t = root.child("train");
    t.get("epochs", c.train.epochs);
    t.get("batch_size", c.train.batch_size);
    t.get("learning_rate", c.train.learning_rate);
    t.get("momentum", c.train.momentum);
    t.get("background_samples", c.train.background_samples);
    t.get("background_sigma", c.train.background_sigma);
    t.finish();
    c.train.seed = c.seed;
    detail::checked("/train", [&] { c.train.validate(); });
  }
  {
    auto l = root.child("loss");
    std::string kind = "ce", mode = "plain";
    l.get("kind", kind, {"ce", "bags", "center", "lmcl", "ece"});
    l.get("mode", mode, {"plain", "weighted", "focal", "hybrid"});
    auto& ls = c.train.loss;
    ls.kind = detail::parse_loss_kind(kind);
    ls.bags_mode = detail::parse_bags_mode(mode);
    l.get("gamma", ls.gamma);
    l.get("beta", ls.beta);
    l.get("lambda", ls.lambda);
    l.get("alpha", ls.alpha);
    l.get("s", ls.s);
    l.get("m", ls.m);
    l.get("t", ls.t);
    l.get("hybrid_upper_bound", ls.hybrid_upper_bound);
    l.finish();
    if (!(ls.gamma >= 0.0)) throw ConfigError("/loss/gamma", "must be >= 0");
    if (!(ls.beta > 0.0)) throw ConfigError("/loss/beta", "must be > 0");
    if (!(ls.lambda >= 0.0)) throw ConfigError("/loss/lambda", "must be >= 0");
    if (!(ls.alpha >= 0.0 && ls.alpha <= 1.0)) throw ConfigError("/loss/alpha", "must lie in [0, 1]");
    if (!(ls.s > 0.0)) throw ConfigError("/loss/s", "must be > 0");
    if (!(ls.m >= 0.0)) throw ConfigError("/loss/m", "must be >= 0");
    if (!(ls.t > 0.0)) throw ConfigError("/loss/t", "must be > 0");
  }
  {
    auto i = root.child("inference");
    i.get("method", c.inference.method, {"auto", "softmax", "bags", "knn", "cosine", "euclidean"});
    i.get("tau", c.inference.tau);
    i.get("knn_distance", c.inference.knn_distance, {"euclidean", "squared"});
    i.finish();
    if (!(c.inference.tau >= 0.0 && c.inference.tau <= 1.0)) throw ConfigError("/inference/tau", "must lie in [0, 1]");
  }
  {
    auto r = root.child("report");
    r.get("tau_values", c.report.tau_values);
    r.get("export_features", c.report.export_features);
    r.get("epoch_metrics", c.report.epoch_metrics);
    r.finish();
    for (double t : c.report.tau_values) {
      if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("/report/tau_values", "values must lie in [0, 1]");
    }
  }
  root.finish();

  const std::string method = c.resolved_method();
  const bool bags_head = c.train.loss.kind == LossKind::bags;
  if (method == "bags" && !bags_head) throw ConfigError("/inference/method", "bags inference needs a bags loss");
  if (bags_head && method != "bags" && method != "knn") {
    throw ConfigError("/inference/method", method + " inference needs a plain-layout head");
  }
  if (method == "knn" && c.train.loss.kind != LossKind::center) {
    throw ConfigError("/inference/method", "knn inference needs loss.kind = center (it maintains the center bank)");
  }
  return c;
}

/// Fully resolved configuration, every field explicit. parse_config(to_json(c)) == c.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& g = c.data.generator;
  const auto& l = c.train.loss;
  return {
      {"schema_version", kSchemaVersion},
      {"name", c.name},
      {"seed", c.seed},
      {"data",
       {{"source", c.data.source},
        {"train_path", c.data.train_path},
        {"test_path", c.data.test_path},
        {"generator",
         {{"num_categories", g.num_categories},
          {"feature_dim", g.feature_dim},
          {"zipf_exponent", g.zipf_exponent},
          {"max_count", g.max_count},
          {"min_count", g.min_count},
          {"head_sigma", g.head_sigma},
          {"tail_sigma", g.tail_sigma},
          {"nesting_fraction", g.nesting_fraction},
          {"center_scale", g.center_scale},
          {"center_offset", g.center_offset},
          {"head_count_threshold", g.head_count_threshold},
          {"test_per_class", g.test_per_class},
          {"max_total", g.max_total}}}}},
      {"census", {{"rare_max", c.census.rare_max}, {"common_max", c.census.common_max}}},
      {"partition",
       {{"strategy", c.partition.strategy}, {"thresholds", c.partition.thresholds}, {"clusters", c.partition.clusters}}},
      {"model", {{"embed", c.model.embed}, {"bias", c.model.bias}, {"init_std", c.model.init_std}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"momentum", c.train.momentum},
        {"background_samples", c.train.background_samples},
        {"background_sigma", c.train.background_sigma}}},
      {"loss",
       {{"kind", to_string(l.kind)},
        {"mode", to_string(l.bags_mode)},
        {"gamma", l.gamma},
        {"beta", l.beta},
        {"lambda", l.lambda},
        {"alpha", l.alpha},
        {"s", l.s},
        {"m", l.m},
        {"t", l.t},
        {"hybrid_upper_bound", l.hybrid_upper_bound}}},
      {"inference",
       {{"method", c.inference.method}, {"tau", c.inference.tau}, {"knn_distance", c.inference.knn_distance}}},
      {"report",
       {{"tau_values", c.report.tau_values},
        {"export_features", c.report.export_features},
        {"epoch_metrics", c.report.epoch_metrics}}},
  };
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

/// RFC 7386 merge: objects merge recursively, null deletes, everything else replaces.
inline void merge_patch(nlohmann::json& target, const nlohmann::json& patch) {
  if (!patch.is_object()) {
    target = patch;
    return;
  }
  if (!target.is_object()) target = nlohmann::json::object();
  for (const auto& [key, value] : patch.items()) {
    if (value.is_null()) {
      target.erase(key);
    } else if (value.is_object()) {
      merge_patch(target[key], value);
    } else {
      target[key] = value;
    }
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path, "cannot open file");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path, std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace ltlab
