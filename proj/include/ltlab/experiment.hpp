#pragma once

// Experiment driver: data -> partition -> train -> normalize -> infer -> evaluate,
// with every artifact written to one run directory. Also grids of runs, parameter
// sweeps and report comparison.

#include "ltlab/config.hpp"
#include "ltlab/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace ltlab {

namespace fs = std::filesystem;

inline constexpr const char* kReportSchema = "ltlab.report/1";
inline constexpr const char* kManifestSchema = "ltlab.manifest/1";
inline constexpr const char* kComparisonSchema = "ltlab.comparison/1";
inline constexpr const char* kSweepSchema = "ltlab.sweep/1";
inline constexpr const char* kGridSchema = "ltlab.grid/1";
inline constexpr const char* kAccuracyMetric = "class_mean_accuracy";
inline constexpr const char* kPartialMarker = ".partial";

/// LTLAB_OUTPUT_ROOT, or "runs".
inline fs::path output_root() {
  const char* v = std::getenv("LTLAB_OUTPUT_ROOT");
  return v && *v ? fs::path(v) : fs::path("runs");
}

/// LTLAB_THREADS, or 1. Invalid values are a config error.
inline std::size_t thread_count() {
  const char* v = std::getenv("LTLAB_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("LTLAB_THREADS", "expected a positive integer, got '" + std::string(v) + "'");
  return static_cast<std::size_t>(n);
}

struct ExperimentData {
  Dataset train;
  Dataset test;
  bool test_is_train = false;  // no held-out split available
};

inline ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  if (cfg.data.source == "synthetic") {
    SyntheticBenchmark b = generate_benchmark(cfg.data.generator);
    d.train = std::move(b.train);
    d.test = std::move(b.test);
  } else {
    d.train = load_dataset(cfg.data.train_path, dataset_format_from_path(cfg.data.train_path));
    if (!cfg.data.test_path.empty()) d.test = load_dataset(cfg.data.test_path, dataset_format_from_path(cfg.data.test_path));
  }
  if (d.test.size() == 0) {
    d.test = d.train;
    d.test_is_train = true;
  }
  if (d.test.num_categories != d.train.num_categories || d.test.dim() != d.train.dim()) {
    throw ConfigError("/data/test_path", "test split shape differs from the training split");
  }
  return d;
}

/// Partition per the config; clustered and random strategies derive from the census.
inline GroupPartition build_partition(const ExperimentConfig& cfg, const ClassCensus& cen) {
  try {
    if (cfg.partition.strategy == "clustered") return partition_clustered(cen, cfg.partition.clusters);
    GroupPartition fixed = partition_fixed(cen, cfg.partition.thresholds);
    if (cfg.partition.strategy == "random") return partition_random(cen, fixed, cfg.seed);
    return fixed;
  } catch (const std::invalid_argument& e) {
    throw ConfigError("/partition", e.what());
  }
}

inline Model initial_model(const ExperimentConfig& cfg, std::size_t num_categories, std::size_t dim,
                           const GroupPartition* partition) {
  Model m;
  m.head = cfg.train.loss.kind == LossKind::bags ? ClassifierHead::bags(*partition, dim)
                                                 : ClassifierHead::plain(num_categories, dim);
  m.head.use_bias = cfg.head_bias();
  m.head.randomize(detail::mix_seed(cfg.seed, 0x4ead, 0), cfg.model.init_std);
  if (cfg.model.embed) {
    m.embedding = Matrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  }
  return m;
}

/// Class scores for already-embedded features under the configured inference rule.
inline Matrix infer_scores(const ExperimentConfig& cfg, const ClassifierHead& head, const GroupPartition* partition,
                           const CenterBank* bank, const Matrix& feats, double tau) {
  const std::string method = cfg.resolved_method();
  if (method == "knn") {
    return predict_knn(*bank, feats,
                       cfg.inference.knn_distance == "squared" ? KnnDistance::squared : KnnDistance::euclidean);
  }
  const ClassifierHead h = tau_normalize(head, tau);
  if (method == "bags") return predict_bags(h, *partition, feats);
  if (method == "cosine") return predict_cosine(h, feats, cfg.train.loss.s);
  if (method == "euclidean") return predict_euclidean(h, feats, cfg.train.loss.t);
  return predict_softmax(h, feats);
}

inline bool tau_applies(const ExperimentConfig& cfg) {
  const std::string m = cfg.resolved_method();
  return m == "softmax" || m == "bags";
}

struct ReportRecord {
  std::string metric;
  std::string group;
  std::optional<double> value;
};

struct Report {
  std::string name;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;  // set for aggregated (median) reports
  std::vector<ReportRecord> records;

  std::optional<double> find(std::string_view metric, std::string_view group) const {
    for (const auto& r : records) {
      if (r.metric == metric && r.group == group) return r.value;
    }
    return std::nullopt;
  }
  GroupReport groups(std::string_view metric = kAccuracyMetric) const {
    return {find(metric, "overall"), find(metric, "rare"), find(metric, "common"), find(metric, "frequent")};
  }
};

inline void add_groups(Report& r, const std::string& metric, const GroupReport& g) {
  for (const auto& name : report_groups()) r.records.push_back({metric, name, g.get(name)});
}

inline nlohmann::json report_to_json(const Report& r) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& rec : r.records) {
    recs.push_back({{"metric", rec.metric},
                    {"group", rec.group},
                    {"value", rec.value ? nlohmann::json(*rec.value) : nlohmann::json(nullptr)},
                    {"config_hash", r.config_hash},
                    {"seed", r.seed}});
  }
  nlohmann::json j{{"schema", kReportSchema},
                   {"name", r.name},
                   {"config_hash", r.config_hash},
                   {"seed", r.seed},
                   {"records", recs}};
  if (!r.seeds.empty()) {
    j["aggregate"] = "median";
    j["seeds"] = r.seeds;
  }
  return j;
}

inline Report report_from_json(const nlohmann::json& j, const std::string& where = "report") {
  auto bad = [&](const std::string& what) { return FormatError(what, where); };
  if (!j.is_object() || j.value("schema", "") != kReportSchema) throw bad("expected schema " + std::string(kReportSchema));
  Report r;
  try {
    r.name = j.at("name").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("seeds")) r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& rec : j.at("records")) {
      ReportRecord out{rec.at("metric").get<std::string>(), rec.at("group").get<std::string>(), std::nullopt};
      if (!rec.at("value").is_null()) out.value = rec.at("value").get<double>();
      r.records.push_back(std::move(out));
    }
  } catch (const nlohmann::json::exception& e) {
    throw bad(std::string("malformed report: ") + e.what());
  }
  return r;
}

inline Report load_report(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("invalid JSON: ") + e.what(), path.string());
  }
  return report_from_json(j, path.string());
}

inline std::string format_value(const std::optional<double>& v, int precision = 4) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

inline void write_report_text(std::ostream& os, const Report& r) {
  os << "run " << r.name << "  config " << r.config_hash << "  seed " << r.seed << '\n';
  std::vector<std::string> metrics;
  for (const auto& rec : r.records) {
    if (std::find(metrics.begin(), metrics.end(), rec.metric) == metrics.end()) metrics.push_back(rec.metric);
  }
  std::size_t width = 6;
  for (const auto& m : metrics) width = std::max(width, m.size());
  os << std::left << std::setw(static_cast<int>(width)) << "metric";
  for (const auto& g : report_groups()) os << "  " << std::setw(9) << g;
  os << '\n';
  for (const auto& m : metrics) {
    os << std::setw(static_cast<int>(width)) << m;
    for (const auto& g : report_groups()) {
      bool present = false;
      for (const auto& rec : r.records) present = present || (rec.metric == m && rec.group == g);
      os << "  " << std::setw(9) << (present ? format_value(r.find(m, g)) : "");
    }
    os << '\n';
  }
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

template <class F>
std::string render(F&& f) {
  std::ostringstream os(std::ios::binary);
  f(os);
  return os.str();
}

inline std::string tau_metric(double tau) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s@tau=%g", kAccuracyMetric, tau);
  return buf;
}

inline std::string file_hash(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  Fnv1a h;
  char buf[1 << 14];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) h.update(std::string_view(buf, static_cast<std::size_t>(is.gcount())));
  return hex64(h.digest());
}

}  // namespace detail

struct RunOptions {
  bool evaluate = true;  // false stops after writing the trained model
};

struct RunResult {
  fs::path dir;
  Report report;
  Model model;
  std::optional<GroupPartition> partition;
  std::optional<CenterBank> bank;
  std::string manifest_hash;
};

/// Writes `.partial` first and removes it only once every artifact is on disk.
inline RunResult run_experiment(const ExperimentConfig& cfg, const fs::path& dir, const RunOptions& opt = {}) {
  fs::create_directories(dir);
  const fs::path marker = dir / kPartialMarker;
  detail::write_text(marker, "incomplete run\n");

  RunResult out;
  out.dir = dir;
  const std::string chash = config_hash(cfg);
  const nlohmann::json resolved = to_json(cfg);
  detail::write_text(dir / "config.json", resolved.dump(2) + "\n");

  const ExperimentData data = load_experiment_data(cfg);
  const ClassCensus cen = census(data.train, cfg.census);
  const std::size_t C = data.train.num_categories;

  std::optional<GroupPartition> partition;
  if (cfg.uses_partition() || cfg.partition.strategy != "fixed") partition = build_partition(cfg, cen);
  if (!partition) {
    try {
      partition = partition_fixed(cen, cfg.partition.thresholds);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("/partition/thresholds", e.what());
    }
  }
  detail::write_text(dir / "partition.json", partition_to_json(*partition).dump(2) + "\n");
  detail::write_text(dir / "bin_census.csv", detail::render([&](std::ostream& os) {
                       write_bin_census_csv(os, bin_census(cen, *partition));
                     }));
  const GroupPartition* part_ptr = cfg.uses_partition() ? &*partition : nullptr;

  if (cfg.train.loss.kind == LossKind::bags &&
      (cfg.train.loss.bags_mode == BagsMode::weighted || cfg.train.loss.bags_mode == BagsMode::hybrid)) {
    const ClassWeightTable w = class_weights(cen, *partition);
    detail::write_text(dir / "class_weights.json",
                       nlohmann::json{{"init", w.init}, {"normalized", w.normalized}, {"final", w.final_weight}}.dump(2) +
                           "\n");
  }

  const Model init = initial_model(cfg, C, data.train.dim(), part_ptr);
  const bool want_bank = cfg.train.loss.kind == LossKind::center;
  std::optional<CenterBank> bank;
  if (want_bank) bank.emplace(C, init.embedding ? static_cast<std::size_t>(init.embedding->rows()) : data.train.dim());

  TrainHooks hooks;
  if (cfg.report.epoch_metrics && opt.evaluate) {
    hooks.on_epoch = [&](const Model& m) {
      std::map<std::string, double> metrics;
      const Matrix feats = m.embed(data.test.features);
      if (cfg.resolved_method() == "knn" && (!bank || bank->num_initialized() == 0)) return metrics;
      const auto preds = labels_of(argmax_rows(infer_scores(cfg, m.head, part_ptr, bank ? &*bank : nullptr, feats, 0.0)));
      const GroupReport g = group_report(per_class_accuracy(preds, data.test.labels, C), cen);
      for (const auto& name : report_groups()) {
        if (auto v = g.get(name)) metrics[name] = *v;
      }
      return metrics;
    };
  }

  {
    std::ofstream os(dir / "head_init.lthd", std::ios::binary);
    save_head(init.head, os);
  }
  TrainResult trained = train(data.train, init, cfg.train, part_ptr, bank ? &*bank : nullptr, hooks);
  const Model& model = trained.model;
  {
    std::ofstream os(dir / "head.lthd", std::ios::binary);
    save_head(model.head, os);
  }
  if (model.embedding) {
    std::ofstream os(dir / "embedding.lthd", std::ios::binary);
    save_matrix(os, *model.embedding, HeadLayout::dense, nullptr);
  }
  if (bank) {
    std::ofstream os(dir / "centers.ltcb", std::ios::binary);
    save_center_bank(*bank, os);
  }
  detail::write_text(dir / "train_log.csv", detail::render([&](std::ostream& os) {
                       os << "epoch,loss";
                       for (const auto& g : report_groups()) {
                         if (cfg.report.epoch_metrics) os << ",test_" << g;
                       }
                       os << '\n';
                       char buf[32];
                       for (const auto& e : trained.log) {
                         std::snprintf(buf, sizeof buf, "%.17g", e.loss);
                         os << e.epoch << ',' << buf;
                         for (const auto& g : report_groups()) {
                           if (!cfg.report.epoch_metrics) continue;
                           auto it = e.metrics.find(g);
                           os << ',';
                           if (it != e.metrics.end()) {
                             std::snprintf(buf, sizeof buf, "%.17g", it->second);
                             os << buf;
                           }
                         }
                         os << '\n';
                       }
                     }));

  Report report;
  report.name = cfg.name;
  report.config_hash = chash;
  report.seed = cfg.seed;
  report.records.push_back({"final_train_loss", "overall", trained.log.empty() ? std::nullopt
                                                                               : std::optional(trained.log.back().loss)});

  if (opt.evaluate) {
    const Matrix test_feats = model.embed(data.test.features);
    const Matrix scores = infer_scores(cfg, model.head, part_ptr, bank ? &*bank : nullptr, test_feats, cfg.inference.tau);
    const auto preds = argmax_rows(scores);
    add_groups(report, kAccuracyMetric, group_report(per_class_accuracy(labels_of(preds), data.test.labels, C), cen));
    detail::write_text(dir / "predictions.csv", detail::render([&](std::ostream& os) {
                         write_predictions_csv(os, preds, data.test.labels);
                       }));

    if (tau_applies(cfg)) {
      for (double tau : cfg.report.tau_values) {
        const auto p = labels_of(argmax_rows(infer_scores(cfg, model.head, part_ptr, nullptr, test_feats, tau)));
        add_groups(report, detail::tau_metric(tau), group_report(per_class_accuracy(p, data.test.labels, C), cen));
      }
    }

    const WeightNormReport wn = weight_norm_report(model.head, cen, cfg.report.tau_values);
    detail::write_text(dir / "weight_norms.csv", detail::render([&](std::ostream& os) { write_weight_norm_csv(os, wn); }));
    const auto norms = weight_norms(model.head);
    const std::vector<double> counts(cen.counts.begin(), cen.counts.end());
    report.records.push_back({"weight_norm_count_spearman", "overall", C >= 2 ? std::optional(spearman(norms, counts))
                                                                                : std::nullopt});

    if (bank && bank->num_initialized() == C) {
      add_groups(report, "intra_class_spread",
                 group_report(intra_class_spread(test_feats, data.test.labels, *bank), cen));
    }
    if (cfg.report.export_features) {
      detail::write_text(dir / "features.csv", detail::render([&](std::ostream& os) {
                           Dataset f{test_feats, data.test.labels, C};
                           save_dataset_csv(f, os);
                         }));
    }
    detail::write_text(dir / "report.json", report_to_json(report).dump(2) + "\n");
    detail::write_text(dir / "report.txt", detail::render([&](std::ostream& os) { write_report_text(os, report); }));
  }

  // The manifest lists artifact hashes, so it is written last.
  nlohmann::json artifacts = nlohmann::json::object();
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string fname = entry.path().filename().string();
    if (fname == kPartialMarker || fname == "manifest.json" || !entry.is_regular_file()) continue;
    artifacts[fname] = detail::file_hash(entry.path());
  }
  nlohmann::json manifest{{"schema", kManifestSchema},
                          {"name", cfg.name},
                          {"seed", cfg.seed},
                          {"config_hash", chash},
                          {"config", resolved},
                          {"train_dataset_hash", hex64(dataset_hash(data.train))},
                          {"test_dataset_hash", hex64(dataset_hash(data.test))},
                          {"test_is_train", data.test_is_train},
                          {"artifacts", artifacts}};
  const std::string manifest_text = manifest.dump(2) + "\n";
  detail::write_text(dir / "manifest.json", manifest_text);
  out.manifest_hash = hex64(fnv1a(manifest_text));

  fs::remove(marker);
  out.report = std::move(report);
  out.model = trained.model;
  out.partition = std::move(partition);
  out.bank = std::move(bank);
  return out;
}

/// Re-evaluates a finished run directory, optionally at a different tau.
inline Report evaluate_run(const fs::path& dir, std::optional<double> tau = std::nullopt) {
  if (fs::exists(dir / kPartialMarker)) throw std::runtime_error(dir.string() + " holds an incomplete run");
  const ExperimentConfig cfg = parse_config(read_json_file((dir / "config.json").string()));
  const ExperimentData data = load_experiment_data(cfg);
  const ClassCensus cen = census(data.train, cfg.census);
  std::optional<GroupPartition> partition;
  if (cfg.uses_partition()) partition = partition_from_json(read_json_file((dir / "partition.json").string()));
  auto open = [&](const char* name) {
    std::ifstream is(dir / name, std::ios::binary);
    if (!is) throw std::runtime_error("missing artifact " + (dir / name).string());
    return is;
  };
  Model model;
  {
    auto is = open("head.lthd");
    model.head = load_head(is, partition ? &*partition : nullptr);
  }
  if (cfg.model.embed) {
    auto is = open("embedding.lthd");
    model.embedding = load_matrix(is).weights;
  }
  std::optional<CenterBank> bank;
  if (cfg.train.loss.kind == LossKind::center) {
    auto is = open("centers.ltcb");
    bank = load_center_bank(is);
  }
  const double t = tau.value_or(cfg.inference.tau);
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("--tau", "must lie in [0, 1]");
  const Matrix feats = model.embed(data.test.features);
  const auto preds = labels_of(argmax_rows(
      infer_scores(cfg, model.head, partition ? &*partition : nullptr, bank ? &*bank : nullptr, feats, t)));
  Report r;
  r.name = cfg.name;
  r.config_hash = config_hash(cfg);
  r.seed = cfg.seed;
  add_groups(r, kAccuracyMetric, group_report(per_class_accuracy(preds, data.test.labels, data.train.num_categories), cen));
  return r;
}

/// Runs jobs on up to `threads` workers; the first exception is rethrown after all finish.
inline void run_parallel(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& job) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Record-wise median over per-seed reports; a value absent in every seed stays absent.
inline Report median_report(const std::vector<Report>& reports, const std::string& name,
                            const std::vector<std::uint64_t>& seeds) {
  if (reports.empty()) throw std::invalid_argument("no reports to aggregate");
  Report out;
  out.name = name;
  out.config_hash = reports.front().config_hash;
  out.seed = reports.front().seed;
  out.seeds = seeds;
  for (const auto& rec : reports.front().records) {
    std::vector<double> vals;
    for (const auto& r : reports) {
      if (auto v = r.find(rec.metric, rec.group)) vals.push_back(*v);
    }
    out.records.push_back({rec.metric, rec.group, vals.empty() ? std::nullopt : std::optional(median(vals))});
  }
  return out;
}

struct Comparison {
  std::string metric = kAccuracyMetric;
  std::vector<Report> reports;  // first is the baseline
};

inline nlohmann::json comparison_to_json(const Comparison& c) {
  if (c.reports.empty()) throw std::invalid_argument("nothing to compare");
  const GroupReport base = c.reports.front().groups(c.metric);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : c.reports) {
    const GroupReport g = r.groups(c.metric);
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& name : report_groups()) {
      const auto v = g.get(name), b = base.get(name);
      groups[name] = {{"value", v ? nlohmann::json(*v) : nlohmann::json(nullptr)},
                      {"delta", v && b ? nlohmann::json(*v - *b) : nlohmann::json(nullptr)}};
    }
    rows.push_back({{"name", r.name}, {"config_hash", r.config_hash}, {"seed", r.seed}, {"groups", groups}});
  }
  return {{"schema", kComparisonSchema}, {"metric", c.metric}, {"baseline", c.reports.front().name}, {"rows", rows}};
}

struct ComparisonRow {
  std::string name;
  std::string config_hash;
  std::uint64_t seed = 0;
  GroupReport value;
  GroupReport delta;
};

struct ParsedComparison {
  std::string metric;
  std::string baseline;
  std::vector<ComparisonRow> rows;
};

inline ParsedComparison comparison_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("schema", "") != kComparisonSchema) {
    throw FormatError("expected schema " + std::string(kComparisonSchema), "comparison");
  }
  ParsedComparison out;
  try {
    out.metric = j.at("metric").get<std::string>();
    out.baseline = j.at("baseline").get<std::string>();
    for (const auto& row : j.at("rows")) {
      ComparisonRow r;
      r.name = row.at("name").get<std::string>();
      r.config_hash = row.at("config_hash").get<std::string>();
      r.seed = row.at("seed").get<std::uint64_t>();
      auto opt = [](const nlohmann::json& v) { return v.is_null() ? std::nullopt : std::optional(v.get<double>()); };
      std::optional<double>* value_slots[] = {&r.value.overall, &r.value.rare, &r.value.common, &r.value.frequent};
      std::optional<double>* delta_slots[] = {&r.delta.overall, &r.delta.rare, &r.delta.common, &r.delta.frequent};
      for (std::size_t g = 0; g < report_groups().size(); ++g) {
        const auto& cell = row.at("groups").at(report_groups()[g]);
        *value_slots[g] = opt(cell.at("value"));
        *delta_slots[g] = opt(cell.at("delta"));
      }
      out.rows.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed comparison: ") + e.what(), "comparison");
  }
  return out;
}

inline void write_comparison_text(std::ostream& os, const Comparison& c) {
  const ParsedComparison p = comparison_from_json(comparison_to_json(c));
  std::size_t width = 8;
  for (const auto& r : p.rows) width = std::max(width, r.name.size());
  os << c.metric << " (delta vs " << p.baseline << ")\n";
  os << std::left << std::setw(static_cast<int>(width)) << "run";
  for (const auto& g : report_groups()) os << "  " << std::setw(17) << g;
  os << '\n';
  for (const auto& r : p.rows) {
    os << std::setw(static_cast<int>(width)) << r.name;
    for (const auto& g : report_groups()) {
      const auto v = r.value.get(g), d = r.delta.get(g);
      std::string cell = format_value(v);
      if (d) cell += " (" + std::string(*d >= 0 ? "+" : "") + format_value(d) + ")";
      os << "  " << std::setw(17) << cell;
    }
    os << '\n';
  }
}

inline Comparison compare_reports(const std::vector<Report>& reports, const std::string& metric = kAccuracyMetric) {
  if (reports.empty()) throw std::invalid_argument("compare needs at least one report");
  for (const auto& r : reports) {
    for (const auto& g : report_groups()) {
      bool present = false;
      for (const auto& rec : r.records) present = present || (rec.metric == metric && rec.group == g);
      if (!present) throw FormatError("report lacks " + metric + "/" + g, r.name);
    }
  }
  return {metric, reports};
}

inline void write_comparison(const fs::path& dir, const Comparison& c) {
  fs::create_directories(dir);
  detail::write_text(dir / "comparison.json", comparison_to_json(c).dump(2) + "\n");
  detail::write_text(dir / "comparison.txt", detail::render([&](std::ostream& os) { write_comparison_text(os, c); }));
}

/// A grid file: {"schema": "ltlab.grid/1", "name", "base": <config>, "runs": [{"name", "overrides"}], "seeds"?}.
struct GridSpec {
  std::string name = "grid";
  nlohmann::json base;
  std::vector<std::pair<std::string, nlohmann::json>> runs;
  std::vector<std::uint64_t> seeds;  // empty: the base seed only
};

inline bool is_grid(const nlohmann::json& j) { return j.is_object() && j.contains("runs"); }

inline GridSpec parse_grid(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("/", "expected an object");
  for (const auto& [key, value] : j.items()) {
    if (key != "schema" && key != "name" && key != "base" && key != "runs" && key != "seeds") {
      throw ConfigError("/" + key, "unknown key");
    }
  }
  if (j.value("schema", "") != kGridSchema) throw ConfigError("/schema", "expected " + std::string(kGridSchema));
  GridSpec g;
  if (j.contains("name")) {
    if (!j["name"].is_string()) throw ConfigError("/name", "expected a string");
    g.name = j["name"].get<std::string>();
  }
  if (!j.contains("base") || !j["base"].is_object()) throw ConfigError("/base", "expected a config object");
  g.base = j["base"];
  if (!j["runs"].is_array() || j["runs"].empty()) throw ConfigError("/runs", "expected a non-empty array");
  for (std::size_t i = 0; i < j["runs"].size(); ++i) {
    const auto& r = j["runs"][i];
    const std::string path = "/runs/" + std::to_string(i);
    if (!r.is_object() || !r.contains("name") || !r["name"].is_string()) throw ConfigError(path + "/name", "expected a string");
    for (const auto& [key, value] : r.items()) {
      if (key != "name" && key != "overrides") throw ConfigError(path + "/" + key, "unknown key");
    }
    nlohmann::json overrides = r.value("overrides", nlohmann::json::object());
    if (!overrides.is_object()) throw ConfigError(path + "/overrides", "expected an object");
    g.runs.emplace_back(r["name"].get<std::string>(), std::move(overrides));
  }
  if (j.contains("seeds")) {
    if (!j["seeds"].is_array() || j["seeds"].empty()) throw ConfigError("/seeds", "expected a non-empty array");
    for (const auto& s : j["seeds"]) {
      if (!detail::is_count(s)) throw ConfigError("/seeds", "expected non-negative integers");
      g.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  return g;
}

/// Resolves every run of a grid up front so config errors surface before any training.
inline std::vector<std::vector<ExperimentConfig>> resolve_grid(const GridSpec& g) {
  std::vector<std::vector<ExperimentConfig>> out;
  for (std::size_t i = 0; i < g.runs.size(); ++i) {
    nlohmann::json merged = g.base;
    merge_patch(merged, g.runs[i].second);
    merged["name"] = g.runs[i].first;
    std::vector<ExperimentConfig> per_seed;
    const std::vector<std::uint64_t> seeds = g.seeds.empty() ? std::vector<std::uint64_t>{} : g.seeds;
    try {
      if (seeds.empty()) {
        per_seed.push_back(parse_config(merged));
      } else {
        for (auto s : seeds) {
          merged["seed"] = s;
          per_seed.push_back(parse_config(merged));
        }
      }
    } catch (const ConfigError& e) {
      throw ConfigError("/runs/" + std::to_string(i) + "(" + g.runs[i].first + ")" + e.key_path(), e.detail());
    }
    out.push_back(std::move(per_seed));
  }
  return out;
}

struct GridResult {
  std::vector<Report> reports;  // one per run, median across seeds when seeded
  Comparison comparison;
};

inline GridResult run_grid(const GridSpec& g, const fs::path& dir, std::size_t threads = 1) {
  const auto configs = resolve_grid(g);
  struct Job {
    std::size_t run, seed_index;
  };
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < configs.size(); ++r) {
    for (std::size_t s = 0; s < configs[r].size(); ++s) jobs.push_back({r, s});
  }
  std::vector<std::vector<Report>> per_run(configs.size());
  for (std::size_t r = 0; r < configs.size(); ++r) per_run[r].resize(configs[r].size());
  run_parallel(jobs.size(), threads, [&](std::size_t i) {
    const auto [r, s] = jobs[i];
    const ExperimentConfig& cfg = configs[r][s];
    const fs::path run_dir = g.seeds.empty() ? dir / cfg.name : dir / cfg.name / ("seed-" + std::to_string(cfg.seed));
    per_run[r][s] = run_experiment(cfg, run_dir).report;
  });
  GridResult out;
  for (std::size_t r = 0; r < configs.size(); ++r) {
    if (g.seeds.empty()) {
      out.reports.push_back(per_run[r].front());
      continue;
    }
    Report agg = median_report(per_run[r], configs[r].front().name, g.seeds);
    detail::write_text(dir / agg.name / "report.json", report_to_json(agg).dump(2) + "\n");
    detail::write_text(dir / agg.name / "report.txt", detail::render([&](std::ostream& os) { write_report_text(os, agg); }));
    out.reports.push_back(std::move(agg));
  }
  out.comparison = compare_reports(out.reports);
  write_comparison(dir, out.comparison);
  return out;
}

inline const std::vector<std::string>& sweep_params() {
  static const std::vector<std::string> p{"tau", "lambda", "gamma", "beta", "bins"};
  return p;
}

struct SweepRow {
  double value = 0.0;
  GroupReport groups;
};

inline ExperimentConfig with_param(ExperimentConfig cfg, const std::string& param, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s=%g", param.c_str(), v);
  cfg.name += std::string("/") + buf;
  if (param == "lambda") {
    if (!(v >= 0.0)) throw ConfigError("/sweep/lambda", "values must be >= 0");
    cfg.train.loss.lambda = v;
  } else if (param == "gamma") {
    if (!(v >= 0.0)) throw ConfigError("/sweep/gamma", "values must be >= 0");
    cfg.train.loss.gamma = v;
  } else if (param == "beta") {
    if (!(v > 0.0)) throw ConfigError("/sweep/beta", "values must be > 0");
    cfg.train.loss.beta = v;
  } else if (param == "bins") {
    if (v < 2.0 || v != std::floor(v)) throw ConfigError("/sweep/bins", "values must be integers >= 2");
    cfg.partition.strategy = "clustered";
    cfg.partition.clusters = static_cast<std::size_t>(v);
  } else {
    throw ConfigError("/sweep/param", "unknown parameter " + param);
  }
  return cfg;
}

/// One run per value. tau reuses a single trained head and only re-evaluates.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& param,
                                       const std::vector<double>& values, const fs::path& dir, std::size_t threads = 1) {
  if (std::find(sweep_params().begin(), sweep_params().end(), param) == sweep_params().end()) {
    throw ConfigError("/sweep/param", "expected one of tau|lambda|gamma|beta|bins, got '" + param + "'");
  }
  if (values.empty()) throw ConfigError("/sweep/values", "expected at least one value");
  std::vector<SweepRow> rows(values.size());
  if (param == "tau") {
    if (!tau_applies(cfg)) throw ConfigError("/inference/method", "tau sweeps need softmax or bags inference");
    for (double t : values) {
      if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("/sweep/tau", "values must lie in [0, 1]");
    }
    ExperimentConfig base = cfg;
    base.report.tau_values = values;
    const RunResult r = run_experiment(base, dir / "base");
    for (std::size_t i = 0; i < values.size(); ++i) rows[i] = {values[i], r.report.groups(detail::tau_metric(values[i]))};
  } else {
    std::vector<ExperimentConfig> cfgs;
    for (double v : values) cfgs.push_back(with_param(cfg, param, v));
    run_parallel(values.size(), threads, [&](std::size_t i) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s=%g", param.c_str(), values[i]);
      rows[i] = {values[i], run_experiment(cfgs[i], dir / buf).report.groups()};
    });
  }

  nlohmann::json jrows = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& g : report_groups()) {
      const auto v = r.groups.get(g);
      groups[g] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    }
    jrows.push_back({{"value", r.value}, {"groups", groups}});
  }
  fs::create_directories(dir);
  detail::write_text(dir / "sweep.json", nlohmann::json{{"schema", kSweepSchema},
                                                        {"param", param},
                                                        {"config_hash", config_hash(cfg)},
                                                        {"metric", kAccuracyMetric},
                                                        {"rows", jrows}}
                                                 .dump(2) +
                                             "\n");
  detail::write_text(dir / "sweep.txt", detail::render([&](std::ostream& os) {
                       os << std::left << std::setw(10) << param;
                       for (const auto& g : report_groups()) os << "  " << std::setw(9) << g;
                       os << '\n';
                       for (const auto& r : rows) {
                         char buf[32];
                         std::snprintf(buf, sizeof buf, "%g", r.value);
                         os << std::setw(10) << buf;
                         for (const auto& g : report_groups()) os << "  " << std::setw(9) << format_value(r.groups.get(g));
                         os << '\n';
                       }
                     }));
  return rows;
}

}  // namespace ltlab
