// ltlab: command-line driver for long-tail classification experiments.
//
// Exit codes: 0 success, 1 other failure, 2 config or usage error, 3 numerical failure.

#include "ltlab/experiment.hpp"
#include "ltlab/gradcheck.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

using namespace ltlab;

constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

ExperimentConfig load_config(const std::string& path) { return parse_config(read_json_file(path)); }

fs::path out_dir_for(const std::string& explicit_dir, const std::string& name) {
  return explicit_dir.empty() ? output_root() / name : fs::path(explicit_dir);
}

int cmd_generate(const std::string& config_path, const std::string& out, const std::string& format) {
  const ExperimentConfig cfg = load_config(config_path);
  if (cfg.data.source != "synthetic") throw ConfigError("/data/source", "generate needs a synthetic data source");
  const SyntheticBenchmark b = generate_benchmark(cfg.data.generator);
  const fs::path dir = out_dir_for(out, cfg.name);
  fs::create_directories(dir);
  const DatasetFormat fmt = format == "binary" ? DatasetFormat::binary : DatasetFormat::csv;
  const char* ext = fmt == DatasetFormat::binary ? ".ltfv" : ".csv";
  save_dataset(b.train, (dir / (std::string("train") + ext)).string(), fmt);
  if (b.test.size() > 0) save_dataset(b.test, (dir / (std::string("test") + ext)).string(), fmt);
  std::printf("train: %zu samples, hash %s\n", b.train.size(), hex64(dataset_hash(b.train)).c_str());
  if (b.test.size() > 0) std::printf("test:  %zu samples, hash %s\n", b.test.size(), hex64(dataset_hash(b.test)).c_str());
  std::printf("written to %s\n", dir.string().c_str());
  return 0;
}

int cmd_census(const std::string& data_path, std::uint64_t rare_max, std::uint64_t common_max,
               const std::vector<std::uint64_t>& thresholds, std::size_t clusters) {
  const Dataset ds = load_dataset(data_path, dataset_format_from_path(data_path));
  if (rare_max >= common_max) throw ConfigError("--rare-max", "must be below --common-max");
  const ClassCensus cen = census(ds, {rare_max, common_max});
  std::size_t tags[3] = {0, 0, 0};
  for (auto t : cen.tags) ++tags[static_cast<int>(t)];
  std::printf("%zu samples, %zu categories: %zu rare, %zu common, %zu frequent\n", ds.size(), cen.num_categories(),
              tags[0], tags[1], tags[2]);
  std::printf("category,count,tag\n");
  for (std::size_t k : order_by_count(cen)) {
    std::printf("%zu,%llu,%s\n", k, static_cast<unsigned long long>(cen.counts[k]), to_string(cen.tags[k]));
  }
  GroupPartition p;
  try {
    p = clusters > 0 ? partition_clustered(cen, clusters) : partition_fixed(cen, thresholds);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(clusters > 0 ? "--clusters" : "--thresholds", e.what());
  }
  std::printf("\n");
  write_bin_census_csv(std::cout, bin_census(cen, p));
  for (const auto& w : p.warnings()) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out, bool evaluate) {
  const nlohmann::json j = read_json_file(config_path);
  if (is_grid(j)) {
    if (!evaluate) throw ConfigError("/runs", "train takes a single configuration, not a grid");
    const GridSpec g = parse_grid(j);
    const fs::path dir = out_dir_for(out, g.name);
    const GridResult r = run_grid(g, dir, thread_count());
    write_comparison_text(std::cout, r.comparison);
    std::printf("written to %s\n", dir.string().c_str());
    return 0;
  }
  const ExperimentConfig cfg = parse_config(j);
  const fs::path dir = out_dir_for(out, cfg.name);
  const RunResult r = run_experiment(cfg, dir, {evaluate});
  if (evaluate) write_report_text(std::cout, r.report);
  std::printf("manifest %s\nwritten to %s\n", r.manifest_hash.c_str(), dir.string().c_str());
  return 0;
}

int cmd_eval(const std::string& run_dir, std::optional<double> tau) {
  write_report_text(std::cout, evaluate_run(run_dir, tau));
  return 0;
}

int cmd_taunorm(const std::string& head_path, const std::string& partition_path, double tau, const std::string& out) {
  std::optional<GroupPartition> partition;
  if (!partition_path.empty()) partition = partition_from_json(read_json_file(partition_path));
  std::ifstream is(head_path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + head_path);
  const ClassifierHead head = load_head(is, partition ? &*partition : nullptr);
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("--tau", "must lie in [0, 1]");
  const ClassifierHead normed = tau_normalize(head, tau);
  const auto before = weight_norms(head), after = weight_norms(normed);
  const auto [lo0, hi0] = std::minmax_element(before.begin(), before.end());
  const auto [lo1, hi1] = std::minmax_element(after.begin(), after.end());
  std::printf("tau %g: norm range [%.6g, %.6g] -> [%.6g, %.6g]\n", tau, *lo0, *hi0, *lo1, *hi1);
  if (!out.empty()) {
    std::ofstream os(out, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + out);
    save_head(normed, os);
    std::printf("written to %s\n", out.c_str());
  }
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& param, const std::vector<double>& values,
              const std::string& out) {
  const ExperimentConfig cfg = load_config(config_path);
  const fs::path dir = out_dir_for(out, cfg.name + "-sweep-" + param);
  run_sweep(cfg, param, values, dir, thread_count());
  std::ifstream is(dir / "sweep.txt");
  std::cout << is.rdbuf();
  std::printf("written to %s\n", dir.string().c_str());
  return 0;
}

int cmd_compare(const std::vector<std::string>& paths, const std::string& metric, const std::string& out) {
  std::vector<Report> reports;
  for (const auto& p : paths) reports.push_back(load_report(fs::is_directory(p) ? fs::path(p) / "report.json" : fs::path(p)));
  const Comparison c = compare_reports(reports, metric);
  write_comparison_text(std::cout, c);
  if (!out.empty()) {
    write_comparison(out, c);
    std::printf("written to %s\n", out.c_str());
  }
  return 0;
}

int cmd_gradcheck(std::size_t instances, std::uint64_t seed) {
  GradCheckOptions opt;
  opt.instances = instances;
  opt.seed = seed;
  bool ok = true;
  std::printf("%-20s %9s %14s\n", "loss", "instances", "max_rel_error");
  for (const auto& r : run_gradcheck(opt)) {
    const bool pass = r.max_rel_error < opt.tolerance;
    ok = ok && pass;
    std::printf("%-20s %9zu %14.3e %s\n", r.name.c_str(), r.instances, r.max_rel_error, pass ? "ok" : "FAIL");
  }
  return ok ? 0 : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tail classification experiments: group softmax, tau-normalization, metric losses"};
  app.require_subcommand(1);

  std::string config, out, format = "csv", data, head, partition, param, metric = kAccuracyMetric, run_dir;
  std::vector<std::uint64_t> thresholds = default_bin_thresholds();
  std::vector<double> values;
  std::vector<std::string> reports;
  std::uint64_t rare_max = 10, common_max = 100, seed = 0;
  std::size_t clusters = 0, instances = 100;
  double tau = 0.0;
  std::optional<double> eval_tau;

  auto* gen = app.add_subcommand("generate", "Write the synthetic train/test splits of a config");
  gen->add_option("-c,--config", config, "Experiment config (JSON)")->required();
  gen->add_option("-o,--out", out, "Output directory");
  gen->add_option("--format", format, "csv or binary")->check(CLI::IsMember({"csv", "binary"}));

  auto* cen = app.add_subcommand("census", "Per-class counts, frequency tags and bin imbalance of a dataset");
  cen->add_option("data", data, "Dataset file (.csv or .ltfv)")->required();
  cen->add_option("--rare-max", rare_max, "Largest count tagged rare");
  cen->add_option("--common-max", common_max, "Largest count tagged common");
  cen->add_option("--thresholds", thresholds, "Bin lower bounds")->delimiter(',');
  cen->add_option("--clusters", clusters, "Cluster counts into k bins instead of fixed thresholds");

  auto* trn = app.add_subcommand("train", "Train a config and write the model artifacts");
  trn->add_option("-c,--config", config, "Experiment config (JSON)")->required();
  trn->add_option("-o,--out", out, "Run directory");

  auto* run = app.add_subcommand("run", "Run a config or grid end to end: train, evaluate, report");
  run->add_option("-c,--config", config, "Experiment or grid config (JSON)")->required();
  run->add_option("-o,--out", out, "Run directory");

  auto* ev = app.add_subcommand("eval", "Re-evaluate a finished run");
  ev->add_option("run", run_dir, "Run directory")->required();
  ev->add_option("--tau", eval_tau, "Override the inference tau");

  auto* tn = app.add_subcommand("taunorm", "Tau-normalize a saved head");
  tn->add_option("head", head, "Head file (.lthd)")->required();
  tn->add_option("--tau", tau, "Normalization power in [0, 1]")->required();
  tn->add_option("--partition", partition, "partition.json, required for group-softmax heads");
  tn->add_option("-o,--out", out, "Write the normalized head here");

  auto* sw = app.add_subcommand("sweep", "One run per parameter value");
  sw->add_option("-c,--config", config, "Experiment config (JSON)")->required();
  sw->add_option("--param", param, "tau, lambda, gamma, beta or bins")->required();
  sw->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');
  sw->add_option("-o,--out", out, "Sweep directory");

  auto* cmp = app.add_subcommand("compare", "Side-by-side group metrics with deltas against the first report");
  cmp->add_option("reports", reports, "report.json files or run directories")->required();
  cmp->add_option("--metric", metric, "Metric to compare");
  cmp->add_option("-o,--out", out, "Write comparison.json/.txt here");

  auto* gc = app.add_subcommand("gradcheck", "Check every analytic loss gradient against finite differences");
  gc->add_option("--instances", instances, "Random instances per loss");
  gc->add_option("--seed", seed, "Instance seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen) return cmd_generate(config, out, format);
    if (*cen) return cmd_census(data, rare_max, common_max, thresholds, clusters);
    if (*trn) return cmd_run(config, out, false);
    if (*run) return cmd_run(config, out, true);
    if (*ev) return cmd_eval(run_dir, eval_tau);
    if (*tn) return cmd_taunorm(head, partition, tau, out);
    if (*sw) return cmd_sweep(config, param, values, out);
    if (*cmp) return cmd_compare(reports, metric, out);
    if (*gc) return cmd_gradcheck(instances, seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitOther;
  }
  return kExitOther;
}
