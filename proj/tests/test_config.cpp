#include "ltlab/config.hpp"
#include "support/oracle.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace ltlab;
using nlohmann::json;

namespace {

json minimal() { return json::object({{"schema_version", 1}}); }

std::string error_path(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.key_path();
  }
  return "<no error>";
}

}  // namespace

TEST(Config, MinimalDocumentGivesDefaults) {
  const auto c = parse_config(minimal());
  EXPECT_EQ(c.name, "run");
  EXPECT_EQ(c.train.loss.kind, LossKind::ce);
  EXPECT_EQ(c.resolved_method(), "softmax");
  EXPECT_EQ(c.partition.thresholds, default_bin_thresholds());
  EXPECT_EQ(c.train.loss.beta, 8.0);
  EXPECT_FALSE(c.head_bias());
}

TEST(Config, SchemaVersionIsRequired) {
  EXPECT_EQ(error_path(json::object()), "/schema_version");
  EXPECT_EQ(error_path({{"schema_version", 2}}), "/schema_version");
}

TEST(Config, UnknownKeysCarryTheirPath) {
  auto j = minimal();
  j["loss"] = {{"kind", "bags"}, {"betta", 2}};
  EXPECT_EQ(error_path(j), "/loss/betta");
  j = minimal();
  j["data"] = {{"generator", {{"num_classes", 4}}}};
  EXPECT_EQ(error_path(j), "/data/generator/num_classes");
  j = minimal();
  j["extra"] = true;
  EXPECT_EQ(error_path(j), "/extra");
}

TEST(Config, TypeErrorsCarryTheirPath) {
  auto j = minimal();
  j["train"] = {{"epochs", "ten"}};
  EXPECT_EQ(error_path(j), "/train/epochs");
  j = minimal();
  j["train"] = {{"epochs", -1}};
  EXPECT_EQ(error_path(j), "/train/epochs");
  j = minimal();
  j["partition"] = {{"thresholds", {0, 10.5}}};
  EXPECT_EQ(error_path(j), "/partition/thresholds");
  j["partition"] = {{"thresholds", {5, 10}}};
  EXPECT_EQ(error_path(j), "/partition/thresholds");
  j = minimal();
  j["model"] = 3;
  EXPECT_EQ(error_path(j), "/model");
}

TEST(Config, EnumeratedValuesAreChecked) {
  auto j = minimal();
  j["loss"] = {{"kind", "arcface"}};
  try {
    parse_config(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key_path(), "/loss/kind");
    EXPECT_NE(std::string(e.what()).find("ce|bags|center|lmcl|ece"), std::string::npos);
  }
}

TEST(Config, RangeChecks) {
  auto j = minimal();
  j["loss"] = {{"beta", 0}};
  EXPECT_EQ(error_path(j), "/loss/beta");
  j = minimal();
  j["inference"] = {{"tau", 1.5}};
  EXPECT_EQ(error_path(j), "/inference/tau");
  j = minimal();
  j["train"] = {{"momentum", 1.0}};
  EXPECT_EQ(error_path(j), "/train");
  j = minimal();
  j["data"] = {{"generator", {{"tail_sigma", 3.0}}}};
  EXPECT_EQ(error_path(j), "/data/generator");
  j = minimal();
  j["census"] = {{"rare_max", 200}};
  EXPECT_EQ(error_path(j), "/census");
  j = minimal();
  j["data"] = {{"source", "files"}};
  EXPECT_EQ(error_path(j), "/data/train_path");
}

TEST(Config, ZeroLearningRateIsAllowed) {
  auto j = minimal();
  j["train"] = {{"learning_rate", 0.0}};
  EXPECT_EQ(parse_config(j).train.learning_rate, 0.0);
}

TEST(Config, InferenceMustMatchTheHead) {
  auto j = minimal();
  j["inference"] = {{"method", "bags"}};
  EXPECT_EQ(error_path(j), "/inference/method");
  j = minimal();
  j["loss"] = {{"kind", "bags"}};
  j["inference"] = {{"method", "softmax"}};
  EXPECT_EQ(error_path(j), "/inference/method");
  j = minimal();
  j["inference"] = {{"method", "knn"}};
  EXPECT_EQ(error_path(j), "/inference/method");
  j["loss"] = {{"kind", "center"}};
  EXPECT_EQ(parse_config(j).resolved_method(), "knn");
}

TEST(Config, AutoSettingsFollowTheLoss) {
  auto j = minimal();
  j["loss"] = {{"kind", "bags"}};
  auto c = parse_config(j);
  EXPECT_EQ(c.resolved_method(), "bags");
  EXPECT_TRUE(c.head_bias());
  EXPECT_TRUE(c.uses_partition());
  j["loss"] = {{"kind", "lmcl"}};
  EXPECT_EQ(parse_config(j).resolved_method(), "cosine");
  j["loss"] = {{"kind", "ece"}};
  EXPECT_EQ(parse_config(j).resolved_method(), "euclidean");
  j["model"] = {{"bias", "on"}};
  EXPECT_TRUE(parse_config(j).head_bias());
}

TEST(Config, SeedReachesGeneratorAndTrainer) {
  auto j = minimal();
  j["seed"] = 42;
  const auto c = parse_config(j);
  EXPECT_EQ(c.data.generator.seed, 42u);
  EXPECT_EQ(c.train.seed, 42u);
}

// Every leaf set away from its default must survive parse -> to_json -> parse.
TEST(Config, EveryFieldRoundTrips) {
  const json full = {
      {"schema_version", 1},
      {"name", "coverage"},
      {"seed", 17},
      {"data",
       {{"source", "files"},
        {"train_path", "a.csv"},
        {"test_path", "b.csv"},
        {"generator",
         {{"num_categories", 7},
          {"feature_dim", 5},
          {"zipf_exponent", 1.1},
          {"max_count", 900},
          {"min_count", 3},
          {"head_sigma", 1.5},
          {"tail_sigma", 0.25},
          {"nesting_fraction", 0.75},
          {"center_scale", 2.5},
          {"center_offset", -0.5},
          {"head_count_threshold", 50},
          {"test_per_class", 9},
          {"max_total", 50000}}}}},
      {"census", {{"rare_max", 5}, {"common_max", 50}}},
      {"partition", {{"strategy", "random"}, {"thresholds", {0, 20, 200, 2000}}, {"clusters", 3}}},
      {"model", {{"embed", true}, {"bias", "on"}, {"init_std", 0.1}}},
      {"train",
       {{"epochs", 3},
        {"batch_size", 16},
        {"learning_rate", 0.2},
        {"momentum", 0.5},
        {"background_samples", 11},
        {"background_sigma", 2.0}}},
      {"loss",
       {{"kind", "bags"},
        {"mode", "hybrid"},
        {"gamma", 1.5},
        {"beta", 2.0},
        {"lambda", 0.1},
        {"alpha", 0.25},
        {"s", 16.0},
        {"m", 0.2},
        {"t", 3.0},
        {"hybrid_upper_bound", 200}}},
      {"inference", {{"method", "bags"}, {"tau", 0.5}, {"knn_distance", "squared"}}},
      {"report", {{"tau_values", {0.25, 0.75, 0.9}}, {"export_features", true}, {"epoch_metrics", true}}},
  };
  const auto c = parse_config(full);
  const json out = to_json(c);
  EXPECT_EQ(out, full) << json::diff(full, out).dump(2);
  EXPECT_EQ(to_json(parse_config(out)), out);

  // Each leaf must differ from the default, or the round trip proves nothing.
  const json defaults = to_json(parse_config(minimal()));
  const json flat = full.flatten(), flat_defaults = defaults.flatten();
  for (const auto& [path, value] : flat.items()) {
    if (path == "/schema_version" || path == "/partition/thresholds/0") continue;
    ASSERT_TRUE(flat_defaults.contains(path)) << path;
    EXPECT_NE(flat_defaults[path], value) << path;
  }
  EXPECT_EQ(flat.size(), flat_defaults.size());
}

TEST(Config, HashTracksContent) {
  auto a = parse_config(minimal());
  auto b = a;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.train.loss.lambda = 0.1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(MergePatch, FollowsRfc7386) {
  json target = {{"a", 1}, {"b", {{"c", 2}, {"d", 3}}}, {"e", {1, 2}}};
  merge_patch(target, {{"b", {{"c", 5}, {"d", nullptr}}}, {"e", {9}}, {"f", "new"}});
  EXPECT_EQ(target, (json{{"a", 1}, {"b", {{"c", 5}}}, {"e", {9}}, {"f", "new"}}));
}

TEST(ReadJsonFile, ErrorsNameTheFile) {
  oracle::TempDir dir("config");
  const auto path = (dir / "bad.json").string();
  std::ofstream(path) << "{ not json";
  try {
    read_json_file(path);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key_path(), path);
  }
  EXPECT_THROW(read_json_file((dir / "missing.json").string()), ConfigError);
}

TEST(ShippedConfigs, AllParse) {
  const std::filesystem::path root = LTLAB_SOURCE_DIR;
  std::size_t seen = 0;
  for (const auto& entry : std::filesystem::directory_iterator(root / "configs")) {
    const json j = read_json_file(entry.path().string());
    if (j.contains("runs")) continue;
    EXPECT_NO_THROW(parse_config(j)) << entry.path();
    ++seen;
  }
  EXPECT_GE(seen, 3u);
}
