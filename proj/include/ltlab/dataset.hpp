#pragma once

// Long-tailed feature datasets: synthetic generation, census, and file I/O.

#include "ltlab/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace ltlab {

struct Dataset {
  Matrix features;                  // n x d
  std::vector<std::size_t> labels;  // n, each < num_categories
  std::size_t num_categories = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

  void validate() const {
    if (labels.empty()) throw std::invalid_argument("dataset must contain at least one sample");
    if (features.cols() < 1) throw std::invalid_argument("feature dimension must be >= 1");
    if (static_cast<std::size_t>(features.rows()) != labels.size()) {
      throw std::invalid_argument("feature rows and label count differ");
    }
    for (std::size_t label : labels) {
      if (label >= num_categories) throw std::invalid_argument("label out of range");
    }
  }
};

enum class FrequencyTag { rare, common, frequent };

inline const char* to_string(FrequencyTag t) {
  switch (t) {
    case FrequencyTag::rare: return "rare";
    case FrequencyTag::common: return "common";
    case FrequencyTag::frequent: return "frequent";
  }
  return "?";
}

/// Instance-count boundaries for rare/common/frequent reporting (inclusive upper bounds).
struct FrequencyThresholds {
  std::uint64_t rare_max = 10;
  std::uint64_t common_max = 100;
};

struct ClassCensus {
  std::vector<std::uint64_t> counts;
  std::vector<FrequencyTag> tags;
  FrequencyThresholds thresholds;

  std::size_t num_categories() const { return counts.size(); }
  std::uint64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }
};

inline FrequencyTag frequency_tag(std::uint64_t count, const FrequencyThresholds& t) {
  if (count <= t.rare_max) return FrequencyTag::rare;
  if (count <= t.common_max) return FrequencyTag::common;
  return FrequencyTag::frequent;
}

inline ClassCensus census_from_counts(std::vector<std::uint64_t> counts, FrequencyThresholds thresholds = {}) {
  if (thresholds.rare_max >= thresholds.common_max) {
    throw std::invalid_argument("census thresholds must satisfy rare_max < common_max");
  }
  ClassCensus c;
  c.thresholds = thresholds;
  c.tags.reserve(counts.size());
  for (auto n : counts) c.tags.push_back(frequency_tag(n, thresholds));
  c.counts = std::move(counts);
  return c;
}

inline ClassCensus census(const Dataset& ds, FrequencyThresholds thresholds = {}) {
  std::vector<std::uint64_t> counts(ds.num_categories, 0);
  for (std::size_t label : ds.labels) ++counts.at(label);
  return census_from_counts(std::move(counts), thresholds);
}

struct GeneratorConfig {
  std::size_t num_categories = 60;
  std::size_t feature_dim = 32;
  double zipf_exponent = 1.5;
  std::uint64_t max_count = 2000;
  std::uint64_t min_count = 5;
  double head_sigma = 1.0;
  double tail_sigma = 0.5;
  double nesting_fraction = 0.5;
  // Std of the isotropic Gaussian that non-nested class centers are drawn from.
  double center_scale = 1.0;
  // Constant added to every coordinate of every center (shared feature mean).
  double center_offset = 0.0;
  // Classes with count above this are head classes; the rest are tail.
  std::uint64_t head_count_threshold = 100;
  // Balanced held-out samples per class (0 disables the test split).
  std::uint64_t test_per_class = 100;
  std::uint64_t max_total = 1'000'000;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_categories < 1) throw std::invalid_argument("num_categories must be >= 1");
    if (feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
    if (!(zipf_exponent >= 0.0)) throw std::invalid_argument("zipf_exponent must be >= 0");
    if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");
    if (max_count < min_count) throw std::invalid_argument("max_count must be >= min_count");
    if (!(head_sigma > 0.0) || !(tail_sigma > 0.0)) throw std::invalid_argument("sigmas must be positive");
    if (tail_sigma > head_sigma) throw std::invalid_argument("tail_sigma must not exceed head_sigma");
    if (!(nesting_fraction >= 0.0 && nesting_fraction <= 1.0)) {
      throw std::invalid_argument("nesting_fraction must lie in [0, 1]");
    }
    if (!(center_scale >= 0.0)) throw std::invalid_argument("center_scale must be >= 0");
  }
};

/// Per-class training counts: max_count * (k+1)^-exponent, rounded and clamped.
inline std::vector<std::uint64_t> zipf_counts(const GeneratorConfig& cfg) {
  std::vector<std::uint64_t> counts(cfg.num_categories);
  for (std::size_t k = 0; k < cfg.num_categories; ++k) {
    const double raw = static_cast<double>(cfg.max_count) * std::pow(static_cast<double>(k + 1), -cfg.zipf_exponent);
    const auto rounded = static_cast<std::uint64_t>(std::llround(raw));
    counts[k] = std::clamp(rounded, cfg.min_count, cfg.max_count);
  }
  return counts;
}

struct SyntheticBenchmark {
  Dataset train;
  Dataset test;  // empty when test_per_class == 0
  Matrix centers;
  std::vector<bool> nested;  // per class: center placed inside a head cluster
};

/// Draws class centers and samples. Tail centers chosen for nesting sit within
/// head_sigma of a uniformly chosen head center. Values are rounded to float
/// precision so the binary format round-trips exactly.
inline SyntheticBenchmark generate_benchmark(const GeneratorConfig& cfg) {
  cfg.validate();
  const auto counts = zipf_counts(cfg);
  const std::uint64_t total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}) +
                              cfg.test_per_class * cfg.num_categories;
  if (total > cfg.max_total) {
    throw std::invalid_argument("generator would emit " + std::to_string(total) + " samples, cap is " +
                                std::to_string(cfg.max_total));
  }

  const std::size_t C = cfg.num_categories;
  const auto d = static_cast<Eigen::Index>(cfg.feature_dim);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  std::vector<std::size_t> head, tail;
  for (std::size_t k = 0; k < C; ++k) {
    (counts[k] > cfg.head_count_threshold ? head : tail).push_back(k);
  }
  std::vector<bool> nested(C, false);
  if (!head.empty()) {
    std::vector<std::size_t> order = tail;
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_nested = static_cast<std::size_t>(std::llround(cfg.nesting_fraction * static_cast<double>(tail.size())));
    for (std::size_t i = 0; i < n_nested; ++i) nested[order[i]] = true;
  }

  SyntheticBenchmark out;
  out.centers.resize(static_cast<Eigen::Index>(C), d);
  for (std::size_t k = 0; k < C; ++k) {
    if (nested[k]) continue;
    for (Eigen::Index j = 0; j < d; ++j) {
      out.centers(static_cast<Eigen::Index>(k), j) = cfg.center_offset + cfg.center_scale * normal(rng);
    }
  }
  std::uniform_int_distribution<std::size_t> pick_head(0, head.empty() ? 0 : head.size() - 1);
  for (std::size_t k = 0; k < C; ++k) {
    if (!nested[k]) continue;
    Vector dir(d);
    for (Eigen::Index j = 0; j < d; ++j) dir(j) = normal(rng);
    dir /= dir.norm();
    const double radius = cfg.head_sigma * uniform(rng);
    out.centers.row(static_cast<Eigen::Index>(k)) =
        out.centers.row(static_cast<Eigen::Index>(head[pick_head(rng)])) + radius * dir.transpose();
  }

  auto draw = [&](Dataset& ds, auto count_of) {
    ds.num_categories = C;
    std::uint64_t n = 0;
    for (std::size_t k = 0; k < C; ++k) n += count_of(k);
    ds.features.resize(static_cast<Eigen::Index>(n), d);
    ds.labels.clear();
    ds.labels.reserve(n);
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < C; ++k) {
      const double sigma = counts[k] > cfg.head_count_threshold ? cfg.head_sigma : cfg.tail_sigma;
      for (std::uint64_t i = 0; i < count_of(k); ++i, ++row) {
        for (Eigen::Index j = 0; j < d; ++j) {
          const double v = out.centers(static_cast<Eigen::Index>(k), j) + sigma * normal(rng);
          ds.features(row, j) = static_cast<double>(static_cast<float>(v));
        }
        ds.labels.push_back(k);
      }
    }
  };
  draw(out.train, [&](std::size_t k) { return counts[k]; });
  if (cfg.test_per_class > 0) draw(out.test, [&](std::size_t) { return cfg.test_per_class; });
  out.nested = std::move(nested);
  return out;
}

inline Dataset generate_synthetic(const GeneratorConfig& cfg) { return generate_benchmark(cfg).train; }

inline std::uint64_t dataset_hash(const Dataset& ds) {
  Fnv1a h;
  const std::uint64_t header[3] = {ds.size(), ds.dim(), ds.num_categories};
  h.update(header, sizeof header);
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
    const auto label = static_cast<std::uint64_t>(ds.labels[static_cast<std::size_t>(i)]);
    h.update(&label, sizeof label);
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
      const float f = static_cast<float>(ds.features(i, j));
      h.update(&f, sizeof f);
    }
  }
  return h.digest();
}

enum class DatasetFormat { csv, binary };

inline DatasetFormat dataset_format_from_path(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0 ? DatasetFormat::csv
                                                                          : DatasetFormat::binary;
}

namespace detail {

inline void check_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument(std::string(what) + " does not fit the 32-bit file header");
  }
}

inline std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::uint64_t parse_uint(const std::string& s, const std::string& where, const char* what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || (!s.empty() && s[0] == '-')) {
    throw FormatError(std::string("malformed ") + what + " '" + s + "'", where);
  }
  return v;
}

inline double parse_real(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw FormatError("malformed feature value '" + s + "'", where);
  return v;
}

}  // namespace detail

inline void save_dataset_csv(const Dataset& ds, std::ostream& os) {
  ds.validate();
  os << ds.size() << ',' << ds.dim() << ',' << ds.num_categories << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
    os << ds.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(static_cast<float>(ds.features(i, j))));
      os << buf;
    }
    os << '\n';
  }
}

inline Dataset load_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.empty()) throw FormatError("malformed header", "line 1");
  const auto header = detail::split_commas(line);
  if (header.size() != 3) throw FormatError("malformed header: expected n,d,C", "line 1");
  const auto n = detail::parse_uint(header[0], "line 1", "header field n");
  const auto d = detail::parse_uint(header[1], "line 1", "header field d");
  const auto C = detail::parse_uint(header[2], "line 1", "header field C");
  if (n < 1 || d < 1) throw FormatError("malformed header: n and d must be >= 1", "line 1");

  Dataset ds;
  ds.num_categories = static_cast<std::size_t>(C);
  ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  ds.labels.reserve(static_cast<std::size_t>(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string where = "line " + std::to_string(i + 2);
    if (!std::getline(is, line)) throw FormatError("expected " + std::to_string(n) + " rows", where);
    const auto fields = detail::split_commas(line);
    if (fields.size() != d + 1) {
      throw FormatError("inconsistent row width: expected " + std::to_string(d + 1) + " fields, got " +
                            std::to_string(fields.size()),
                        where);
    }
    const auto label = detail::parse_uint(fields[0], where, "label");
    if (label >= C) throw FormatError("label " + std::to_string(label) + " >= declared C", where);
    ds.labels.push_back(static_cast<std::size_t>(label));
    for (std::uint64_t j = 0; j < d; ++j) {
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = detail::parse_real(fields[j + 1], where);
    }
  }
  return ds;
}

inline void save_dataset_binary(const Dataset& ds, std::ostream& os) {
  ds.validate();
  detail::check_u32(ds.size(), "n");
  detail::check_u32(ds.dim(), "d");
  detail::check_u32(ds.num_categories, "C");
  io::write_magic(os, "LTFV");
  io::write_u32(os, 1);
  io::write_u32(os, static_cast<std::uint32_t>(ds.size()));
  io::write_u32(os, static_cast<std::uint32_t>(ds.dim()));
  io::write_u32(os, static_cast<std::uint32_t>(ds.num_categories));
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
    io::write_u32(os, static_cast<std::uint32_t>(ds.labels[static_cast<std::size_t>(i)]));
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) io::write_f32(os, static_cast<float>(ds.features(i, j)));
  }
}

inline Dataset load_dataset_binary(std::istream& is) {
  io::expect_magic(is, "LTFV");
  io::expect_version(is, 1);
  const auto n = io::read_u32(is, "n");
  const auto d = io::read_u32(is, "d");
  const auto C = io::read_u32(is, "C");
  if (n < 1 || d < 1) throw FormatError("malformed header: n and d must be >= 1", "offset 8");
  Dataset ds;
  ds.num_categories = C;
  ds.features.resize(n, d);
  ds.labels.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto offset = static_cast<long long>(is.tellg());
    const auto label = io::read_u32(is, "label");
    if (label >= C) {
      throw FormatError("label " + std::to_string(label) + " >= declared C", "offset " + std::to_string(offset));
    }
    ds.labels.push_back(label);
    for (std::uint32_t j = 0; j < d; ++j) ds.features(i, j) = io::read_f32(is, "feature");
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path, DatasetFormat format) {
  std::ofstream os(path, format == DatasetFormat::binary ? std::ios::binary : std::ios::out);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  if (format == DatasetFormat::binary) {
    save_dataset_binary(ds, os);
  } else {
    save_dataset_csv(ds, os);
  }
}

inline Dataset load_dataset(const std::string& path, DatasetFormat format) {
  std::ifstream is(path, format == DatasetFormat::binary ? std::ios::binary : std::ios::in);
  if (!is) throw std::runtime_error("cannot open " + path);
  return format == DatasetFormat::binary ? load_dataset_binary(is) : load_dataset_csv(is);
}

}  // namespace ltlab
