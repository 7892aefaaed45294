#pragma once

// Class-mean metrics, frequency-group reports, weight-norm tables and bin censuses.

#include "ltlab/binning.hpp"
#include "ltlab/classifier.hpp"
#include "ltlab/core.hpp"
#include "ltlab/dataset.hpp"
#include "ltlab/inference.hpp"
#include "ltlab/metric.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace ltlab {

/// Per-class accuracy; classes without samples are absent (nullopt).
inline std::vector<std::optional<double>> per_class_accuracy(std::span<const std::size_t> predictions,
                                                             std::span<const std::size_t> labels, std::size_t C) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("predictions and labels differ in length");
  std::vector<std::size_t> correct(C, 0), total(C, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= C) throw std::invalid_argument("label out of range");
    ++total[labels[i]];
    if (predictions[i] == labels[i]) ++correct[labels[i]];
  }
  std::vector<std::optional<double>> acc(C);
  for (std::size_t k = 0; k < C; ++k) {
    if (total[k] > 0) acc[k] = static_cast<double>(correct[k]) / static_cast<double>(total[k]);
  }
  return acc;
}

inline std::vector<std::size_t> labels_of(const std::vector<Prediction>& preds) {
  std::vector<std::size_t> out(preds.size());
  std::transform(preds.begin(), preds.end(), out.begin(), [](const Prediction& p) { return p.label; });
  return out;
}

struct GroupReport {
  std::optional<double> overall, rare, common, frequent;

  std::optional<double> get(std::string_view group) const {
    if (group == "overall") return overall;
    if (group == "rare") return rare;
    if (group == "common") return common;
    if (group == "frequent") return frequent;
    throw std::invalid_argument("unknown group " + std::string(group));
  }
};

inline const std::vector<std::string>& report_groups() {
  static const std::vector<std::string> g{"overall", "rare", "common", "frequent"};
  return g;
}

/// Unweighted means of per-class values, overall and per frequency tag. A group
/// with no present class is absent rather than 0.
inline GroupReport group_report(const std::vector<std::optional<double>>& per_class, const ClassCensus& census) {
  if (census.num_categories() < per_class.size()) throw std::invalid_argument("census does not cover all classes");
  double sums[4] = {0, 0, 0, 0};
  std::size_t ns[4] = {0, 0, 0, 0};
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    if (!per_class[k]) continue;
    const std::size_t g = 1 + static_cast<std::size_t>(census.tags[k]);
    sums[0] += *per_class[k];
    ++ns[0];
    sums[g] += *per_class[k];
    ++ns[g];
  }
  auto mean = [&](std::size_t g) -> std::optional<double> {
    if (ns[g] == 0) return std::nullopt;
    return sums[g] / static_cast<double>(ns[g]);
  };
  return {mean(0), mean(1), mean(2), mean(3)};
}

/// Mean of a report's rare and common entries, skipping absent ones.
inline std::optional<double> rare_common_mean(const GroupReport& r) {
  if (r.rare && r.common) return 0.5 * (*r.rare + *r.common);
  return r.rare ? r.rare : r.common;
}

struct WeightNormReport {
  std::vector<double> taus;
  std::vector<std::size_t> order;        // categories by descending count (ties by id)
  std::vector<std::uint64_t> counts;     // counts in `order`
  std::vector<std::vector<double>> norms;  // norms[t][i] for category order[i]
};

inline std::vector<std::size_t> order_by_count(const ClassCensus& census) {
  std::vector<std::size_t> order(census.num_categories());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return census.counts[a] > census.counts[b]; });
  return order;
}

inline WeightNormReport weight_norm_report(const ClassifierHead& head, const ClassCensus& census,
                                           const std::vector<double>& taus) {
  if (head.num_categories() != census.num_categories()) throw std::invalid_argument("head/census category mismatch");
  WeightNormReport r;
  r.taus = taus;
  r.order = order_by_count(census);
  for (std::size_t k : r.order) r.counts.push_back(census.counts[k]);
  for (double tau : taus) {
    const auto norms = weight_norms(tau_normalize(head, tau));
    std::vector<double> row;
    row.reserve(norms.size());
    for (std::size_t k : r.order) row.push_back(norms[k]);
    r.norms.push_back(std::move(row));
  }
  return r;
}

inline void write_weight_norm_csv(std::ostream& os, const WeightNormReport& r) {
  os << "category,count";
  char buf[48];
  for (double tau : r.taus) {
    std::snprintf(buf, sizeof buf, ",tau=%g", tau);
    os << buf;
  }
  os << '\n';
  for (std::size_t i = 0; i < r.order.size(); ++i) {
    os << r.order[i] << ',' << r.counts[i];
    for (const auto& row : r.norms) {
      std::snprintf(buf, sizeof buf, ",%.17g", row[i]);
      os << buf;
    }
    os << '\n';
  }
}

struct BinRow {
  std::size_t group = 0;
  std::vector<std::size_t> categories;
  std::vector<std::uint64_t> counts;
  std::uint64_t min_count = 0;
  std::uint64_t max_count = 0;
  double imbalance_ratio = 0.0;  // max / min; 0 for an empty bin
};

inline std::vector<BinRow> bin_census(const ClassCensus& census, const GroupPartition& p) {
  if (p.num_categories() != census.num_categories()) throw std::invalid_argument("partition/census mismatch");
  std::vector<BinRow> rows;
  for (std::size_t n = 1; n <= p.num_groups(); ++n) {
    BinRow row;
    row.group = n;
    row.categories = p.members(n);
    for (std::size_t k : row.categories) row.counts.push_back(census.counts[k]);
    if (!row.counts.empty()) {
      const auto [lo, hi] = std::minmax_element(row.counts.begin(), row.counts.end());
      row.min_count = *lo;
      row.max_count = *hi;
      row.imbalance_ratio = *lo > 0 ? static_cast<double>(*hi) / static_cast<double>(*lo)
                                    : std::numeric_limits<double>::infinity();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_bin_census_csv(std::ostream& os, const std::vector<BinRow>& rows) {
  os << "group,categories,instances,min_count,max_count,imbalance_ratio\n";
  for (const auto& r : rows) {
    const auto total = std::accumulate(r.counts.begin(), r.counts.end(), std::uint64_t{0});
    os << r.group << ',' << r.categories.size() << ',' << total << ',' << r.min_count << ',' << r.max_count << ','
       << r.imbalance_ratio << '\n';
  }
}

/// Mean ||x - c_y|| per class over the given samples; absent for classes with no samples.
inline std::vector<std::optional<double>> intra_class_spread(const Matrix& features,
                                                             std::span<const std::size_t> labels,
                                                             const CenterBank& bank) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) throw std::invalid_argument("batch size mismatch");
  const std::size_t C = bank.num_classes();
  std::vector<double> sum(C, 0.0);
  std::vector<std::size_t> n(C, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!bank.initialized(labels[i])) {
      throw std::invalid_argument("center for class " + std::to_string(labels[i]) + " is not initialized");
    }
    sum[labels[i]] += (features.row(static_cast<Eigen::Index>(i)) - bank.center(labels[i])).norm();
    ++n[labels[i]];
  }
  std::vector<std::optional<double>> out(C);
  for (std::size_t k = 0; k < C; ++k) {
    if (n[k] > 0) out[k] = sum[k] / static_cast<double>(n[k]);
  }
  return out;
}

inline std::optional<double> mean_present(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : v) {
    if (x) {
      s += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

namespace detail {

inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman needs two equal-length series");
  const auto ra = detail::average_ranks(a);
  const auto rb = detail::average_ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size());
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da == 0.0 || db == 0.0) return 0.0;
  return num / std::sqrt(da * db);
}

}  // namespace ltlab
