#pragma once

// Category -> group partitions for group-wise softmax training.
//
// Extended logit layout for N foreground groups over C categories:
//   [0]            background
//   [1]            G0 "Others" (foreground)
//   then, for n = 1..N: the categories of G_n in ascending id, then G_n's "Others" slot.
// Total size (C + 1) + (N + 1).

#include "ltlab/core.hpp"
#include "ltlab/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace ltlab {

inline constexpr std::uint64_t kUnbounded = std::numeric_limits<std::uint64_t>::max();

inline const std::vector<std::uint64_t>& default_bin_thresholds() {
  static const std::vector<std::uint64_t> t{0, 10, 100, 1000};
  return t;
}

inline const std::vector<std::uint64_t>& five_bin_thresholds() {
  static const std::vector<std::uint64_t> t{0, 10, 100, 500, 1000};
  return t;
}

struct GroupRange {
  std::size_t begin = 0;  // first output index
  std::size_t end = 0;    // one past the group's "Others" slot
};

class GroupPartition {
 public:
  GroupPartition() = default;

  /// Builds the output layout from an explicit assignment. `group_of[k]` is in [1, N];
  /// `bounds` holds the N lower instance-count bounds.
  static GroupPartition from_assignment(std::string strategy, std::vector<std::size_t> group_of,
                                        std::vector<std::uint64_t> bounds) {
    GroupPartition p;
    p.strategy_ = std::move(strategy);
    p.num_groups_ = bounds.size();
    if (p.num_groups_ < 1) throw std::invalid_argument("partition needs at least one foreground group");
    for (std::size_t n = 1; n < bounds.size(); ++n) {
      if (bounds[n] <= bounds[n - 1]) throw std::invalid_argument("group bounds must be strictly increasing");
    }
    p.members_.assign(p.num_groups_ + 1, {});
    for (std::size_t k = 0; k < group_of.size(); ++k) {
      if (group_of[k] < 1 || group_of[k] > p.num_groups_) {
        throw std::invalid_argument("category " + std::to_string(k) + " assigned to invalid group");
      }
      p.members_[group_of[k]].push_back(k);
    }
    p.group_of_ = std::move(group_of);
    p.bounds_ = std::move(bounds);

    p.output_map_.assign(p.group_of_.size(), 0);
    p.ranges_.assign(p.num_groups_ + 1, {});
    p.others_slot_.assign(p.num_groups_ + 1, 0);
    p.ranges_[0] = {0, 2};
    p.others_slot_[0] = 1;
    std::size_t next = 2;
    for (std::size_t n = 1; n <= p.num_groups_; ++n) {
      p.ranges_[n].begin = next;
      for (std::size_t k : p.members_[n]) p.output_map_[k] = next++;
      p.others_slot_[n] = next++;
      p.ranges_[n].end = next;
      if (p.members_[n].empty()) p.warnings_.push_back("group " + std::to_string(n) + " is empty");
    }
    return p;
  }

  const std::string& strategy() const { return strategy_; }
  std::size_t num_categories() const { return group_of_.size(); }
  std::size_t num_groups() const { return num_groups_; }
  std::size_t logit_size() const { return num_categories() + num_groups_ + 2; }
  std::size_t group_of(std::size_t category) const { return group_of_.at(category); }
  const std::vector<std::size_t>& assignment() const { return group_of_; }
  const std::vector<std::uint64_t>& bounds() const { return bounds_; }
  /// Upper instance-count bound of group n (exclusive); kUnbounded for the last group.
  std::uint64_t upper_bound(std::size_t n) const { return n < num_groups_ ? bounds_[n] : kUnbounded; }
  std::uint64_t lower_bound(std::size_t n) const { return bounds_.at(n - 1); }
  const std::vector<std::size_t>& members(std::size_t n) const { return members_.at(n); }
  std::size_t output_index(std::size_t category) const { return output_map_.at(category); }
  const std::vector<std::size_t>& output_map() const { return output_map_; }
  std::size_t others_slot(std::size_t n) const { return others_slot_.at(n); }
  std::size_t background_slot() const { return 0; }
  GroupRange range(std::size_t n) const { return ranges_.at(n); }
  const std::vector<std::string>& warnings() const { return warnings_; }

  // Bookkeeping carried through serialization.
  std::uint64_t seed = 0;
  std::size_t clusters = 0;

  friend bool operator==(const GroupPartition& a, const GroupPartition& b) {
    return a.strategy_ == b.strategy_ && a.group_of_ == b.group_of_ && a.bounds_ == b.bounds_ &&
           a.seed == b.seed && a.clusters == b.clusters;
  }

 private:
  std::string strategy_;
  std::size_t num_groups_ = 0;
  std::vector<std::size_t> group_of_;
  std::vector<std::uint64_t> bounds_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::size_t> output_map_;
  std::vector<std::size_t> others_slot_;
  std::vector<GroupRange> ranges_;
  std::vector<std::string> warnings_;
};

/// Assigns each category to the group whose [s_n, s_{n+1}) range holds its count.
inline GroupPartition partition_fixed(const ClassCensus& census,
                                      const std::vector<std::uint64_t>& thresholds = default_bin_thresholds(),
                                      std::string strategy = "fixed") {
  if (thresholds.empty() || thresholds.front() != 0) {
    throw std::invalid_argument("thresholds must start at 0");
  }
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (thresholds[i] <= thresholds[i - 1]) throw std::invalid_argument("thresholds must be strictly increasing");
  }
  std::vector<std::size_t> group_of(census.num_categories());
  for (std::size_t k = 0; k < group_of.size(); ++k) {
    const auto it = std::upper_bound(thresholds.begin(), thresholds.end(), census.counts[k]);
    group_of[k] = static_cast<std::size_t>(it - thresholds.begin());
  }
  return GroupPartition::from_assignment(std::move(strategy), std::move(group_of), thresholds);
}

/// 1-D k-means over log(count + 1), quantile-initialized on the distinct values and
/// iterated until assignments stop changing. Cluster minima become bin lower bounds.
inline GroupPartition partition_clustered(const ClassCensus& census, std::size_t k) {
  if (k < 2) throw std::invalid_argument("clustered partition needs k >= 2");
  std::set<std::uint64_t> distinct(census.counts.begin(), census.counts.end());
  if (k > distinct.size()) {
    throw std::invalid_argument("k = " + std::to_string(k) + " exceeds the " + std::to_string(distinct.size()) +
                                " distinct instance counts");
  }
  const std::vector<std::uint64_t> values(distinct.begin(), distinct.end());
  std::map<std::uint64_t, std::size_t> multiplicity;
  for (auto c : census.counts) ++multiplicity[c];
  auto log1 = [](std::uint64_t c) { return std::log(static_cast<double>(c) + 1.0); };

  std::vector<double> centroids(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto idx = static_cast<std::size_t>((static_cast<double>(i) + 0.5) * static_cast<double>(values.size()) /
                                              static_cast<double>(k));
    centroids[i] = log1(values[std::min(idx, values.size() - 1)]);
  }

  std::vector<std::size_t> assign(values.size(), 0);
  for (int iter = 0; iter < 1000; ++iter) {
    bool changed = iter == 0;
    for (std::size_t v = 0; v < values.size(); ++v) {
      const double x = log1(values[v]);
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c) {
        if (std::abs(x - centroids[c]) < std::abs(x - centroids[best])) best = c;
      }
      if (best != assign[v]) {
        assign[v] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<double> sum(k, 0.0), weight(k, 0.0);
    for (std::size_t v = 0; v < values.size(); ++v) {
      const auto m = static_cast<double>(multiplicity[values[v]]);
      sum[assign[v]] += m * log1(values[v]);
      weight[assign[v]] += m;
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (weight[c] > 0) centroids[c] = sum[c] / weight[c];
    }
  }

  // Clusters are intervals on the sorted values; each cluster's minimum is a bound.
  std::vector<std::uint64_t> thresholds{0};
  for (std::size_t v = 1; v < values.size(); ++v) {
    if (assign[v] != assign[v - 1]) thresholds.push_back(values[v]);
  }
  auto p = partition_fixed(census, thresholds, "clustered");
  p.clusters = k;
  return p;
}

/// Keeps the template's group sizes and bounds but deals categories out by a
/// seeded uniform permutation.
inline GroupPartition partition_random(const ClassCensus& census, const GroupPartition& tmpl, std::uint64_t seed) {
  if (tmpl.num_categories() != census.num_categories()) {
    throw std::invalid_argument("template partition covers a different number of categories");
  }
  std::vector<std::size_t> perm(census.num_categories());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> group_of(census.num_categories());
  std::size_t pos = 0;
  for (std::size_t n = 1; n <= tmpl.num_groups(); ++n) {
    for (std::size_t i = 0; i < tmpl.members(n).size(); ++i) group_of[perm[pos++]] = n;
  }
  auto p = GroupPartition::from_assignment("random", std::move(group_of), tmpl.bounds());
  p.seed = seed;
  return p;
}

/// Per-sample, per-group "Others" activation. Column 0 (G0) is always set; column n
/// is set for in-group samples and for the capped subsample of out-of-group samples.
struct OthersMask {
  std::size_t batch = 0;
  std::size_t groups = 0;  // N + 1
  std::vector<std::uint8_t> keep;

  std::span<const std::uint8_t> row(std::size_t i) const { return {keep.data() + i * groups, groups}; }
  bool at(std::size_t i, std::size_t n) const { return keep[i * groups + n] != 0; }
};

inline OthersMask all_others(std::size_t batch, const GroupPartition& p) {
  return {batch, p.num_groups() + 1, std::vector<std::uint8_t>(batch * (p.num_groups() + 1), 1)};
}

/// Caps out-of-group samples at ceil(beta * in-group count) per group, chosen by a
/// seeded uniform subsample. beta = +inf keeps every sample.
inline OthersMask select_others(std::span<const std::size_t> batch_labels, const GroupPartition& p, double beta,
                                std::uint64_t seed) {
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  const std::size_t B = batch_labels.size();
  OthersMask mask{B, p.num_groups() + 1, std::vector<std::uint8_t>(B * (p.num_groups() + 1), 0)};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < B; ++i) mask.keep[i * mask.groups] = 1;
  for (std::size_t n = 1; n <= p.num_groups(); ++n) {
    std::vector<std::size_t> outside;
    std::size_t inside = 0;
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t label = batch_labels[i];
      if (label != kBackground && p.group_of(label) == n) {
        mask.keep[i * mask.groups + n] = 1;
        ++inside;
      } else {
        outside.push_back(i);
      }
    }
    std::size_t cap = outside.size();
    if (!std::isinf(beta)) {
      cap = std::min(cap, static_cast<std::size_t>(std::ceil(beta * static_cast<double>(inside))));
    }
    if (cap < outside.size()) std::shuffle(outside.begin(), outside.end(), rng);
    for (std::size_t j = 0; j < cap; ++j) mask.keep[outside[j] * mask.groups + n] = 1;
  }
  return mask;
}

inline nlohmann::json partition_to_json(const GroupPartition& p) {
  return {{"format", "ltlab.partition"},
          {"version", 1},
          {"strategy", p.strategy()},
          {"thresholds", p.bounds()},
          {"clusters", p.clusters},
          {"seed", p.seed},
          {"group_of", p.assignment()}};
}

inline GroupPartition partition_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "ltlab.partition" || j.value("version", 0) != 1) {
    throw FormatError("not an ltlab.partition v1 document", "format/version");
  }
  auto p = GroupPartition::from_assignment(j.at("strategy").get<std::string>(),
                                           j.at("group_of").get<std::vector<std::size_t>>(),
                                           j.at("thresholds").get<std::vector<std::uint64_t>>());
  p.seed = j.at("seed").get<std::uint64_t>();
  p.clusters = j.at("clusters").get<std::size_t>();
  return p;
}

}  // namespace ltlab
