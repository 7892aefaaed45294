#include "ltlab/binning.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <numeric>

using namespace ltlab;

namespace {

ClassCensus default_census() {
  GeneratorConfig g;
  return census_from_counts(zipf_counts(g));
}

std::vector<std::size_t> group_sizes(const GroupPartition& p) {
  std::vector<std::size_t> s;
  for (std::size_t n = 1; n <= p.num_groups(); ++n) s.push_back(p.members(n).size());
  return s;
}

}  // namespace

TEST(PartitionFixed, LowerBoundsAreInclusive) {
  const auto p = partition_fixed(census_from_counts({5, 100, 99, 10, 1000, 9}));
  EXPECT_EQ(p.group_of(0), 1u);  // count 5
  EXPECT_EQ(p.group_of(1), 3u);  // count 100 -> [100, 1000)
  EXPECT_EQ(p.group_of(2), 2u);
  EXPECT_EQ(p.group_of(3), 2u);  // count 10 -> [10, 100)
  EXPECT_EQ(p.group_of(4), 4u);
  EXPECT_EQ(p.group_of(5), 1u);
}

TEST(PartitionFixed, FiveBinSplit) {
  const auto p = partition_fixed(census_from_counts({600, 300, 1200}), five_bin_thresholds());
  EXPECT_EQ(p.num_groups(), 5u);
  EXPECT_EQ(p.group_of(0), 4u);
  EXPECT_EQ(p.group_of(1), 3u);
  EXPECT_EQ(p.group_of(2), 5u);
}

TEST(PartitionFixed, AcceptsPublishedClusterThresholds) {
  const auto p = partition_fixed(census_from_counts({3, 22, 23, 90, 91, 1000, 1001, 18050, 18051, 40000}),
                                 {0, 23, 91, 1001, 18051});
  const std::vector<std::size_t> expected{1, 1, 2, 2, 3, 3, 4, 4, 5, 5};
  EXPECT_EQ(p.assignment(), expected);
}

TEST(PartitionFixed, LayoutCoversEveryCategoryOnce) {
  const auto cen = default_census();
  const auto p = partition_fixed(cen);
  EXPECT_EQ(p.logit_size(), (cen.num_categories() + 1) + (p.num_groups() + 1));
  std::vector<int> seen(p.logit_size(), 0);
  seen[p.background_slot()]++;
  for (std::size_t n = 0; n <= p.num_groups(); ++n) seen[p.others_slot(n)]++;
  for (std::size_t k = 0; k < cen.num_categories(); ++k) {
    const auto idx = p.output_index(k);
    seen[idx]++;
    const auto r = p.range(p.group_of(k));
    EXPECT_GE(idx, r.begin);
    EXPECT_LT(idx, r.end - 1);  // the last slot of a group is its Others
  }
  for (std::size_t i = 0; i < seen.size(); ++i) EXPECT_EQ(seen[i], 1) << i;
  // Groups tile the output space without gaps.
  EXPECT_EQ(p.range(0).begin, 0u);
  for (std::size_t n = 1; n <= p.num_groups(); ++n) EXPECT_EQ(p.range(n).begin, p.range(n - 1).end);
  EXPECT_EQ(p.range(p.num_groups()).end, p.logit_size());
}

TEST(PartitionFixed, CategoriesAscendWithinGroup) {
  const auto p = partition_fixed(default_census());
  for (std::size_t n = 1; n <= p.num_groups(); ++n) {
    const auto& m = p.members(n);
    EXPECT_TRUE(std::is_sorted(m.begin(), m.end()));
    for (std::size_t i = 1; i < m.size(); ++i) EXPECT_EQ(p.output_index(m[i]), p.output_index(m[i - 1]) + 1);
  }
}

TEST(PartitionFixed, RejectsBadThresholds) {
  const auto cen = census_from_counts({1, 2});
  EXPECT_THROW(partition_fixed(cen, {}), std::invalid_argument);
  EXPECT_THROW(partition_fixed(cen, {5, 10}), std::invalid_argument);
  EXPECT_THROW(partition_fixed(cen, {0, 10, 10}), std::invalid_argument);
}

TEST(PartitionFixed, WarnsOnEmptyGroup) {
  const auto p = partition_fixed(census_from_counts({1, 2, 3}));
  EXPECT_EQ(p.warnings().size(), 3u);
  EXPECT_TRUE(p.members(2).empty());
}

TEST(PartitionClustered, SeparatesTwoLogClusters) {
  const auto p = partition_clustered(census_from_counts({1, 2, 1000, 2000}), 2);
  EXPECT_EQ(p.num_groups(), 2u);
  EXPECT_EQ(p.members(1), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(p.members(2), (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(p.strategy(), "clustered");
}

TEST(PartitionClustered, RejectsTooManyClusters) {
  EXPECT_THROW(partition_clustered(census_from_counts({7, 7, 7}), 2), std::invalid_argument);
  EXPECT_THROW(partition_clustered(census_from_counts({1, 2}), 1), std::invalid_argument);
}

TEST(PartitionClustered, BinsAreContiguousInCount) {
  const auto cen = default_census();
  for (std::size_t k = 2; k <= 6; ++k) {
    const auto p = partition_clustered(cen, k);
    EXPECT_EQ(p.num_groups(), k);
    for (std::size_t n = 1; n < k; ++n) {
      std::uint64_t hi = 0, lo = std::numeric_limits<std::uint64_t>::max();
      for (auto c : p.members(n)) hi = std::max(hi, cen.counts[c]);
      for (auto c : p.members(n + 1)) lo = std::min(lo, cen.counts[c]);
      EXPECT_LT(hi, lo);
    }
  }
}

TEST(PartitionClustered, EveryClusterIsNonEmpty) {
  std::vector<std::uint64_t> counts;
  for (std::uint64_t c = 1; c <= 4096; c *= 2) counts.push_back(c);
  const auto p = partition_clustered(census_from_counts(counts), 3);
  const auto s = group_sizes(p);
  EXPECT_EQ(std::accumulate(s.begin(), s.end(), std::size_t{0}), counts.size());
  for (auto n : s) EXPECT_GT(n, 0u);
}

TEST(PartitionRandom, PreservesGroupSizes) {
  const auto cen = default_census();
  const auto tmpl = partition_fixed(cen);
  const auto p = partition_random(cen, tmpl, 0);
  EXPECT_EQ(group_sizes(p), group_sizes(tmpl));
  EXPECT_EQ(p.bounds(), tmpl.bounds());
  EXPECT_NE(p.assignment(), tmpl.assignment());
}

TEST(PartitionRandom, DeterministicPerSeed) {
  const auto cen = default_census();
  const auto tmpl = partition_fixed(cen);
  EXPECT_EQ(partition_random(cen, tmpl, 5), partition_random(cen, tmpl, 5));
  EXPECT_NE(partition_random(cen, tmpl, 5).assignment(), partition_random(cen, tmpl, 6).assignment());
}

TEST(PartitionRandom, SingleGroupTemplateIsUnchanged) {
  const auto cen = census_from_counts({4, 40, 400});
  const auto tmpl = partition_fixed(cen, {0});
  EXPECT_EQ(partition_random(cen, tmpl, 9).assignment(), tmpl.assignment());
}

TEST(SelectOthers, SingleGroupBatchKeepsNoOthers) {
  const auto p = partition_fixed(census_from_counts({1, 2, 50, 500}));
  const std::vector<std::size_t> labels{0, 1, 0, 1};
  const auto m = select_others(labels, p, 8.0, 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    EXPECT_TRUE(m.at(i, 0));
    EXPECT_TRUE(m.at(i, 1));
    for (std::size_t n = 2; n <= p.num_groups(); ++n) EXPECT_FALSE(m.at(i, n));
  }
}

TEST(SelectOthers, InfiniteBetaKeepsEverything) {
  const auto p = partition_fixed(census_from_counts({1, 2, 50, 500}));
  const std::vector<std::size_t> labels{0, 2, 3, 3, 1};
  const auto m = select_others(labels, p, std::numeric_limits<double>::infinity(), 1);
  for (auto v : m.keep) EXPECT_EQ(v, 1);
}

TEST(SelectOthers, CapIsCeilBetaTimesInGroup) {
  // 16 labels, 8 in group 1 and 8 in group 2; beta = 1 keeps 8 in-group + 8 others.
  const auto p = partition_fixed(census_from_counts({1, 2, 50, 60}), {0, 10});
  std::vector<std::size_t> labels;
  for (int i = 0; i < 8; ++i) labels.push_back(i % 2);
  for (int i = 0; i < 8; ++i) labels.push_back(2 + i % 2);
  const auto m = select_others(labels, p, 1.0, 7);
  for (std::size_t n = 1; n <= 2; ++n) {
    std::size_t kept = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) kept += m.at(i, n);
    EXPECT_EQ(kept, 16u) << n;
  }
  // beta = 0.3 keeps ceil(2.4) = 3 others per group.
  const auto small = select_others(labels, p, 0.3, 7);
  std::size_t others = 0;
  for (std::size_t i = 0; i < 8; ++i) others += small.at(i, 2);
  EXPECT_EQ(others, 3u);
}

TEST(SelectOthers, BackgroundCountsAsOutOfGroup) {
  const auto p = partition_fixed(census_from_counts({1, 50}), {0, 10});
  const std::vector<std::size_t> labels{0, kBackground, kBackground};
  const auto m = select_others(labels, p, 1.0, 3);
  std::size_t g1 = 0;
  for (std::size_t i = 0; i < 3; ++i) g1 += m.at(i, 1);
  EXPECT_EQ(g1, 2u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(m.at(i, 0));
}

TEST(SelectOthers, RejectsNonPositiveBeta) {
  const auto p = partition_fixed(census_from_counts({1}));
  const std::vector<std::size_t> labels{0};
  EXPECT_THROW(select_others(labels, p, 0.0, 1), std::invalid_argument);
}

TEST(PartitionJson, RoundTrips) {
  const auto cen = default_census();
  for (const auto& p : {partition_fixed(cen), partition_clustered(cen, 4), partition_random(cen, partition_fixed(cen), 3)}) {
    const auto back = partition_from_json(nlohmann::json::parse(partition_to_json(p).dump()));
    EXPECT_EQ(back, p);
    EXPECT_EQ(back.output_map(), p.output_map());
  }
  EXPECT_THROW(partition_from_json(nlohmann::json{{"format", "other"}}), FormatError);
}
