#include "ltlab/losses.hpp"
#include "support/oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ltlab;

namespace {

Vector to_eigen(const oracle::Vec& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }
oracle::Vec to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

// Twelve categories over the four default bins, every bin populated.
GroupPartition twelve_category_partition() {
  return partition_fixed(census_from_counts({3, 7, 15, 40, 80, 120, 300, 900, 1500, 5, 60, 2000}));
}

std::vector<std::uint8_t> random_mask(std::mt19937_64& rng, std::size_t width) {
  std::bernoulli_distribution coin(0.5);
  std::vector<std::uint8_t> m(width);
  for (auto& b : m) b = coin(rng) ? 1 : 0;
  m[0] = 1;
  return m;
}

}  // namespace

TEST(SoftmaxCe, EqualLogitsGiveLogC) {
  for (std::size_t C : {2u, 5u, 60u}) {
    const Vector z = Vector::Constant(static_cast<Eigen::Index>(C), 0.7);
    EXPECT_NEAR(softmax_ce(z, 1).value, std::log(static_cast<double>(C)), 1e-12);
  }
}

TEST(SoftmaxCe, LargeMarginGivesZero) {
  Vector z = Vector::Zero(4);
  z(2) = 800.0;
  const auto out = softmax_ce(z, 2);
  EXPECT_NEAR(out.value, 0.0, 1e-12);
  EXPECT_TRUE(out.grad_logits.allFinite());
}

TEST(SoftmaxCe, MatchesNaiveFormula) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto z = oracle::gaussian(rng, 7, 3.0);
    EXPECT_NEAR(softmax_ce(to_eigen(z), 4).value, oracle::naive_ce(z, 4), 1e-12);
  }
}

TEST(SoftmaxCe, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto z = oracle::gaussian(rng, 6, 2.0);
    const auto numeric = oracle::numeric_gradient([](const oracle::Vec& v) { return oracle::naive_ce(v, 3); }, z);
    EXPECT_LT(oracle::max_rel_error(to_std(softmax_ce(to_eigen(z), 3).grad_logits), numeric), 1e-5);
  }
}

TEST(SoftmaxCe, RejectsNonFiniteLogits) {
  Vector z = Vector::Zero(3);
  z(1) = std::nan("");
  EXPECT_THROW(softmax_ce(z, 0), NumericalError);
  EXPECT_THROW(softmax_ce(Vector::Zero(3), 3), std::invalid_argument);
}

TEST(ClassWeights, EqualCountsGiveUnitWeights) {
  const auto cen = census_from_counts({10, 10});
  const auto w = class_weights(cen, partition_fixed(cen));
  EXPECT_DOUBLE_EQ(w.final_weight[0], 1.0);
  EXPECT_DOUBLE_EQ(w.final_weight[1], 1.0);
}

TEST(ClassWeights, InverseFrequencyChain) {
  const auto cen = census_from_counts({1, 3});
  const auto w = class_weights(cen, partition_fixed(cen));
  EXPECT_NEAR(w.init[0], 1.0, 1e-15);
  EXPECT_NEAR(w.init[1], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(w.normalized[0], 0.75, 1e-15);
  EXPECT_NEAR(w.normalized[1], 0.25, 1e-15);
  EXPECT_NEAR(w.final_weight[0], 1.5, 1e-15);
  EXPECT_NEAR(w.final_weight[1], 0.5, 1e-15);
}

TEST(ClassWeights, SingletonGroupGetsOne) {
  const auto cen = census_from_counts({4, 40});
  const auto w = class_weights(cen, partition_fixed(cen));
  EXPECT_DOUBLE_EQ(w.final_weight[0], 1.0);
  EXPECT_DOUBLE_EQ(w.final_weight[1], 1.0);
}

TEST(ClassWeights, SumToGroupCardinality) {
  GeneratorConfig g;
  const auto cen = census_from_counts(zipf_counts(g));
  const auto p = partition_fixed(cen);
  const auto w = class_weights(cen, p);
  for (std::size_t n = 1; n <= p.num_groups(); ++n) {
    double norm = 0.0, fin = 0.0;
    for (auto k : p.members(n)) {
      norm += w.normalized[k];
      fin += w.final_weight[k];
    }
    EXPECT_NEAR(norm, 1.0, 1e-12);
    EXPECT_NEAR(fin, static_cast<double>(p.members(n).size()), 1e-9);
  }
}

TEST(ClassWeights, RejectsZeroCount) {
  const auto cen = census_from_counts({0, 4});
  EXPECT_THROW(class_weights(cen, partition_fixed(cen)), std::invalid_argument);
}

TEST(Focal, GammaZeroIsCrossEntropy) {
  for (double p : {0.01, 0.3, 0.5, 0.99}) EXPECT_DOUBLE_EQ(focal_term(p, 0.0), -std::log(p));
}

TEST(Focal, CertainPredictionCostsNothing) { EXPECT_EQ(focal_term(1.0, 2.0), 0.0); }

TEST(Focal, HandValue) { EXPECT_NEAR(focal_term(0.5, 2.0), 0.25 * std::log(2.0), 1e-15); }

TEST(Focal, ZeroProbabilityIsClamped) {
  EXPECT_NEAR(focal_term(0.0, 0.0), -std::log(kProbFloor), 1e-9);
  EXPECT_THROW(focal_term(1.5, 1.0), std::invalid_argument);
  EXPECT_THROW(focal_term(0.5, -1.0), std::invalid_argument);
}

TEST(Bags, UniformLogitsGiveLogGroupSizes) {
  const auto p = twelve_category_partition();
  const Vector z = Vector::Zero(static_cast<Eigen::Index>(p.logit_size()));
  std::vector<std::uint8_t> mask(p.num_groups() + 1, 1);
  double expected = 0.0;
  for (std::size_t n = 0; n <= p.num_groups(); ++n) {
    const auto r = p.range(n);
    expected += std::log(static_cast<double>(r.end - r.begin));
  }
  EXPECT_NEAR(bags_loss(z, 0, p, {}, mask).value, expected, 1e-12);
}

TEST(Bags, SingleGroupWithoutOthersIsGroupCrossEntropy) {
  const auto p = twelve_category_partition();
  std::mt19937_64 rng(5);
  const auto zv = oracle::gaussian(rng, p.logit_size());
  std::vector<std::uint8_t> mask(p.num_groups() + 1, 0);
  mask[0] = 1;
  const std::size_t label = 6;  // count 300, group 3
  const auto g = p.group_of(label);
  oracle::Vec g0(zv.begin(), zv.begin() + 2), gn(zv.begin() + static_cast<long>(p.range(g).begin),
                                                   zv.begin() + static_cast<long>(p.range(g).end));
  const double expected = oracle::naive_ce(g0, 1) + oracle::naive_ce(gn, p.output_index(label) - p.range(g).begin);
  EXPECT_NEAR(bags_loss(to_eigen(zv), label, p, {}, mask).value, expected, 1e-12);
}

TEST(Bags, InactiveGroupDoesNotMatter) {
  const auto p = twelve_category_partition();
  std::mt19937_64 rng(6);
  auto zv = oracle::gaussian(rng, p.logit_size());
  std::vector<std::uint8_t> mask(p.num_groups() + 1, 0);
  mask[0] = 1;
  const std::size_t label = 0;  // group 1
  const auto base = bags_loss(to_eigen(zv), label, p, {}, mask);
  const auto r = p.range(3);
  for (std::size_t i = r.begin; i < r.end; ++i) zv[i] += 5.0 * static_cast<double>(i);
  const auto moved = bags_loss(to_eigen(zv), label, p, {}, mask);
  EXPECT_EQ(base.value, moved.value);
  for (std::size_t i = r.begin; i < r.end; ++i) EXPECT_EQ(base.grad_logits(static_cast<Eigen::Index>(i)), 0.0);
}

TEST(Bags, BackgroundTargetsBackgroundAndOthers) {
  const auto p = twelve_category_partition();
  const Vector z = Vector::Zero(static_cast<Eigen::Index>(p.logit_size()));
  std::vector<std::uint8_t> mask(p.num_groups() + 1, 0);
  mask[0] = 1;
  EXPECT_NEAR(bags_loss(z, kBackground, p, {}, mask).value, std::log(2.0), 1e-12);
  const auto out = bags_loss(z, kBackground, p, {}, mask);
  EXPECT_LT(out.grad_logits(0), 0.0);
  EXPECT_GT(out.grad_logits(1), 0.0);
}

TEST(Bags, WeightedModeScalesLabelGroupTerm) {
  const auto cen = census_from_counts({2, 8});
  const auto p = partition_fixed(cen);
  const auto w = class_weights(cen, p);
  const Vector z = Vector::Zero(static_cast<Eigen::Index>(p.logit_size()));
  std::vector<std::uint8_t> mask(p.num_groups() + 1, 0);
  mask[0] = 1;
  BagsParams weighted{BagsMode::weighted, &w, std::nullopt, 100};
  // G0 term ln 2 plus weight * ln 3 for the three-slot group.
  EXPECT_NEAR(bags_loss(z, 0, p, weighted, mask).value, std::log(2.0) + 1.6 * std::log(3.0), 1e-12);
  EXPECT_NEAR(bags_loss(z, 1, p, weighted, mask).value, std::log(2.0) + 0.4 * std::log(3.0), 1e-12);
}

TEST(Bags, HybridWeighsOnlyLowBins) {
  const auto cen = census_from_counts({2, 8, 200, 800});
  const auto p = partition_fixed(cen);
  const auto w = class_weights(cen, p);
  const Vector z = Vector::Zero(static_cast<Eigen::Index>(p.logit_size()));
  std::vector<std::uint8_t> mask(p.num_groups() + 1, 0);
  mask[0] = 1;
  BagsParams hybrid{BagsMode::hybrid, &w, std::nullopt, 100};
  BagsParams weighted{BagsMode::weighted, &w, std::nullopt, 100};
  EXPECT_DOUBLE_EQ(bags_loss(z, 0, p, hybrid, mask).value, bags_loss(z, 0, p, weighted, mask).value);
  EXPECT_DOUBLE_EQ(bags_loss(z, 2, p, hybrid, mask).value, bags_loss(z, 2, p, {}, mask).value);
}

TEST(Bags, GradientMatchesFiniteDifferencesInEveryMode) {
  const auto cen = census_from_counts({3, 7, 15, 40, 80, 120, 300, 900, 1500, 5, 60, 2000});
  const auto p = partition_fixed(cen);
  const auto w = class_weights(cen, p);
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> pick(0, p.num_categories());
  for (auto mode : {BagsMode::plain, BagsMode::weighted, BagsMode::focal, BagsMode::hybrid}) {
    BagsParams params{mode, &w, 2.0, 100};
    for (int i = 0; i < 4; ++i) {
      const std::size_t draw = pick(rng);
      const std::size_t label = draw == p.num_categories() ? kBackground : draw;
      const auto mask = random_mask(rng, p.num_groups() + 1);
      const auto z = oracle::gaussian(rng, p.logit_size(), 2.0);
      const auto f = [&](const oracle::Vec& v) { return bags_loss(to_eigen(v), label, p, params, mask).value; };
      const auto analytic = to_std(bags_loss(to_eigen(z), label, p, params, mask).grad_logits);
      EXPECT_LT(oracle::max_rel_error(analytic, oracle::numeric_gradient(f, z)), 1e-5) << to_string(mode);
    }
  }
}

TEST(Bags, RejectsMismatchedInputs) {
  const auto p = twelve_category_partition();
  std::vector<std::uint8_t> mask(p.num_groups() + 1, 1);
  EXPECT_THROW(bags_loss(Vector::Zero(3), 0, p, {}, mask), std::invalid_argument);
  const Vector z = Vector::Zero(static_cast<Eigen::Index>(p.logit_size()));
  EXPECT_THROW(bags_loss(z, 0, p, {BagsMode::weighted, nullptr, std::nullopt, 100}, mask), std::invalid_argument);
  EXPECT_THROW(bags_loss(z, 0, p, {BagsMode::focal, nullptr, std::nullopt, 100}, mask), std::invalid_argument);
  std::vector<std::uint8_t> narrow(2, 1);
  EXPECT_THROW(bags_loss(z, 0, p, {}, narrow), std::invalid_argument);
}
