#pragma once

// Central finite-difference checks of every analytic loss gradient, over random
// instances. Used by the `gradcheck` command.

#include "ltlab/binning.hpp"
#include "ltlab/losses.hpp"
#include "ltlab/metric.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace ltlab {

struct GradCheckResult {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
};

struct GradCheckOptions {
  std::size_t instances = 100;
  double step = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t seed = 0;
};

// Instances with loss above this (target probability below ~1e-9) are redrawn.
inline constexpr double kMaxCheckedLoss = 20.0;

namespace detail {

// |a - n| / max(1, |a|, |n|): relative for large gradients, absolute near zero.
inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

/// Max error of `grad` against central differences of `f` around `x`.
inline double fd_max_error(const std::function<double(const Vector&)>& f, Vector x, const Vector& grad, double h) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x(i);
    x(i) = orig + h;
    const double up = f(x);
    x(i) = orig - h;
    const double down = f(x);
    x(i) = orig;
    worst = std::max(worst, rel_error(grad(i), (up - down) / (2.0 * h)));
  }
  return worst;
}

inline Vector flatten(const Matrix& m) {
  Vector v(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i) v.segment(i * m.cols(), m.cols()) = m.row(i).transpose();
  return v;
}

inline Matrix unflatten(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) m.row(i) = v.segment(i * cols, cols).transpose();
  return m;
}

inline Vector gaussian(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

inline GroupPartition gradcheck_partition() {
  // 12 categories spanning three count bins plus the top bin.
  const std::vector<std::uint64_t> counts{3, 7, 15, 40, 80, 120, 300, 900, 1500, 5, 60, 2000};
  return partition_fixed(census_from_counts(counts));
}

}  // namespace detail

inline std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  const double h = opt.step;
  std::vector<GradCheckResult> results;
  auto record = [&](const std::string& name, const std::function<double()>& one) {
    GradCheckResult r{name, opt.instances, 0.0};
    for (std::size_t i = 0; i < opt.instances; ++i) r.max_rel_error = std::max(r.max_rel_error, one());
    results.push_back(r);
  };

  const Eigen::Index C = 7;
  std::uniform_int_distribution<std::size_t> pick_c(0, C - 1);
  record("softmax_ce", [&] {
    const Vector z = detail::gaussian(rng, C, 2.0);
    const std::size_t y = pick_c(rng);
    return detail::fd_max_error([&](const Vector& v) { return softmax_ce(v, y).value; }, z, softmax_ce(z, y).grad_logits,
                                h);
  });

  const GroupPartition part = detail::gradcheck_partition();
  const ClassCensus cen = census_from_counts({3, 7, 15, 40, 80, 120, 300, 900, 1500, 5, 60, 2000});
  const ClassWeightTable weights = class_weights(cen, part);
  std::uniform_int_distribution<std::size_t> pick_label(0, part.num_categories());  // last value -> background
  std::bernoulli_distribution coin(0.5);
  const std::pair<const char*, BagsMode> modes[] = {{"bags_loss/plain", BagsMode::plain},
                                                    {"bags_loss/weighted", BagsMode::weighted},
                                                    {"bags_loss/focal", BagsMode::focal},
                                                    {"bags_loss/hybrid", BagsMode::hybrid}};
  for (const auto& [name, mode] : modes) {
    record(name, [&, mode = mode] {
      BagsParams params;
      params.mode = mode;
      params.weights = &weights;
      params.gamma = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
      const Vector z = detail::gaussian(rng, static_cast<Eigen::Index>(part.logit_size()), 1.5);
      std::size_t y = pick_label(rng);
      if (y == part.num_categories()) y = kBackground;
      std::vector<std::uint8_t> mask(part.num_groups() + 1);
      for (auto& m : mask) m = coin(rng) ? 1 : 0;
      mask[0] = 1;
      auto f = [&](const Vector& v) { return bags_loss(v, y, part, params, mask).value; };
      return detail::fd_max_error(f, z, bags_loss(z, y, part, params, mask).grad_logits, h);
    });
  }

  const Eigen::Index B = 5, d = 4;
  auto batch_labels = [&] {
    std::vector<std::size_t> y(B);
    for (auto& v : y) v = pick_c(rng) % 3;  // repeats exercise shared centers
    return y;
  };
  auto random_bank = [&] {
    CenterBank bank(static_cast<std::size_t>(C), static_cast<std::size_t>(d));
    for (std::size_t k = 0; k < static_cast<std::size_t>(C); ++k) bank.set_center(k, detail::gaussian(rng, d).transpose());
    return bank;
  };
  record("center_loss", [&] {
    const CenterBank bank = random_bank();
    const auto y = batch_labels();
    const Matrix x = detail::unflatten(detail::gaussian(rng, B * d), B, d);
    auto f = [&](const Vector& v) { return center_loss(detail::unflatten(v, B, d), y, bank).value; };
    return detail::fd_max_error(f, detail::flatten(x), detail::flatten(center_loss(x, y, bank).grad_features), h);
  });
  record("combined_loss", [&] {
    const CenterBank bank = random_bank();
    const auto y = batch_labels();
    const double lambda = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const Matrix x = detail::unflatten(detail::gaussian(rng, B * d), B, d);
    const Matrix z = detail::unflatten(detail::gaussian(rng, B * C), B, C);
    const CombinedLossOutput out = combined_loss(z, x, y, bank, lambda);
    auto fz = [&](const Vector& v) { return combined_loss(detail::unflatten(v, B, C), x, y, bank, lambda).value; };
    auto fx = [&](const Vector& v) { return combined_loss(z, detail::unflatten(v, B, d), y, bank, lambda).value; };
    return std::max(detail::fd_max_error(fz, detail::flatten(z), detail::flatten(out.grad_logits), h),
                    detail::fd_max_error(fx, detail::flatten(x), detail::flatten(out.grad_features), h));
  });

  auto pair_check = [&](const std::function<PairLossOutput(const Vector&, const Matrix&, std::size_t)>& loss) {
    // Redraw instances whose target probability sits near the log clamp, where
    // the loss is flat and differences cannot see the gradient.
    Vector x;
    Matrix w;
    std::size_t y = 0;
    do {
      x = detail::gaussian(rng, d);
      w = detail::unflatten(detail::gaussian(rng, C * d), C, d);
      y = pick_c(rng);
    } while (loss(x, w, y).value > kMaxCheckedLoss);
    const PairLossOutput out = loss(x, w, y);
    auto fx = [&](const Vector& v) { return loss(v, w, y).value; };
    auto fw = [&](const Vector& v) { return loss(x, detail::unflatten(v, C, d), y).value; };
    return std::max(detail::fd_max_error(fx, x, out.grad_features, h),
                    detail::fd_max_error(fw, detail::flatten(w), detail::flatten(out.grad_weights), h));
  };
  record("lmcl_loss", [&] {
    const double s = std::uniform_real_distribution<double>(1.0, 30.0)(rng);
    const double m = std::uniform_real_distribution<double>(0.0, 0.5)(rng);
    return pair_check([&](const Vector& x, const Matrix& w, std::size_t y) { return lmcl_loss(x, w, y, s, m); });
  });
  record("ece_loss", [&] {
    const double t = std::uniform_real_distribution<double>(0.5, 4.0)(rng);
    return pair_check([&](const Vector& x, const Matrix& w, std::size_t y) { return ece_loss(x, w, y, t); });
  });
  return results;
}

}  // namespace ltlab
