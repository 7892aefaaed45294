#pragma once

// Softmax cross-entropy and the balanced group softmax family, with analytic
// gradients with respect to the logits.

#include "ltlab/binning.hpp"
#include "ltlab/core.hpp"
#include "ltlab/dataset.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace ltlab {

inline constexpr double kProbFloor = 1e-12;

struct LossOutput {
  double value = 0.0;
  Vector grad_logits;
};

namespace detail {

inline void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw NumericalError(std::string("non-finite ") + what);
}

/// Stabilized softmax over logits[begin, end) written into probs[begin, end).
inline void softmax_range(const Vector& logits, std::size_t begin, std::size_t end, Vector& probs) {
  const auto b = static_cast<Eigen::Index>(begin);
  const auto len = static_cast<Eigen::Index>(end - begin);
  const double m = logits.segment(b, len).maxCoeff();
  probs.segment(b, len) = (logits.segment(b, len).array() - m).exp();
  probs.segment(b, len) /= probs.segment(b, len).sum();
}

}  // namespace detail

inline Vector softmax(const Vector& logits) {
  Vector p(logits.size());
  detail::softmax_range(logits, 0, static_cast<std::size_t>(logits.size()), p);
  return p;
}

inline LossOutput softmax_ce(const Vector& logits, std::size_t label) {
  if (label >= static_cast<std::size_t>(logits.size())) throw std::invalid_argument("label outside logit range");
  detail::require_finite(logits, "logits");
  LossOutput out;
  out.grad_logits = softmax(logits);
  const auto t = static_cast<Eigen::Index>(label);
  out.value = -std::log(std::max(out.grad_logits(t), kProbFloor));
  out.grad_logits(t) -= 1.0;
  return out;
}

/// (1 - p)^gamma * -log p. p = 0 is clamped to kProbFloor.
inline double focal_term(double p_t, double gamma) {
  if (!(p_t >= 0.0 && p_t <= 1.0)) throw std::invalid_argument("p_t must lie in (0, 1]");
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be non-negative");
  const double p = std::max(p_t, kProbFloor);
  const double nll = -std::log(p);
  return gamma == 0.0 ? nll : std::pow(1.0 - p, gamma) * nll;
}

/// d focal_term / d p_t, times p_t. Used to form logit gradients through a softmax.
inline double focal_dlogp(double p_t, double gamma) {
  const double p = std::max(p_t, kProbFloor);
  if (gamma == 0.0) return -1.0;
  const double q = 1.0 - p;
  const double modulated = -std::pow(q, gamma);
  if (q == 0.0) return gamma >= 1.0 ? modulated : 0.0;
  return gamma * std::pow(q, gamma - 1.0) * p * std::log(p) + modulated;
}

struct ClassWeightTable {
  std::vector<double> init;
  std::vector<double> normalized;
  std::vector<double> final_weight;
};

/// Inverse-frequency weights, normalized to sum to 1 within each group, then
/// rescaled by the group's cardinality.
inline ClassWeightTable class_weights(const ClassCensus& census, const GroupPartition& p) {
  const std::size_t C = census.num_categories();
  if (p.num_categories() != C) throw std::invalid_argument("partition and census disagree on category count");
  ClassWeightTable t;
  t.init.resize(C);
  t.normalized.resize(C);
  t.final_weight.resize(C);
  for (std::size_t k = 0; k < C; ++k) {
    if (census.counts[k] == 0) {
      throw std::invalid_argument("category " + std::to_string(k) + " has zero instances; cannot invert");
    }
    t.init[k] = 1.0 / static_cast<double>(census.counts[k]);
  }
  for (std::size_t n = 1; n <= p.num_groups(); ++n) {
    const auto& members = p.members(n);
    double sum = 0.0;
    for (std::size_t k : members) sum += t.init[k];
    for (std::size_t k : members) {
      t.normalized[k] = t.init[k] / sum;
      t.final_weight[k] = t.normalized[k] * static_cast<double>(members.size());
    }
  }
  return t;
}

enum class BagsMode { plain, weighted, focal, hybrid };

inline const char* to_string(BagsMode m) {
  switch (m) {
    case BagsMode::plain: return "plain";
    case BagsMode::weighted: return "weighted";
    case BagsMode::focal: return "focal";
    case BagsMode::hybrid: return "hybrid";
  }
  return "?";
}

struct BagsParams {
  BagsMode mode = BagsMode::plain;
  const ClassWeightTable* weights = nullptr;
  std::optional<double> gamma;
  // Hybrid mode weights groups whose exclusive upper count bound is <= this.
  std::uint64_t hybrid_upper_bound = 100;
};

/// Per-group softmax cross-entropy over the extended logit layout.
///
/// G0 and the label's group are always active. Any other group n contributes an
/// "Others" term when `others_row[n]` is set. A kBackground label targets the
/// background slot of G0 and "Others" everywhere else.
inline LossOutput bags_loss(const Vector& logits, std::size_t label, const GroupPartition& p,
                            const BagsParams& params, std::span<const std::uint8_t> others_row) {
  if (static_cast<std::size_t>(logits.size()) != p.logit_size()) {
    throw std::invalid_argument("logit size does not match the partition layout");
  }
  if (others_row.size() != p.num_groups() + 1) throw std::invalid_argument("others mask row has wrong width");
  if (label != kBackground && label >= p.num_categories()) throw std::invalid_argument("label out of range");
  const bool weighted_mode = params.mode == BagsMode::weighted || params.mode == BagsMode::hybrid;
  if (weighted_mode && params.weights == nullptr) throw std::invalid_argument("weighted modes need a weight table");
  if (params.mode == BagsMode::focal && !params.gamma) throw std::invalid_argument("focal mode needs gamma");
  detail::require_finite(logits, "logits");

  const double gamma = params.mode == BagsMode::focal ? *params.gamma : 0.0;
  const std::size_t label_group = label == kBackground ? 0 : p.group_of(label);

  LossOutput out;
  out.grad_logits = Vector::Zero(logits.size());
  Vector probs = Vector::Zero(logits.size());

  for (std::size_t n = 0; n <= p.num_groups(); ++n) {
    const bool active = n == 0 || n == label_group || others_row[n] != 0;
    if (!active) continue;

    std::size_t target;
    double weight = 1.0;
    if (n == 0) {
      target = label == kBackground ? p.background_slot() : p.others_slot(0);
    } else if (n == label_group) {
      target = p.output_index(label);
      const bool weigh = params.mode == BagsMode::weighted ||
                         (params.mode == BagsMode::hybrid && p.upper_bound(n) <= params.hybrid_upper_bound);
      if (weigh) weight = params.weights->final_weight.at(label);
    } else {
      target = p.others_slot(n);
    }

    const GroupRange r = p.range(n);
    detail::softmax_range(logits, r.begin, r.end, probs);
    const double pt = probs(static_cast<Eigen::Index>(target));
    const double dlogp = weight * focal_dlogp(pt, gamma);
    out.value += weight * focal_term(std::min(pt, 1.0), gamma);
    // d term / d z_i = dlogp * (delta_it - p_i)
    for (std::size_t i = r.begin; i < r.end; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      out.grad_logits(ii) += dlogp * ((i == target ? 1.0 : 0.0) - probs(ii));
    }
  }
  return out;
}

}  // namespace ltlab
