#pragma once

// Metric-learning losses: center loss with running class centers, large margin
// cosine loss, and Euclidean cross-entropy.

#include "ltlab/core.hpp"
#include "ltlab/losses.hpp"

#include <cmath>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ltlab {

class CenterBank {
 public:
  CenterBank() = default;
  CenterBank(std::size_t num_classes, std::size_t dim)
      : centers_(Matrix::Zero(static_cast<Eigen::Index>(num_classes), static_cast<Eigen::Index>(dim))),
        initialized_(num_classes, 0) {}

  std::size_t num_classes() const { return initialized_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(centers_.cols()); }
  bool initialized(std::size_t k) const { return initialized_.at(k) != 0; }
  std::size_t num_initialized() const {
    std::size_t n = 0;
    for (auto f : initialized_) n += f;
    return n;
  }
  auto center(std::size_t k) const { return centers_.row(static_cast<Eigen::Index>(k)); }
  const Matrix& centers() const { return centers_; }

  void set_center(std::size_t k, const Eigen::Ref<const Eigen::RowVectorXd>& c) {
    centers_.row(static_cast<Eigen::Index>(k)) = c;
    initialized_.at(k) = 1;
  }

  friend bool operator==(const CenterBank& a, const CenterBank& b) {
    return a.initialized_ == b.initialized_ && a.centers_ == b.centers_;
  }

 private:
  Matrix centers_;
  std::vector<std::uint8_t> initialized_;
};

struct CenterLossOutput {
  double value = 0.0;
  Matrix grad_features;
};

/// 0.5 * sum_i ||x_i - c_{y_i}||^2; centers are constants.
inline CenterLossOutput center_loss(const Matrix& features, std::span<const std::size_t> labels,
                                    const CenterBank& bank) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) throw std::invalid_argument("batch size mismatch");
  if (static_cast<std::size_t>(features.cols()) != bank.dim()) throw std::invalid_argument("feature dim mismatch");
  CenterLossOutput out;
  out.grad_features.resize(features.rows(), features.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= bank.num_classes() || !bank.initialized(labels[i])) {
      throw std::invalid_argument("center for class " + std::to_string(labels[i]) + " is not initialized");
    }
    const auto row = static_cast<Eigen::Index>(i);
    out.grad_features.row(row) = features.row(row) - bank.center(labels[i]);
    out.value += 0.5 * out.grad_features.row(row).squaredNorm();
  }
  return out;
}

/// Incremental center update. For each class j in the batch:
///   delta_j = sum_{y_i = j} (c_j - x_i) / (1 + n_j),  c_j -= alpha * delta_j.
/// A class seen for the first time starts at its batch mean.
inline void update_centers(CenterBank& bank, const Matrix& features, std::span<const std::size_t> labels,
                           double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (static_cast<std::size_t>(features.cols()) != bank.dim()) throw std::invalid_argument("feature dim mismatch");
  const std::size_t C = bank.num_classes();
  Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(C), features.cols());
  std::vector<std::size_t> n(C, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= C) throw std::invalid_argument("label out of range");
    sums.row(static_cast<Eigen::Index>(labels[i])) += features.row(static_cast<Eigen::Index>(i));
    ++n[labels[i]];
  }
  for (std::size_t j = 0; j < C; ++j) {
    if (n[j] == 0) continue;
    const auto row = static_cast<Eigen::Index>(j);
    if (!bank.initialized(j)) {
      bank.set_center(j, sums.row(row) / static_cast<double>(n[j]));
      continue;
    }
    const Eigen::RowVectorXd c = bank.center(j);
    const Eigen::RowVectorXd delta = (static_cast<double>(n[j]) * c - sums.row(row)) / (1.0 + static_cast<double>(n[j]));
    bank.set_center(j, c - alpha * delta);
  }
}

struct CombinedLossOutput {
  double value = 0.0;
  Matrix grad_logits;
  Matrix grad_features;
};

/// Sum over the batch of softmax CE plus lambda * center loss. lambda == 0 skips
/// the center term entirely, so an empty bank is allowed.
inline CombinedLossOutput combined_loss(const Matrix& logits, const Matrix& features,
                                        std::span<const std::size_t> labels, const CenterBank& bank, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) throw std::invalid_argument("batch size mismatch");
  CombinedLossOutput out;
  out.grad_logits.resize(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const LossOutput ce = softmax_ce(logits.row(row).transpose(), labels[i]);
    out.value += ce.value;
    out.grad_logits.row(row) = ce.grad_logits.transpose();
  }
  if (lambda == 0.0) {
    out.grad_features = Matrix::Zero(features.rows(), features.cols());
    return out;
  }
  const CenterLossOutput center = center_loss(features, labels, bank);
  out.value += lambda * center.value;
  out.grad_features = lambda * center.grad_features;
  return out;
}

struct PairLossOutput {
  double value = 0.0;
  Vector grad_features;
  Matrix grad_weights;  // one row per class
};

/// Large margin cosine loss for one sample: softmax CE over s * (cos theta_j - m [j == y])
/// with features and weight rows L2-normalized.
inline PairLossOutput lmcl_loss(const Vector& features, const Matrix& weight_rows, std::size_t label, double s,
                                double m) {
  if (!(s > 0.0)) throw std::invalid_argument("scale s must be positive");
  if (!(m >= 0.0)) throw std::invalid_argument("margin m must be non-negative");
  if (label >= static_cast<std::size_t>(weight_rows.rows())) throw std::invalid_argument("label out of range");
  if (weight_rows.cols() != features.size()) throw std::invalid_argument("feature dim mismatch");
  const double xnorm = features.norm();
  if (!(xnorm > 0.0)) throw std::invalid_argument("zero-norm feature vector");
  const Vector xhat = features / xnorm;

  const Eigen::Index C = weight_rows.rows();
  Vector wnorm(C);
  Matrix what(C, weight_rows.cols());
  Vector cosines(C);
  for (Eigen::Index j = 0; j < C; ++j) {
    wnorm(j) = weight_rows.row(j).norm();
    if (!(wnorm(j) > 0.0)) throw std::invalid_argument("zero-norm weight row " + std::to_string(j));
    what.row(j) = weight_rows.row(j) / wnorm(j);
    cosines(j) = what.row(j).dot(xhat);
  }
  Vector scores = s * cosines;
  scores(static_cast<Eigen::Index>(label)) -= s * m;
  const LossOutput ce = softmax_ce(scores, label);

  PairLossOutput out;
  out.value = ce.value;
  out.grad_features = Vector::Zero(features.size());
  out.grad_weights.resize(C, weight_rows.cols());
  for (Eigen::Index j = 0; j < C; ++j) {
    const double dcos = s * ce.grad_logits(j);
    out.grad_features += dcos * (what.row(j).transpose() - cosines(j) * xhat) / xnorm;
    out.grad_weights.row(j) = dcos * (xhat.transpose() - cosines(j) * what.row(j)) / wnorm(j);
  }
  return out;
}

/// Euclidean cross-entropy for one sample: softmax CE over -||x - w_j||^2 / t.
inline PairLossOutput ece_loss(const Vector& features, const Matrix& weight_rows, std::size_t label, double t) {
  if (!(t > 0.0)) throw std::invalid_argument("temperature t must be positive");
  if (label >= static_cast<std::size_t>(weight_rows.rows())) throw std::invalid_argument("label out of range");
  if (weight_rows.cols() != features.size()) throw std::invalid_argument("feature dim mismatch");
  const Eigen::Index C = weight_rows.rows();
  Matrix diff = (-weight_rows).rowwise() + features.transpose();  // x - w_j
  Vector scores(C);
  for (Eigen::Index j = 0; j < C; ++j) scores(j) = -diff.row(j).squaredNorm() / t;
  const LossOutput ce = softmax_ce(scores, label);

  PairLossOutput out;
  out.value = ce.value;
  out.grad_features = Vector::Zero(features.size());
  out.grad_weights.resize(C, weight_rows.cols());
  for (Eigen::Index j = 0; j < C; ++j) {
    const double g = ce.grad_logits(j);
    out.grad_features -= (2.0 * g / t) * diff.row(j).transpose();
    out.grad_weights.row(j) = (2.0 * g / t) * diff.row(j);
  }
  return out;
}

inline void save_center_bank(const CenterBank& bank, std::ostream& os) {
  io::write_magic(os, "LTCB");
  io::write_u32(os, 1);
  io::write_u32(os, static_cast<std::uint32_t>(bank.num_classes()));
  io::write_u32(os, static_cast<std::uint32_t>(bank.dim()));
  for (Eigen::Index i = 0; i < bank.centers().rows(); ++i) {
    for (Eigen::Index j = 0; j < bank.centers().cols(); ++j) io::write_f32(os, static_cast<float>(bank.centers()(i, j)));
  }
  for (std::size_t k = 0; k < bank.num_classes(); ++k) {
    const char flag = bank.initialized(k) ? 1 : 0;
    os.write(&flag, 1);
  }
}

inline CenterBank load_center_bank(std::istream& is) {
  io::expect_magic(is, "LTCB");
  io::expect_version(is, 1);
  const auto C = io::read_u32(is, "C");
  const auto d = io::read_u32(is, "d");
  Matrix centers(C, d);
  for (std::uint32_t i = 0; i < C; ++i) {
    for (std::uint32_t j = 0; j < d; ++j) centers(i, j) = io::read_f32(is, "center");
  }
  CenterBank bank(C, d);
  for (std::uint32_t k = 0; k < C; ++k) {
    char flag = 0;
    if (!is.read(&flag, 1)) throw FormatError("truncated init flags", "offset " + std::to_string(16 + 4ull * C * d + k));
    if (flag) bank.set_center(k, centers.row(k));
  }
  return bank;
}

}  // namespace ltlab
