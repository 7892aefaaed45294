#pragma once

// Class scores from a trained head (plain or group softmax) or from class centers.

#include "ltlab/binning.hpp"
#include "ltlab/classifier.hpp"
#include "ltlab/core.hpp"
#include "ltlab/losses.hpp"
#include "ltlab/metric.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace ltlab {

/// Row-wise softmax over the C category logits of a plain head.
inline Matrix predict_softmax(const ClassifierHead& head, const Matrix& features) {
  if (head.layout != HeadLayout::plain) throw std::invalid_argument("predict_softmax needs a plain-layout head");
  Matrix probs = forward(head, features);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    probs.row(i) = softmax(probs.row(i).transpose()).transpose();
  }
  return probs;
}

/// score(j in G_n) = softmax_{G_n}(z)_j * softmax_{G0}(z)_foreground.
/// The "Others" slots are normalized over but never scored.
inline Matrix predict_bags(const ClassifierHead& head, const GroupPartition& p, const Matrix& features) {
  if (head.layout != HeadLayout::bags || head.rows() != p.logit_size()) {
    throw std::invalid_argument("predict_bags needs a bags-layout head matching the partition");
  }
  const Matrix logits = forward(head, features);
  Matrix scores(logits.rows(), static_cast<Eigen::Index>(p.num_categories()));
  Vector probs(logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Vector z = logits.row(i).transpose();
    for (std::size_t n = 0; n <= p.num_groups(); ++n) {
      const GroupRange r = p.range(n);
      detail::softmax_range(z, r.begin, r.end, probs);
    }
    const double fg = probs(static_cast<Eigen::Index>(p.others_slot(0)));
    for (std::size_t k = 0; k < p.num_categories(); ++k) {
      scores(i, static_cast<Eigen::Index>(k)) = probs(static_cast<Eigen::Index>(p.output_index(k))) * fg;
    }
  }
  return scores;
}

enum class KnnDistance { euclidean, squared };

/// Softmax over negative distances to the initialized centers; classes without a
/// center get probability 0.
inline Matrix predict_knn(const CenterBank& bank, const Matrix& features,
                          KnnDistance distance = KnnDistance::euclidean) {
  if (bank.num_initialized() == 0) throw std::invalid_argument("center bank has no initialized centers");
  if (static_cast<std::size_t>(features.cols()) != bank.dim()) throw std::invalid_argument("feature dim mismatch");
  const auto C = static_cast<Eigen::Index>(bank.num_classes());
  Matrix probs = Matrix::Zero(features.rows(), C);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    Vector scores = Vector::Constant(C, -std::numeric_limits<double>::infinity());
    for (Eigen::Index j = 0; j < C; ++j) {
      if (!bank.initialized(static_cast<std::size_t>(j))) continue;
      const double sq = (features.row(i) - bank.center(static_cast<std::size_t>(j))).squaredNorm();
      scores(j) = distance == KnnDistance::squared ? -sq : -std::sqrt(sq);
      best = std::max(best, scores(j));
    }
    double sum = 0.0;
    for (Eigen::Index j = 0; j < C; ++j) {
      if (!bank.initialized(static_cast<std::size_t>(j))) continue;
      probs(i, j) = std::exp(scores(j) - best);
      sum += probs(i, j);
    }
    probs.row(i) /= sum;
  }
  return probs;
}

/// Softmax over s * cos(theta_j), the inference rule for heads trained with the
/// cosine-margin loss.
inline Matrix predict_cosine(const ClassifierHead& head, const Matrix& features, double s) {
  if (head.layout != HeadLayout::plain) throw std::invalid_argument("predict_cosine needs a plain-layout head");
  Matrix probs(features.rows(), head.weights.rows());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const double xn = features.row(i).norm();
    Vector z(head.weights.rows());
    for (Eigen::Index j = 0; j < head.weights.rows(); ++j) {
      const double denom = xn * head.weights.row(j).norm();
      z(j) = denom > 0.0 ? s * head.weights.row(j).dot(features.row(i)) / denom : 0.0;
    }
    probs.row(i) = softmax(z).transpose();
  }
  return probs;
}

/// Softmax over -||x - w_j||^2 / t, the inference rule for Euclidean cross-entropy heads.
inline Matrix predict_euclidean(const ClassifierHead& head, const Matrix& features, double t) {
  if (head.layout != HeadLayout::plain) throw std::invalid_argument("predict_euclidean needs a plain-layout head");
  Matrix probs(features.rows(), head.weights.rows());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    Vector z(head.weights.rows());
    for (Eigen::Index j = 0; j < head.weights.rows(); ++j) {
      z(j) = -(features.row(i) - head.weights.row(j)).squaredNorm() / t;
    }
    probs.row(i) = softmax(z).transpose();
  }
  return probs;
}

struct Prediction {
  std::size_t label = 0;
  double score = 0.0;
};

/// Row-wise argmax; ties resolve to the lowest class id.
inline std::vector<Prediction> argmax_rows(const Matrix& scores) {
  std::vector<Prediction> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < scores.cols(); ++j) {
      if (scores(i, j) > scores(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = {static_cast<std::size_t>(best), scores(i, best)};
  }
  return out;
}

/// `sample_id,true_label,pred_label,p_pred`
inline void write_predictions_csv(std::ostream& os, const std::vector<Prediction>& preds,
                                  const std::vector<std::size_t>& labels) {
  if (preds.size() != labels.size()) throw std::invalid_argument("prediction and label counts differ");
  os << "sample_id,true_label,pred_label,p_pred\n";
  char buf[32];
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", preds[i].score);
    os << i << ',' << labels[i] << ',' << preds[i].label << ',' << buf << '\n';
  }
}

}  // namespace ltlab
