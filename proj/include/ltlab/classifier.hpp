#pragma once

// Linear classification head, optional linear feature embedding, mini-batch SGD
// training, tau-normalization and weight-norm diagnostics.

#include "ltlab/binning.hpp"
#include "ltlab/core.hpp"
#include "ltlab/dataset.hpp"
#include "ltlab/losses.hpp"
#include "ltlab/metric.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ltlab {

enum class HeadLayout : std::uint32_t { plain = 0, bags = 1, dense = 2 };

inline const char* to_string(HeadLayout l) {
  switch (l) {
    case HeadLayout::plain: return "plain";
    case HeadLayout::bags: return "bags";
    case HeadLayout::dense: return "dense";
  }
  return "?";
}

struct ClassifierHead {
  Matrix weights;  // rows x d
  Vector bias;     // rows, used only when use_bias
  bool use_bias = false;
  HeadLayout layout = HeadLayout::plain;
  std::vector<std::size_t> category_rows;  // category id -> weight row

  static ClassifierHead plain(std::size_t num_categories, std::size_t dim) {
    ClassifierHead h;
    h.weights = Matrix::Zero(static_cast<Eigen::Index>(num_categories), static_cast<Eigen::Index>(dim));
    h.bias = Vector::Zero(static_cast<Eigen::Index>(num_categories));
    h.category_rows.resize(num_categories);
    std::iota(h.category_rows.begin(), h.category_rows.end(), std::size_t{0});
    return h;
  }

  static ClassifierHead bags(const GroupPartition& p, std::size_t dim) {
    ClassifierHead h;
    h.layout = HeadLayout::bags;
    h.weights = Matrix::Zero(static_cast<Eigen::Index>(p.logit_size()), static_cast<Eigen::Index>(dim));
    h.bias = Vector::Zero(static_cast<Eigen::Index>(p.logit_size()));
    h.category_rows = p.output_map();
    return h;
  }

  std::size_t rows() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t num_categories() const { return category_rows.size(); }

  void randomize(std::uint64_t seed, double stddev) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, stddev);
    for (Eigen::Index i = 0; i < weights.rows(); ++i) {
      for (Eigen::Index j = 0; j < weights.cols(); ++j) weights(i, j) = normal(rng);
    }
  }

  friend bool operator==(const ClassifierHead& a, const ClassifierHead& b) {
    return a.layout == b.layout && a.use_bias == b.use_bias && a.category_rows == b.category_rows &&
           a.weights == b.weights && (!a.use_bias || a.bias == b.bias);
  }
};

/// logits = features * W^T (+ bias); one row per sample.
inline Matrix forward(const ClassifierHead& head, const Matrix& features) {
  if (static_cast<std::size_t>(features.cols()) != head.dim()) {
    throw std::invalid_argument("feature dim " + std::to_string(features.cols()) + " does not match head dim " +
                                std::to_string(head.dim()));
  }
  Matrix logits = features * head.weights.transpose();
  if (head.use_bias) logits.rowwise() += head.bias.transpose();
  return logits;
}

inline Vector forward(const ClassifierHead& head, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != head.dim()) throw std::invalid_argument("feature dim mismatch");
  Vector z = head.weights * x;
  if (head.use_bias) z += head.bias;
  return z;
}

/// Divides every category row by its norm raised to tau. Background and
/// "Others" rows are untouched.
inline ClassifierHead tau_normalize(const ClassifierHead& head, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in [0, 1]");
  ClassifierHead out = head;
  if (tau == 0.0) return out;
  for (std::size_t k = 0; k < head.num_categories(); ++k) {
    const auto r = static_cast<Eigen::Index>(head.category_rows[k]);
    const double norm = head.weights.row(r).norm();
    if (!(norm > 0.0)) throw std::invalid_argument("category " + std::to_string(k) + " has a zero weight row");
    out.weights.row(r) = head.weights.row(r) / std::pow(norm, tau);
  }
  return out;
}

/// Euclidean norm of each category's weight row, by category id.
inline std::vector<double> weight_norms(const ClassifierHead& head) {
  std::vector<double> norms(head.num_categories());
  for (std::size_t k = 0; k < norms.size(); ++k) {
    norms[k] = head.weights.row(static_cast<Eigen::Index>(head.category_rows[k])).norm();
  }
  return norms;
}

/// Head plus an optional learnable linear map applied to raw features first.
struct Model {
  ClassifierHead head;
  std::optional<Matrix> embedding;  // e x d

  Matrix embed(const Matrix& x) const { return embedding ? Matrix(x * embedding->transpose()) : x; }

  friend bool operator==(const Model& a, const Model& b) {
    return a.head == b.head && a.embedding.has_value() == b.embedding.has_value() &&
           (!a.embedding || *a.embedding == *b.embedding);
  }
};

enum class LossKind { ce, bags, center, lmcl, ece };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::ce: return "ce";
    case LossKind::bags: return "bags";
    case LossKind::center: return "center";
    case LossKind::lmcl: return "lmcl";
    case LossKind::ece: return "ece";
  }
  return "?";
}

struct LossSpec {
  LossKind kind = LossKind::ce;
  BagsMode bags_mode = BagsMode::plain;
  double gamma = 2.0;
  double beta = 8.0;
  double lambda = 0.01;
  double alpha = 0.5;
  double s = 30.0;
  double m = 0.35;
  double t = 1.0;
  std::uint64_t hybrid_upper_bound = 100;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  LossSpec loss;
  // Synthetic background points injected into group-softmax training.
  std::size_t background_samples = 0;
  double background_sigma = 1.0;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean per-sample training loss
  std::map<std::string, double> metrics;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
};

struct TrainHooks {
  // Called after every epoch with the current model; results land in EpochLog::metrics.
  std::function<std::map<std::string, double>(const Model&)> on_epoch;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (a + 1)) ^ (0xbf58476d1ce4e5b9ULL * (b + 1));
  x ^= x >> 31;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 29;
  return x;
}

struct BatchGrad {
  double loss = 0.0;
  Matrix grad_weights;
  Vector grad_bias;
  Matrix grad_features;  // B x e
};

}  // namespace detail

/// Mini-batch SGD with momentum over seeded shuffles. The center bank, when given,
/// is updated once per batch after the parameter step using the batch's features.
inline TrainResult train(const Dataset& data, Model init, const TrainConfig& cfg,
                         const GroupPartition* partition = nullptr, CenterBank* bank = nullptr,
                         const TrainHooks& hooks = {}) {
  cfg.validate();
  data.validate();
  const LossSpec& loss = cfg.loss;
  const bool bags = loss.kind == LossKind::bags;
  if (bags && partition == nullptr) throw std::invalid_argument("group softmax training needs a partition");
  if (bags && init.head.layout != HeadLayout::bags) throw std::invalid_argument("group softmax needs a bags-layout head");
  if (!bags && init.head.layout != HeadLayout::plain) throw std::invalid_argument("loss needs a plain-layout head");
  if (bags && init.head.rows() != partition->logit_size()) throw std::invalid_argument("head rows != partition layout");
  if (!bags && init.head.rows() != data.num_categories) throw std::invalid_argument("head rows != category count");
  if (init.embedding && static_cast<std::size_t>(init.embedding->cols()) != data.dim()) {
    throw std::invalid_argument("embedding input dim mismatch");
  }
  const std::size_t feat_dim = init.embedding ? static_cast<std::size_t>(init.embedding->rows()) : data.dim();
  if (init.head.dim() != feat_dim) throw std::invalid_argument("head dim mismatch");
  if (loss.kind == LossKind::center && bank == nullptr) throw std::invalid_argument("center loss needs a center bank");
  if (bank != nullptr && (bank->dim() != feat_dim || bank->num_classes() != data.num_categories)) {
    throw std::invalid_argument("center bank shape mismatch");
  }

  std::optional<ClassWeightTable> weights;
  BagsParams bags_params;
  if (bags) {
    bags_params.mode = loss.bags_mode;
    bags_params.gamma = loss.gamma;
    bags_params.hybrid_upper_bound = loss.hybrid_upper_bound;
    if (loss.bags_mode == BagsMode::weighted || loss.bags_mode == BagsMode::hybrid) {
      weights = class_weights(census(data), *partition);
      bags_params.weights = &*weights;
    }
  }

  // Training pool: dataset rows, then injected background points.
  Matrix pool = data.features;
  std::vector<std::size_t> pool_labels = data.labels;
  if (bags && cfg.background_samples > 0) {
    std::mt19937_64 bg_rng(detail::mix_seed(cfg.seed, 0xb6, 0));
    std::normal_distribution<double> normal(0.0, cfg.background_sigma);
    pool.conservativeResize(pool.rows() + static_cast<Eigen::Index>(cfg.background_samples), Eigen::NoChange);
    for (Eigen::Index i = static_cast<Eigen::Index>(data.size()); i < pool.rows(); ++i) {
      for (Eigen::Index j = 0; j < pool.cols(); ++j) pool(i, j) = normal(bg_rng);
      pool_labels.push_back(kBackground);
    }
  }

  TrainResult result{std::move(init), {}};
  Model& model = result.model;
  ClassifierHead& head = model.head;
  Matrix vel_w = Matrix::Zero(head.weights.rows(), head.weights.cols());
  Vector vel_b = Vector::Zero(head.weights.rows());
  Matrix vel_e;
  if (model.embedding) vel_e = Matrix::Zero(model.embedding->rows(), model.embedding->cols());

  std::vector<std::size_t> order(pool_labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t B = std::min(cfg.batch_size, order.size() - start);
      Matrix x(static_cast<Eigen::Index>(B), pool.cols());
      std::vector<std::size_t> labels(B);
      for (std::size_t i = 0; i < B; ++i) {
        x.row(static_cast<Eigen::Index>(i)) = pool.row(static_cast<Eigen::Index>(order[start + i]));
        labels[i] = pool_labels[order[start + i]];
      }
      const Matrix feats = model.embed(x);

      detail::BatchGrad g;
      g.grad_weights = Matrix::Zero(head.weights.rows(), head.weights.cols());
      g.grad_bias = Vector::Zero(head.weights.rows());
      g.grad_features = Matrix::Zero(feats.rows(), feats.cols());

      if (loss.kind == LossKind::lmcl || loss.kind == LossKind::ece) {
        for (std::size_t i = 0; i < B; ++i) {
          const auto row = static_cast<Eigen::Index>(i);
          const Vector f = feats.row(row).transpose();
          const PairLossOutput out = loss.kind == LossKind::lmcl ? lmcl_loss(f, head.weights, labels[i], loss.s, loss.m)
                                                                 : ece_loss(f, head.weights, labels[i], loss.t);
          g.loss += out.value;
          g.grad_weights += out.grad_weights;
          g.grad_features.row(row) = out.grad_features.transpose();
        }
      } else {
        const Matrix logits = forward(head, feats);
        Matrix grad_logits(logits.rows(), logits.cols());
        OthersMask mask;
        if (bags) mask = select_others(labels, *partition, loss.beta, detail::mix_seed(cfg.seed, epoch, batch_index));
        for (std::size_t i = 0; i < B; ++i) {
          const auto row = static_cast<Eigen::Index>(i);
          const Vector z = logits.row(row).transpose();
          const LossOutput out = bags ? bags_loss(z, labels[i], *partition, bags_params, mask.row(i))
                                      : softmax_ce(z, labels[i]);
          g.loss += out.value;
          grad_logits.row(row) = out.grad_logits.transpose();
        }
        if (loss.kind == LossKind::center && loss.lambda != 0.0) {
          // Classes without a center yet contribute no center term this batch.
          std::vector<std::size_t> rows, seen;
          for (std::size_t i = 0; i < B; ++i) {
            if (bank->initialized(labels[i])) {
              rows.push_back(i);
              seen.push_back(labels[i]);
            }
          }
          if (!rows.empty()) {
            Matrix sub(static_cast<Eigen::Index>(rows.size()), feats.cols());
            for (std::size_t r = 0; r < rows.size(); ++r) {
              sub.row(static_cast<Eigen::Index>(r)) = feats.row(static_cast<Eigen::Index>(rows[r]));
            }
            const CenterLossOutput c = center_loss(sub, seen, *bank);
            g.loss += loss.lambda * c.value;
            for (std::size_t r = 0; r < rows.size(); ++r) {
              g.grad_features.row(static_cast<Eigen::Index>(rows[r])) +=
                  loss.lambda * c.grad_features.row(static_cast<Eigen::Index>(r));
            }
          }
        }
        g.grad_weights = grad_logits.transpose() * feats;
        g.grad_bias = grad_logits.colwise().sum().transpose();
        g.grad_features += grad_logits * head.weights;
      }

      if (!std::isfinite(g.loss)) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
      }
      epoch_loss += g.loss;

      const double scale = 1.0 / static_cast<double>(B);
      vel_w = cfg.momentum * vel_w + scale * g.grad_weights;
      head.weights -= cfg.learning_rate * vel_w;
      if (head.use_bias && loss.kind != LossKind::lmcl && loss.kind != LossKind::ece) {
        vel_b = cfg.momentum * vel_b + scale * g.grad_bias;
        head.bias -= cfg.learning_rate * vel_b;
      }
      if (model.embedding) {
        const Matrix grad_e = scale * g.grad_features.transpose() * x;
        vel_e = cfg.momentum * vel_e + grad_e;
        *model.embedding -= cfg.learning_rate * vel_e;
      }
      if (!head.weights.allFinite() || !head.bias.allFinite() || (model.embedding && !model.embedding->allFinite())) {
        throw NumericalError("non-finite parameters after epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
      }
      if (bank != nullptr) {
        std::vector<std::size_t> fg_rows, fg_labels;
        for (std::size_t i = 0; i < B; ++i) {
          if (labels[i] != kBackground) {
            fg_rows.push_back(i);
            fg_labels.push_back(labels[i]);
          }
        }
        Matrix fg(static_cast<Eigen::Index>(fg_rows.size()), feats.cols());
        for (std::size_t r = 0; r < fg_rows.size(); ++r) {
          fg.row(static_cast<Eigen::Index>(r)) = feats.row(static_cast<Eigen::Index>(fg_rows[r]));
        }
        update_centers(*bank, fg, fg_labels, loss.alpha);
      }
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = epoch_loss / static_cast<double>(order.size());
    if (hooks.on_epoch) entry.metrics = hooks.on_epoch(model);
    result.log.push_back(std::move(entry));
  }
  return result;
}

inline void save_matrix(std::ostream& os, const Matrix& w, HeadLayout layout, const Vector* bias) {
  io::write_magic(os, "LTHD");
  io::write_u32(os, 1);
  io::write_u32(os, static_cast<std::uint32_t>(w.rows()));
  io::write_u32(os, static_cast<std::uint32_t>(w.cols()));
  // Bit 8 of the layout tag flags a trailing bias vector.
  io::write_u32(os, static_cast<std::uint32_t>(layout) | (bias ? 0x100u : 0u));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) io::write_f32(os, static_cast<float>(w(i, j)));
  }
  if (bias) {
    for (Eigen::Index i = 0; i < bias->size(); ++i) io::write_f32(os, static_cast<float>((*bias)(i)));
  }
}

inline void save_head(const ClassifierHead& head, std::ostream& os) {
  save_matrix(os, head.weights, head.layout, head.use_bias ? &head.bias : nullptr);
}

struct LoadedMatrix {
  Matrix weights;
  HeadLayout layout = HeadLayout::plain;
  std::optional<Vector> bias;
};

inline LoadedMatrix load_matrix(std::istream& is) {
  io::expect_magic(is, "LTHD");
  io::expect_version(is, 1);
  const auto rows = io::read_u32(is, "rows");
  const auto d = io::read_u32(is, "d");
  const auto tag = io::read_u32(is, "layout tag");
  if ((tag & 0xFF) > 2 || (tag & ~0x1FFu) != 0) throw FormatError("unknown layout tag " + std::to_string(tag), "offset 16");
  LoadedMatrix out;
  out.layout = static_cast<HeadLayout>(tag & 0xFF);
  out.weights.resize(rows, d);
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j < d; ++j) out.weights(i, j) = io::read_f32(is, "weight");
  }
  if (tag & 0x100) {
    Vector b(rows);
    for (std::uint32_t i = 0; i < rows; ++i) b(i) = io::read_f32(is, "bias");
    out.bias = std::move(b);
  }
  return out;
}

/// Reads a head; bags-layout heads need the partition that defines their category rows.
inline ClassifierHead load_head(std::istream& is, const GroupPartition* partition = nullptr) {
  LoadedMatrix m = load_matrix(is);
  ClassifierHead head;
  head.layout = m.layout;
  head.weights = std::move(m.weights);
  head.use_bias = m.bias.has_value();
  head.bias = m.bias ? *m.bias : Vector::Zero(head.weights.rows());
  if (head.layout == HeadLayout::bags) {
    if (partition == nullptr) throw std::invalid_argument("bags-layout head needs its partition");
    if (partition->logit_size() != head.rows()) throw std::invalid_argument("partition does not match head rows");
    head.category_rows = partition->output_map();
  } else if (head.layout == HeadLayout::plain) {
    head.category_rows.resize(head.rows());
    std::iota(head.category_rows.begin(), head.category_rows.end(), std::size_t{0});
  } else {
    throw FormatError("dense matrix is not a classifier head", "offset 16");
  }
  return head;
}

}  // namespace ltlab
