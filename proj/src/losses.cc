// cguda/losses.cc

// Copyright 2026  The cguda Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "cguda/losses.h"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cguda {

namespace {

constexpr double kUnitNormTol = 1e-6;

void check_unit_columns(const Matrix &m, const char *what) {
  for (index_t j = 0; j < m.cols(); ++j) {
    if (std::abs(m.col(j).norm() - 1.0) > kUnitNormTol) {
      throw std::invalid_argument(std::string(what) +
                                  " must have unit-norm columns");
    }
  }
}

// Row-wise log-sum-exp of an N x M matrix.
Vector row_lse(const Matrix &t) {
  Vector out(t.rows());
  for (index_t i = 0; i < t.rows(); ++i) {
    const double m = t.row(i).maxCoeff();
    out[i] = m + std::log((t.row(i).array() - m).exp().sum());
  }
  return out;
}

// Row-wise softmax.
Matrix row_softmax(const Matrix &t) {
  Matrix p(t.rows(), t.cols());
  for (index_t i = 0; i < t.rows(); ++i) {
    const double m = t.row(i).maxCoeff();
    p.row(i) = (t.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

// Pairwise log-scores t(i, m) = log s(a_i, b_m) for the selected score.
Matrix pair_log_scores(const Matrix &a, const Matrix &b,
                       const ScoreParams &score, bool assume_unit) {
  const index_t n = a.cols();
  if (score.kind == ScoreKind::kCosine) {
    Matrix cosines = a.transpose() * b;  // (i, m)
    if (!assume_unit) {
      for (index_t i = 0; i < n; ++i) {
        const double na = a.col(i).norm();
        if (na < 1e-12) throw std::invalid_argument("zero-norm embedding");
        cosines.row(i) /= na;
      }
      for (index_t m = 0; m < b.cols(); ++m) {
        const double nb = b.col(m).norm();
        if (nb < 1e-12) throw std::invalid_argument("zero-norm embedding");
        cosines.col(m) /= nb;
      }
    }
    return (score.omega * cosines).array() + score.b;
  }
  if (score.lambda <= 0) throw std::invalid_argument("lambda must be > 0");
  const double inv_l2 = 1.0 / (score.lambda * score.lambda);
  Matrix t(n, b.cols());
  for (index_t i = 0; i < n; ++i) {
    for (index_t m = 0; m < b.cols(); ++m) {
      t(i, m) = -(a.col(i) - b.col(m)).squaredNorm() * inv_l2;
    }
  }
  return t;
}

}  // namespace

double score_euclidean(const Vector &x, const Vector &y, double lambda) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("score_euclidean: dimension mismatch");
  }
  if (lambda <= 0) throw std::invalid_argument("lambda must be > 0");
  return std::exp(-(x - y).squaredNorm() / (lambda * lambda));
}

double score_cosine(const Vector &x, const Vector &y, double omega, double b) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("score_cosine: dimension mismatch");
  }
  const double nx = x.norm(), ny = y.norm();
  if (nx < 1e-12 || ny < 1e-12) {
    throw std::invalid_argument("score_cosine: zero-norm input");
  }
  return std::exp(omega * (x.dot(y) / (nx * ny)) + b);
}

double contrastive_loss(const Matrix &view_a, const Matrix &view_b,
                        const ScoreParams &score) {
  const index_t n = view_a.cols();
  if (n == 0) throw std::invalid_argument("contrastive_loss: empty batch");
  if (view_b.cols() != n || view_a.rows() != view_b.rows()) {
    throw std::invalid_argument("contrastive_loss: view shape mismatch");
  }
  const Matrix t = pair_log_scores(view_a, view_b, score, /*assume_unit=*/false);
  if (!t.allFinite()) {
    throw std::runtime_error("contrastive_loss: non-finite score");
  }
  const Vector lse = row_lse(t);
  double loss = 0.0;
  for (index_t i = 0; i < n; ++i) loss += lse[i] - t(i, i);
  return loss / static_cast<double>(n);
}

ContrastiveGrad contrastive_loss_grad(const Matrix &view_a,
                                      const Matrix &view_b,
                                      const ScoreParams &score) {
  const index_t n = view_a.cols();
  if (n == 0) throw std::invalid_argument("contrastive_loss: empty batch");
  const Matrix t = pair_log_scores(view_a, view_b, score, /*assume_unit=*/true);
  if (!t.allFinite()) {
    throw std::runtime_error("contrastive_loss: non-finite score");
  }
  const Vector lse = row_lse(t);
  Matrix g = row_softmax(t);  // dL/dt = (p - I)/N
  for (index_t i = 0; i < n; ++i) g(i, i) -= 1.0;
  g /= static_cast<double>(n);

  ContrastiveGrad out;
  for (index_t i = 0; i < n; ++i) out.loss += lse[i] - t(i, i);
  out.loss /= static_cast<double>(n);

  if (score.kind == ScoreKind::kCosine) {
    // t = omega * (A^T B) + b on unit columns.
    out.d_view_a = score.omega * view_b * g.transpose();
    out.d_view_b = score.omega * view_a * g;
    const Matrix cosines = view_a.transpose() * view_b;
    out.d_omega = g.cwiseProduct(cosines).sum();
    out.d_b = g.sum();
  } else {
    // t = -||a_i - b_m||^2 / lambda^2.
    const double inv_l2 = 1.0 / (score.lambda * score.lambda);
    Matrix dist2(n, n);
    for (index_t i = 0; i < n; ++i) {
      for (index_t m = 0; m < n; ++m) {
        dist2(i, m) = (view_a.col(i) - view_b.col(m)).squaredNorm();
      }
    }
    const Matrix gd = -inv_l2 * g;  // dL/d dist2
    out.d_view_a =
        2.0 * (view_a * gd.rowwise().sum().asDiagonal() - view_b * gd.transpose());
    out.d_view_b =
        2.0 * (view_b * gd.colwise().sum().asDiagonal() - view_a * gd);
    out.d_lambda = 2.0 / std::pow(score.lambda, 3) * g.cwiseProduct(dist2).sum();
  }
  return out;
}

namespace {

void check_labels(const std::vector<int> &labels, index_t n, index_t c) {
  if (static_cast<index_t>(labels.size()) != n) {
    throw std::invalid_argument("label count does not match batch size");
  }
  for (int y : labels) {
    if (y < 0 || y >= c) throw std::invalid_argument("label out of range");
  }
}

}  // namespace

double softmax_ce_loss(const Matrix &embeddings, const Matrix &classifier,
                       const std::vector<int> &labels) {
  const index_t n = embeddings.cols(), c = classifier.cols();
  check_labels(labels, n, c);
  if (embeddings.rows() != classifier.rows()) {
    throw std::invalid_argument("softmax_ce_loss: dimension mismatch");
  }
  const Matrix logits = classifier.transpose() * embeddings;  // C x N
  const Vector lse = row_lse(logits.transpose());
  double loss = 0.0;
  for (index_t i = 0; i < n; ++i) {
    loss += lse[i] - logits(labels[static_cast<std::size_t>(i)], i);
  }
  return loss / static_cast<double>(n);
}

CeGrad softmax_ce_grad(const Matrix &embeddings, const Matrix &classifier,
                       const std::vector<int> &labels) {
  const index_t n = embeddings.cols(), c = classifier.cols();
  check_labels(labels, n, c);
  const Matrix logits = classifier.transpose() * embeddings;
  Matrix p = row_softmax(logits.transpose()).transpose();  // C x N
  const Vector lse = row_lse(logits.transpose());
  CeGrad out;
  for (index_t i = 0; i < n; ++i) {
    out.loss += lse[i] - logits(labels[static_cast<std::size_t>(i)], i);
    p(labels[static_cast<std::size_t>(i)], i) -= 1.0;
  }
  out.loss /= static_cast<double>(n);
  p /= static_cast<double>(n);  // dL/dlogits
  out.d_embeddings = classifier * p;
  out.d_classifier = embeddings * p.transpose();
  return out;
}

namespace {

// Shared AAM forward: margin-adjusted scaled-cosine logits. The margin is
// applied to the true-class angle: cos(theta_y + m).
struct AamLogits {
  Matrix logits;   // C x N
  Matrix cosines;  // C x N, clamped to [-1, 1]
};

AamLogits aam_logits(const Matrix &embeddings, const Matrix &classifier,
                     const std::vector<int> &labels, const AamConfig &cfg) {
  const index_t n = embeddings.cols(), c = classifier.cols();
  check_labels(labels, n, c);
  check_unit_columns(embeddings, "aam embeddings");
  check_unit_columns(classifier, "aam classifier");
  if (cfg.margin < 0 || cfg.margin >= M_PI_2 || cfg.scale <= 0) {
    throw std::invalid_argument("bad AAM margin/scale");
  }
  AamLogits out;
  out.cosines = (classifier.transpose() * embeddings)
                    .cwiseMax(-1.0)
                    .cwiseMin(1.0);
  out.logits = cfg.scale * out.cosines;
  const double cos_m = std::cos(cfg.margin), sin_m = std::sin(cfg.margin);
  for (index_t i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    const double cy = out.cosines(y, i);
    const double sy = std::sqrt(std::max(0.0, 1.0 - cy * cy));
    out.logits(y, i) = cfg.scale * (cy * cos_m - sy * sin_m);
  }
  return out;
}

}  // namespace

double aam_softmax_loss(const Matrix &embeddings, const Matrix &classifier,
                        const std::vector<int> &labels, const AamConfig &cfg) {
  const AamLogits fwd = aam_logits(embeddings, classifier, labels, cfg);
  const index_t n = embeddings.cols();
  const Vector lse = row_lse(fwd.logits.transpose());
  double loss = 0.0;
  for (index_t i = 0; i < n; ++i) {
    loss += lse[i] - fwd.logits(labels[static_cast<std::size_t>(i)], i);
  }
  return loss / static_cast<double>(n);
}

CeGrad aam_softmax_grad(const Matrix &embeddings, const Matrix &classifier,
                        const std::vector<int> &labels, const AamConfig &cfg) {
  const AamLogits fwd = aam_logits(embeddings, classifier, labels, cfg);
  const index_t n = embeddings.cols();
  const Vector lse = row_lse(fwd.logits.transpose());
  Matrix dlogits = row_softmax(fwd.logits.transpose()).transpose();  // C x N
  CeGrad out;
  for (index_t i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    out.loss += lse[i] - fwd.logits(y, i);
    dlogits(y, i) -= 1.0;
  }
  out.loss /= static_cast<double>(n);
  dlogits /= static_cast<double>(n);

  // Chain logits -> cosines. Non-target entries scale by `scale`; the target
  // entry additionally goes through the margin rotation. away from the
  // |cos| = 1 poles d/dc cos(theta+m) = cos m + c sin m / sqrt(1-c^2).
  const double cos_m = std::cos(cfg.margin), sin_m = std::sin(cfg.margin);
  Matrix dcos = cfg.scale * dlogits;
  for (index_t i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    const double cy = fwd.cosines(y, i);
    const double sy = std::max(std::sqrt(std::max(0.0, 1.0 - cy * cy)), 1e-6);
    dcos(y, i) = cfg.scale * dlogits(y, i) * (cos_m + cy * sin_m / sy);
  }
  out.d_embeddings = classifier * dcos;
  out.d_classifier = embeddings * dcos.transpose();
  return out;
}

namespace {

void check_assignments(const std::vector<int> &assignments, index_t n,
                       index_t k) {
  if (k <= 0) throw std::invalid_argument("cluster count must be >= 1");
  if (static_cast<index_t>(assignments.size()) != n) {
    throw std::invalid_argument("assignment count does not match batch size");
  }
  for (int y : assignments) {
    if (y < 0 || y >= k) {
      throw std::invalid_argument("cluster assignment out of range");
    }
  }
}

}  // namespace

double contrastive_center_loss(const Matrix &embeddings, const Matrix &centers,
                               const std::vector<int> &assignments,
                               double omega, double b) {
  const index_t n = embeddings.cols(), k = centers.cols();
  check_assignments(assignments, n, k);
  ScoreParams score{ScoreKind::kCosine, 1.0, omega, b};
  const Matrix t =
      pair_log_scores(embeddings, centers, score, /*assume_unit=*/false);
  const Vector lse = row_lse(t);
  double loss = 0.0;
  for (index_t i = 0; i < n; ++i) {
    loss += lse[i] - t(i, assignments[static_cast<std::size_t>(i)]);
  }
  return loss / static_cast<double>(n);
}

CenterGrad contrastive_center_grad(const Matrix &embeddings,
                                   const Matrix &centers,
                                   const std::vector<int> &assignments,
                                   double omega, double b) {
  const index_t n = embeddings.cols(), k = centers.cols();
  check_assignments(assignments, n, k);
  ScoreParams score{ScoreKind::kCosine, 1.0, omega, b};
  const Matrix t =
      pair_log_scores(embeddings, centers, score, /*assume_unit=*/true);
  const Vector lse = row_lse(t);
  Matrix g = row_softmax(t);  // N x K
  CenterGrad out;
  for (index_t i = 0; i < n; ++i) {
    const int y = assignments[static_cast<std::size_t>(i)];
    out.loss += lse[i] - t(i, y);
    g(i, y) -= 1.0;
  }
  out.loss /= static_cast<double>(n);
  g /= static_cast<double>(n);

  // Centers are constants; only the embeddings and (omega, b) get gradients.
  out.d_embeddings = omega * centers * g.transpose();
  const Matrix cosines = embeddings.transpose() * centers;
  out.d_omega = g.cwiseProduct(cosines).sum();
  out.d_b = g.sum();
  return out;
}

double pretrain_loss(const Matrix &source_embeddings, const Matrix &classifier,
                     const std::vector<int> &labels, const AamConfig &aam,
                     const Matrix &target_view_a, const Matrix &target_view_b,
                     const ScoreParams &score, const LossWeights &weights) {
  if (weights.alpha < 0) throw std::invalid_argument("alpha must be >= 0");
  double loss = aam_softmax_loss(source_embeddings, classifier, labels, aam);
  if (weights.alpha != 0.0) {
    loss += weights.alpha * contrastive_loss(target_view_a, target_view_b, score);
  }
  return loss;
}

double joint_loss(const Matrix &source_embeddings, const Matrix &classifier,
                  const std::vector<int> &labels, const AamConfig &aam,
                  const Matrix &target_view_a, const Matrix &target_view_b,
                  const Matrix &target_mean_embeddings, const Matrix &centers,
                  const std::vector<int> &assignments,
                  const ScoreParams &score, const LossWeights &weights) {
  if (weights.beta < 0) throw std::invalid_argument("beta must be >= 0");
  double loss = pretrain_loss(source_embeddings, classifier, labels, aam,
                              target_view_a, target_view_b, score, weights);
  if (weights.beta != 0.0) {
    loss += weights.beta * contrastive_center_loss(target_mean_embeddings,
                                                   centers, assignments,
                                                   score.omega, score.b);
  }
  return loss;
}

}  // namespace cguda
