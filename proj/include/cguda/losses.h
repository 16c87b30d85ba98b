// cguda/losses.h

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

#ifndef CGUDA_LOSSES_H_
#define CGUDA_LOSSES_H_

#include <vector>

#include "cguda/types.h"

namespace cguda {

struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
};

struct AamConfig {
  double margin = 0.2;  // additive angular margin, [0, pi/2)
  double scale = 30.0;  // softmax prescale
};

enum class ScoreKind { kEuclidean, kCosine };

struct ScoreParams {
  ScoreKind kind = ScoreKind::kCosine;
  double lambda = 1.0;  // Euclidean width, > 0
  double omega = 10.0;  // cosine slope
  double b = -5.0;      // cosine bias
};

// exp(-||x-y||^2 / lambda^2), in (0, 1].
double score_euclidean(const Vector &x, const Vector &y, double lambda);

// exp(omega * cos(x, y) + b); invariant to positive rescaling of x and y.
double score_cosine(const Vector &x, const Vector &y, double omega, double b);

// Batch contrastive loss over positive pairs (view_a.col(i), view_b.col(i)):
//   -(1/N) sum_i log[ s(a_i, b_i) / sum_m s(a_i, b_m) ],
// the denominator running over all N second views including m = i.
// Cosine scores are computed from raw vectors (dot over norm product), so the
// value is invariant to positive per-column rescaling. Evaluated entirely in
// log space.
double contrastive_loss(const Matrix &view_a, const Matrix &view_b,
                        const ScoreParams &score);

// Gradients of contrastive_loss. For the cosine kind the inputs must be
// unit columns (the training path normalizes explicitly and chains through
// that normalization); for the Euclidean kind inputs are raw.
struct ContrastiveGrad {
  double loss = 0.0;
  Matrix d_view_a;
  Matrix d_view_b;
  double d_lambda = 0.0;
  double d_omega = 0.0;
  double d_b = 0.0;
};
ContrastiveGrad contrastive_loss_grad(const Matrix &view_a,
                                      const Matrix &view_b,
                                      const ScoreParams &score);

// Mean cross-entropy over logits = classifier^T embeddings, stable
// log-sum-exp. classifier is d_emb x C, labels in [0, C).
double softmax_ce_loss(const Matrix &embeddings, const Matrix &classifier,
                       const std::vector<int> &labels);

struct CeGrad {
  double loss = 0.0;
  Matrix d_embeddings;
  Matrix d_classifier;
};
CeGrad softmax_ce_grad(const Matrix &embeddings, const Matrix &classifier,
                       const std::vector<int> &labels);

// AAM-softmax: cross-entropy over scale * cos(theta_j) logits with the true
// class angle advanced by the margin. Embedding and classifier columns must
// already be unit-norm; non-normalized inputs are rejected, not silently
// fixed.
double aam_softmax_loss(const Matrix &embeddings, const Matrix &classifier,
                        const std::vector<int> &labels, const AamConfig &cfg);
CeGrad aam_softmax_grad(const Matrix &embeddings, const Matrix &classifier,
                        const std::vector<int> &labels, const AamConfig &cfg);

// Contrastive center loss: attract each embedding to its assigned cluster
// center, repel it from the others, with the cosine score:
//   -(1/N) sum_i log[ s2(e_i, c_{y_i}) / sum_k s2(e_i, c_k) ].
// Centers are constants; no gradient flows into them. e_i columns are the
// per-utterance averages of the two view embeddings, length-normalized.
double contrastive_center_loss(const Matrix &embeddings, const Matrix &centers,
                               const std::vector<int> &assignments,
                               double omega, double b);

struct CenterGrad {
  double loss = 0.0;
  Matrix d_embeddings;  // unit-column inputs assumed, as for the cosine pair
  double d_omega = 0.0;
  double d_b = 0.0;
};
CenterGrad contrastive_center_grad(const Matrix &embeddings,
                                   const Matrix &centers,
                                   const std::vector<int> &assignments,
                                   double omega, double b);

// Joint pre-training objective: classification on the source batch plus
// alpha * contrastive on the target batch. The classification part is
// AAM-softmax (unit-norm source embeddings and classifier required).
double pretrain_loss(const Matrix &source_embeddings, const Matrix &classifier,
                     const std::vector<int> &labels, const AamConfig &aam,
                     const Matrix &target_view_a, const Matrix &target_view_b,
                     const ScoreParams &score, const LossWeights &weights);

// Fine-tuning objective: pretrain_loss plus beta * contrastive center loss.
double joint_loss(const Matrix &source_embeddings, const Matrix &classifier,
                  const std::vector<int> &labels, const AamConfig &aam,
                  const Matrix &target_view_a, const Matrix &target_view_b,
                  const Matrix &target_mean_embeddings, const Matrix &centers,
                  const std::vector<int> &assignments,
                  const ScoreParams &score, const LossWeights &weights);

}  // namespace cguda

#endif  // CGUDA_LOSSES_H_
