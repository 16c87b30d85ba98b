// cguda/network.h

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

#ifndef CGUDA_NETWORK_H_
#define CGUDA_NETWORK_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cguda/losses.h"
#include "cguda/types.h"

namespace cguda {

struct LayerParams {
  Matrix weight;  // out x in
  Vector bias;    // out
};

// Fully connected embedding network (ReLU between layers, last layer linear)
// plus the AAM classification head and the learnable score parameters.
struct ModelParams {
  std::vector<LayerParams> layers;
  Matrix classifier;    // d_emb x C, unit-norm columns
  double lambda = 1.0;  // > 0; optimized in log space
  double omega = 10.0;
  double b = -5.0;

  index_t input_dim() const { return layers.front().weight.cols(); }
  index_t embedding_dim() const { return layers.back().weight.rows(); }
  index_t num_classes() const { return classifier.cols(); }

  // Rejects NaN/Inf anywhere, lambda <= 0, and non-unit classifier columns.
  void validate() const;
};

// Seeded uniform init in [-sqrt(1/fan_in), +sqrt(1/fan_in)]; classifier
// columns drawn the same way and normalized to unit length.
// layer_dims = {d_in, hidden..., d_emb}.
ModelParams init_params(const std::vector<index_t> &layer_dims,
                        index_t num_classes, std::uint64_t seed,
                        double omega0 = 10.0, double b0 = -5.0,
                        double lambda0 = 1.0);

struct Embedding {
  Vector vector;
  bool normalized = false;
};

// Deterministic forward pass of one input; the result is not yet
// length-normalized.
Embedding forward(const ModelParams &params, const Vector &input);

// Unit-norm copy, same direction. A near-zero input signals a degenerate
// embedding and raises an error instead of being perturbed.
Embedding length_normalize(const Embedding &e);

// Batch forward; inputs and embeddings one per column.
Matrix forward_batch(const ModelParams &params, const Matrix &inputs);

// Activations a_0 (input) .. a_L (embeddings) for backprop. ReLU masks are
// recovered from a_l > 0, which realizes the subgradient convention
// relu'(0) = 0.
struct ForwardCache {
  std::vector<Matrix> activations;
};
ForwardCache forward_batch_cached(const ModelParams &params,
                                  const Matrix &inputs);

// Same shapes as ModelParams; lambda slot stores d/d(lambda) directly.
struct ParamGrads {
  std::vector<LayerParams> layers;
  Matrix classifier;
  double lambda = 0.0;
  double omega = 0.0;
  double b = 0.0;

  static ParamGrads zeros_like(const ModelParams &params);
  void add_scaled(const ParamGrads &other, double scale);
};

enum class LossKind {
  kSoftmaxCe,          // plain CE on classifier^T embeddings (source batch)
  kAamSoftmax,         // AAM-softmax on normalized embeddings (source batch)
  kContrastive,        // Eq.-style pair loss on the target views
  kContrastiveCenter,  // center loss on averaged target views
  kPretrain,           // AAM + alpha * contrastive
  kJoint,              // AAM + alpha * contrastive + beta * center
};

const char *loss_kind_name(LossKind kind);

// One optimization step's worth of data. Only the fields a given LossKind
// reads need to be populated. Cluster centers are treated as constants.
struct LossBatch {
  Matrix source_inputs;  // d_in x Bs
  std::vector<int> source_labels;
  Matrix target_view_a;  // d_in x Bt
  Matrix target_view_b;
  std::vector<int> target_assignments;  // cluster index per target item
  Matrix centers;                       // d_emb x K, unit columns
};

struct LossConfig {
  ScoreKind score = ScoreKind::kCosine;
  AamConfig aam;
  LossWeights weights;
};

struct LossValue {
  double total = 0.0;
  double classification = 0.0;  // unweighted components
  double contrastive = 0.0;
  double center = 0.0;
};

struct BackwardResult {
  LossValue loss;
  ParamGrads grads;
};

// Loss value only (used by the finite-difference harness).
LossValue loss_value(const ModelParams &params, const LossBatch &batch,
                     LossKind kind, const LossConfig &cfg);

// Loss plus analytic gradients for every participating parameter, including
// lambda / omega / b. Embedding length normalization and classifier column
// normalization are part of the differentiated graph, so the gradients are
// exact for the function loss_value computes.
BackwardResult backward(const ModelParams &params, const LossBatch &batch,
                        LossKind kind, const LossConfig &cfg);

// Adam with the per-epoch geometric learning-rate schedule
// lr(epoch) = base_lr * decay^epoch.
struct AdamState {
  ParamGrads m;
  ParamGrads v;
  std::int64_t step_count = 0;
  double base_lr = 0.001;
  double decay = 0.95;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

AdamState init_adam(const ModelParams &params, double base_lr = 0.001,
                    double decay = 0.95);
double epoch_lr(const AdamState &state, int epoch);

// In-place update. lambda is stepped multiplicatively (its moments live in
// log space, keeping lambda > 0); classifier columns are re-normalized to
// unit length after the step. Throws on non-finite gradients.
void adam_step(ModelParams &params, const ParamGrads &grads, AdamState &state,
               int epoch);

// Central-difference check of backward over all parameters (or a seeded
// subsample when the model exceeds max_params entries). Returns the largest
// absolute deviation scaled by the gradient's infinity norm, so near-zero
// components do not blow up the ratio.
double grad_check(const ModelParams &params, const LossBatch &batch,
                  LossKind kind, const LossConfig &cfg, double epsilon = 1e-4,
                  std::uint64_t subsample_seed = 0, int max_params = 10000);

// Flat views used by grad_check; order: per-layer weight then bias,
// classifier, lambda, omega, b.
Vector flatten_params(const ModelParams &params);
Vector flatten_grads(const ParamGrads &grads);
void unflatten_params(const Vector &flat, ModelParams &params);

// Binary checkpoint: magic "CGUDA1", u32 layer count, tensors as
// (u32 rows, u32 cols, f64 row-major), lambda/omega/b as f64, then optional
// optimizer state. Little-endian, bit-exact round trip.
void save_checkpoint(const std::string &path, const ModelParams &params,
                     const AdamState *opt_state = nullptr);

struct Checkpoint {
  ModelParams params;
  std::optional<AdamState> opt_state;
};
Checkpoint load_checkpoint(const std::string &path);

}  // namespace cguda

#endif  // CGUDA_NETWORK_H_
