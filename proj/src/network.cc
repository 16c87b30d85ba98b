// cguda/network.cc

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

#include "cguda/network.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "cguda/io_util.h"
#include "cguda/rng.h"

namespace cguda {

namespace {

constexpr double kNormFloor = 1e-12;

Matrix normalize_columns(const Matrix &m) {
  Matrix out(m.rows(), m.cols());
  for (index_t j = 0; j < m.cols(); ++j) {
    const double norm = m.col(j).norm();
    if (norm < kNormFloor) {
      throw std::runtime_error("degenerate embedding: near-zero norm");
    }
    out.col(j) = m.col(j) / norm;
  }
  return out;
}

// Backprop through per-column length normalization: with v_hat = v / ||v||,
//   dL/dv = (g - (g . v_hat) v_hat) / ||v||.
Matrix chain_normalize(const Matrix &d_normalized, const Matrix &raw) {
  Matrix out(raw.rows(), raw.cols());
  for (index_t j = 0; j < raw.cols(); ++j) {
    const double norm = raw.col(j).norm();
    const Vector v_hat = raw.col(j) / norm;
    const Vector g = d_normalized.col(j);
    out.col(j) = (g - g.dot(v_hat) * v_hat) / norm;
  }
  return out;
}

// Accumulates scale * dL/d(embeddings) through the MLP into grads.
void backprop_mlp(const ModelParams &params, const ForwardCache &cache,
                  const Matrix &d_embeddings, double scale,
                  ParamGrads &grads) {
  const std::size_t n_layers = params.layers.size();
  Matrix da = scale * d_embeddings;
  for (std::size_t l = n_layers; l-- > 0;) {
    Matrix dz = std::move(da);
    if (l + 1 < n_layers) {
      // Hidden activations went through ReLU; a > 0 recovers the mask and
      // realizes relu'(0) = 0.
      dz = dz.cwiseProduct(
          (cache.activations[l + 1].array() > 0.0).cast<double>().matrix());
    }
    grads.layers[l].weight.noalias() += dz * cache.activations[l].transpose();
    grads.layers[l].bias += dz.rowwise().sum();
    if (l > 0) da.noalias() = params.layers[l].weight.transpose() * dz;
  }
}

// Each component returns its unweighted loss; when grads is non-null the
// gradients, scaled by weight, are accumulated into it. Value and gradient
// share one forward path so the finite-difference harness checks exactly the
// function backward() differentiates.

double ce_component(const ModelParams &params, const LossBatch &batch,
                    double weight, ParamGrads *grads) {
  const ForwardCache cache = forward_batch_cached(params, batch.source_inputs);
  const Matrix &emb = cache.activations.back();
  if (grads == nullptr) {
    return softmax_ce_loss(emb, params.classifier, batch.source_labels);
  }
  const CeGrad g = softmax_ce_grad(emb, params.classifier, batch.source_labels);
  backprop_mlp(params, cache, g.d_embeddings, weight, *grads);
  grads->classifier += weight * g.d_classifier;
  return g.loss;
}

double aam_component(const ModelParams &params, const LossBatch &batch,
                     const LossConfig &cfg, double weight, ParamGrads *grads) {
  const ForwardCache cache = forward_batch_cached(params, batch.source_inputs);
  const Matrix &emb = cache.activations.back();
  const Matrix emb_n = normalize_columns(emb);
  const Matrix cls_n = normalize_columns(params.classifier);
  if (grads == nullptr) {
    return aam_softmax_loss(emb_n, cls_n, batch.source_labels, cfg.aam);
  }
  const CeGrad g = aam_softmax_grad(emb_n, cls_n, batch.source_labels, cfg.aam);
  backprop_mlp(params, cache, chain_normalize(g.d_embeddings, emb), weight,
               *grads);
  grads->classifier += weight * chain_normalize(g.d_classifier,
                                                params.classifier);
  return g.loss;
}

double contrastive_component(const ModelParams &params, const LossBatch &batch,
                             const LossConfig &cfg, double weight,
                             ParamGrads *grads) {
  const ForwardCache cache_a =
      forward_batch_cached(params, batch.target_view_a);
  const ForwardCache cache_b =
      forward_batch_cached(params, batch.target_view_b);
  const Matrix &emb_a = cache_a.activations.back();
  const Matrix &emb_b = cache_b.activations.back();
  const ScoreParams score{cfg.score, params.lambda, params.omega, params.b};
  if (cfg.score == ScoreKind::kCosine) {
    const Matrix a_n = normalize_columns(emb_a);
    const Matrix b_n = normalize_columns(emb_b);
    if (grads == nullptr) return contrastive_loss(a_n, b_n, score);
    const ContrastiveGrad g = contrastive_loss_grad(a_n, b_n, score);
    backprop_mlp(params, cache_a, chain_normalize(g.d_view_a, emb_a), weight,
                 *grads);
    backprop_mlp(params, cache_b, chain_normalize(g.d_view_b, emb_b), weight,
                 *grads);
    grads->omega += weight * g.d_omega;
    grads->b += weight * g.d_b;
    return g.loss;
  }
  // Euclidean scores act on the raw (unnormalized) embeddings.
  if (grads == nullptr) return contrastive_loss(emb_a, emb_b, score);
  const ContrastiveGrad g = contrastive_loss_grad(emb_a, emb_b, score);
  backprop_mlp(params, cache_a, g.d_view_a, weight, *grads);
  backprop_mlp(params, cache_b, g.d_view_b, weight, *grads);
  grads->lambda += weight * g.d_lambda;
  return g.loss;
}

double center_component(const ModelParams &params, const LossBatch &batch,
                        double weight, ParamGrads *grads) {
  const ForwardCache cache_a =
      forward_batch_cached(params, batch.target_view_a);
  const ForwardCache cache_b =
      forward_batch_cached(params, batch.target_view_b);
  // e_i: the two view embeddings averaged, then length-normalized.
  const Matrix mean =
      0.5 * (cache_a.activations.back() + cache_b.activations.back());
  if (grads == nullptr) {
    return contrastive_center_loss(mean, batch.centers,
                                   batch.target_assignments, params.omega,
                                   params.b);
  }
  const Matrix mean_n = normalize_columns(mean);
  const CenterGrad g =
      contrastive_center_grad(mean_n, batch.centers, batch.target_assignments,
                              params.omega, params.b);
  const Matrix d_mean = 0.5 * chain_normalize(g.d_embeddings, mean);
  backprop_mlp(params, cache_a, d_mean, weight, *grads);
  backprop_mlp(params, cache_b, d_mean, weight, *grads);
  grads->omega += weight * g.d_omega;
  grads->b += weight * g.d_b;
  return g.loss;
}

LossValue dispatch(const ModelParams &params, const LossBatch &batch,
                   LossKind kind, const LossConfig &cfg, ParamGrads *grads) {
  LossValue out;
  switch (kind) {
    case LossKind::kSoftmaxCe:
      out.classification = ce_component(params, batch, 1.0, grads);
      out.total = out.classification;
      return out;
    case LossKind::kAamSoftmax:
      out.classification = aam_component(params, batch, cfg, 1.0, grads);
      out.total = out.classification;
      return out;
    case LossKind::kContrastive:
      out.contrastive = contrastive_component(params, batch, cfg, 1.0, grads);
      out.total = out.contrastive;
      return out;
    case LossKind::kContrastiveCenter:
      out.center = center_component(params, batch, 1.0, grads);
      out.total = out.center;
      return out;
    case LossKind::kPretrain:
      out.classification = aam_component(params, batch, cfg, 1.0, grads);
      if (cfg.weights.alpha != 0.0) {
        out.contrastive =
            contrastive_component(params, batch, cfg, cfg.weights.alpha, grads);
      }
      out.total = out.classification + cfg.weights.alpha * out.contrastive;
      return out;
    case LossKind::kJoint:
      out.classification = aam_component(params, batch, cfg, 1.0, grads);
      if (cfg.weights.alpha != 0.0) {
        out.contrastive =
            contrastive_component(params, batch, cfg, cfg.weights.alpha, grads);
      }
      if (cfg.weights.beta != 0.0) {
        out.center = center_component(params, batch, cfg.weights.beta, grads);
      }
      out.total = out.classification + cfg.weights.alpha * out.contrastive +
                  cfg.weights.beta * out.center;
      return out;
  }
  throw std::invalid_argument("unknown loss kind");
}

}  // namespace

void ModelParams::validate() const {
  if (layers.empty()) throw std::invalid_argument("model has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerParams &layer = layers[l];
    if (layer.weight.rows() == 0 || layer.weight.cols() == 0) {
      throw std::invalid_argument("empty layer weight");
    }
    if (layer.bias.size() != layer.weight.rows()) {
      throw std::invalid_argument("bias size does not match layer output");
    }
    if (l > 0 && layer.weight.cols() != layers[l - 1].weight.rows()) {
      throw std::invalid_argument("layer dimension chain broken");
    }
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw std::invalid_argument("non-finite layer parameter");
    }
  }
  if (classifier.rows() != embedding_dim() || classifier.cols() == 0) {
    throw std::invalid_argument("classifier shape mismatch");
  }
  if (!classifier.allFinite()) {
    throw std::invalid_argument("non-finite classifier parameter");
  }
  for (index_t j = 0; j < classifier.cols(); ++j) {
    if (std::abs(classifier.col(j).norm() - 1.0) > 1e-6) {
      throw std::invalid_argument("classifier columns must be unit norm");
    }
  }
  if (!(lambda > 0.0) || !std::isfinite(lambda) || !std::isfinite(omega) ||
      !std::isfinite(b)) {
    throw std::invalid_argument("bad score parameters");
  }
}

ModelParams init_params(const std::vector<index_t> &layer_dims,
                        index_t num_classes, std::uint64_t seed, double omega0,
                        double b0, double lambda0) {
  if (layer_dims.size() < 2) {
    throw std::invalid_argument("need at least input and embedding dims");
  }
  if (num_classes < 1) throw std::invalid_argument("need at least one class");
  Prng rng(seed);
  ModelParams params;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const index_t fan_in = layer_dims[l], fan_out = layer_dims[l + 1];
    if (fan_in < 1 || fan_out < 1) {
      throw std::invalid_argument("layer dims must be positive");
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    LayerParams layer;
    layer.weight.resize(fan_out, fan_in);
    for (index_t j = 0; j < fan_in; ++j) {
      for (index_t i = 0; i < fan_out; ++i) {
        layer.weight(i, j) = rng.uniform(-bound, bound);
      }
    }
    layer.bias.resize(fan_out);
    for (index_t i = 0; i < fan_out; ++i) {
      layer.bias[i] = rng.uniform(-bound, bound);
    }
    params.layers.push_back(std::move(layer));
  }
  const index_t d_emb = layer_dims.back();
  const double bound = std::sqrt(1.0 / static_cast<double>(d_emb));
  params.classifier.resize(d_emb, num_classes);
  for (index_t j = 0; j < num_classes; ++j) {
    for (index_t i = 0; i < d_emb; ++i) {
      params.classifier(i, j) = rng.uniform(-bound, bound);
    }
  }
  params.classifier = normalize_columns(params.classifier);
  params.lambda = lambda0;
  params.omega = omega0;
  params.b = b0;
  params.validate();
  return params;
}

Embedding forward(const ModelParams &params, const Vector &input) {
  if (input.size() != params.input_dim()) {
    throw std::invalid_argument("input dimension mismatch");
  }
  Vector a = input;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    a = params.layers[l].weight * a + params.layers[l].bias;
    if (l + 1 < params.layers.size()) a = a.cwiseMax(0.0);
  }
  return Embedding{std::move(a), false};
}

Embedding length_normalize(const Embedding &e) {
  const double norm = e.vector.norm();
  if (norm < kNormFloor) {
    throw std::runtime_error("degenerate embedding: near-zero norm");
  }
  return Embedding{e.vector / norm, true};
}

Matrix forward_batch(const ModelParams &params, const Matrix &inputs) {
  if (inputs.rows() != params.input_dim()) {
    throw std::invalid_argument("input dimension mismatch");
  }
  Matrix a = inputs;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    a = (params.layers[l].weight * a).colwise() + params.layers[l].bias;
    if (l + 1 < params.layers.size()) a = a.cwiseMax(0.0);
  }
  return a;
}

ForwardCache forward_batch_cached(const ModelParams &params,
                                  const Matrix &inputs) {
  if (inputs.rows() != params.input_dim()) {
    throw std::invalid_argument("input dimension mismatch");
  }
  ForwardCache cache;
  cache.activations.reserve(params.layers.size() + 1);
  cache.activations.push_back(inputs);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Matrix a = (params.layers[l].weight * cache.activations.back()).colwise() +
               params.layers[l].bias;
    if (l + 1 < params.layers.size()) a = a.cwiseMax(0.0);
    cache.activations.push_back(std::move(a));
  }
  return cache;
}

ParamGrads ParamGrads::zeros_like(const ModelParams &params) {
  ParamGrads g;
  for (const LayerParams &layer : params.layers) {
    g.layers.push_back(
        {Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
         Vector::Zero(layer.bias.size())});
  }
  g.classifier =
      Matrix::Zero(params.classifier.rows(), params.classifier.cols());
  return g;
}

void ParamGrads::add_scaled(const ParamGrads &other, double scale) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weight += scale * other.layers[l].weight;
    layers[l].bias += scale * other.layers[l].bias;
  }
  classifier += scale * other.classifier;
  lambda += scale * other.lambda;
  omega += scale * other.omega;
  b += scale * other.b;
}

const char *loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::kSoftmaxCe: return "softmax_ce";
    case LossKind::kAamSoftmax: return "aam_softmax";
    case LossKind::kContrastive: return "contrastive";
    case LossKind::kContrastiveCenter: return "contrastive_center";
    case LossKind::kPretrain: return "pretrain";
    case LossKind::kJoint: return "joint";
  }
  return "unknown";
}

LossValue loss_value(const ModelParams &params, const LossBatch &batch,
                     LossKind kind, const LossConfig &cfg) {
  return dispatch(params, batch, kind, cfg, nullptr);
}

BackwardResult backward(const ModelParams &params, const LossBatch &batch,
                        LossKind kind, const LossConfig &cfg) {
  BackwardResult out;
  out.grads = ParamGrads::zeros_like(params);
  out.loss = dispatch(params, batch, kind, cfg, &out.grads);
  return out;
}

AdamState init_adam(const ModelParams &params, double base_lr, double decay) {
  if (base_lr <= 0 || decay <= 0 || decay > 1) {
    throw std::invalid_argument("bad Adam schedule");
  }
  AdamState state;
  state.m = ParamGrads::zeros_like(params);
  state.v = ParamGrads::zeros_like(params);
  state.base_lr = base_lr;
  state.decay = decay;
  return state;
}

double epoch_lr(const AdamState &state, int epoch) {
  if (epoch < 0) throw std::invalid_argument("negative epoch");
  return state.base_lr * std::pow(state.decay, epoch);
}

void adam_step(ModelParams &params, const ParamGrads &grads, AdamState &state,
               int epoch) {
  const double lr = epoch_lr(state, epoch);
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, state.step_count);
  const double bc2 = 1.0 - std::pow(kAdamBeta2, state.step_count);

  const auto update = [&](double &p, double g, double &m, double &v) {
    if (!std::isfinite(g)) {
      throw std::runtime_error("non-finite gradient in optimizer step");
    }
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g * g;
    p -= lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEpsilon);
  };

  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Matrix &w = params.layers[l].weight;
    for (index_t i = 0; i < w.size(); ++i) {
      update(w.data()[i], grads.layers[l].weight.data()[i],
             state.m.layers[l].weight.data()[i],
             state.v.layers[l].weight.data()[i]);
    }
    Vector &bias = params.layers[l].bias;
    for (index_t i = 0; i < bias.size(); ++i) {
      update(bias[i], grads.layers[l].bias[i], state.m.layers[l].bias[i],
             state.v.layers[l].bias[i]);
    }
  }
  for (index_t i = 0; i < params.classifier.size(); ++i) {
    update(params.classifier.data()[i], grads.classifier.data()[i],
           state.m.classifier.data()[i], state.v.classifier.data()[i]);
  }

  // lambda steps multiplicatively: its Adam moments track the gradient with
  // respect to log(lambda), and the exponential map keeps lambda > 0.
  {
    const double g_log = grads.lambda * params.lambda;
    if (!std::isfinite(g_log)) {
      throw std::runtime_error("non-finite gradient in optimizer step");
    }
    double &m = state.m.lambda;
    double &v = state.v.lambda;
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g_log;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g_log * g_log;
    params.lambda *=
        std::exp(-lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEpsilon));
  }
  update(params.omega, grads.omega, state.m.omega, state.v.omega);
  update(params.b, grads.b, state.m.b, state.v.b);

  for (index_t j = 0; j < params.classifier.cols(); ++j) {
    const double norm = params.classifier.col(j).norm();
    if (norm < kNormFloor) {
      throw std::runtime_error("classifier column collapsed to zero");
    }
    params.classifier.col(j) /= norm;
  }
  params.validate();
}

namespace {

index_t flat_size(const ModelParams &params) {
  index_t n = 0;
  for (const LayerParams &layer : params.layers) {
    n += layer.weight.size() + layer.bias.size();
  }
  return n + params.classifier.size() + 3;
}

}  // namespace

Vector flatten_params(const ModelParams &params) {
  Vector flat(flat_size(params));
  index_t at = 0;
  for (const LayerParams &layer : params.layers) {
    flat.segment(at, layer.weight.size()) =
        Eigen::Map<const Vector>(layer.weight.data(), layer.weight.size());
    at += layer.weight.size();
    flat.segment(at, layer.bias.size()) = layer.bias;
    at += layer.bias.size();
  }
  flat.segment(at, params.classifier.size()) = Eigen::Map<const Vector>(
      params.classifier.data(), params.classifier.size());
  at += params.classifier.size();
  flat[at++] = params.lambda;
  flat[at++] = params.omega;
  flat[at++] = params.b;
  return flat;
}

Vector flatten_grads(const ParamGrads &grads) {
  index_t n = 0;
  for (const LayerParams &layer : grads.layers) {
    n += layer.weight.size() + layer.bias.size();
  }
  n += grads.classifier.size() + 3;
  Vector flat(n);
  index_t at = 0;
  for (const LayerParams &layer : grads.layers) {
    flat.segment(at, layer.weight.size()) =
        Eigen::Map<const Vector>(layer.weight.data(), layer.weight.size());
    at += layer.weight.size();
    flat.segment(at, layer.bias.size()) = layer.bias;
    at += layer.bias.size();
  }
  flat.segment(at, grads.classifier.size()) =
      Eigen::Map<const Vector>(grads.classifier.data(),
                               grads.classifier.size());
  at += grads.classifier.size();
  flat[at++] = grads.lambda;
  flat[at++] = grads.omega;
  flat[at++] = grads.b;
  return flat;
}

void unflatten_params(const Vector &flat, ModelParams &params) {
  if (flat.size() != flat_size(params)) {
    throw std::invalid_argument("flat parameter size mismatch");
  }
  index_t at = 0;
  for (LayerParams &layer : params.layers) {
    Eigen::Map<Vector>(layer.weight.data(), layer.weight.size()) =
        flat.segment(at, layer.weight.size());
    at += layer.weight.size();
    layer.bias = flat.segment(at, layer.bias.size());
    at += layer.bias.size();
  }
  Eigen::Map<Vector>(params.classifier.data(), params.classifier.size()) =
      flat.segment(at, params.classifier.size());
  at += params.classifier.size();
  params.lambda = flat[at++];
  params.omega = flat[at++];
  params.b = flat[at++];
}

double grad_check(const ModelParams &params, const LossBatch &batch,
                  LossKind kind, const LossConfig &cfg, double epsilon,
                  std::uint64_t subsample_seed, int max_params) {
  if (epsilon <= 0) throw std::invalid_argument("epsilon must be > 0");
  const BackwardResult analytic = backward(params, batch, kind, cfg);
  const Vector ga = flatten_grads(analytic.grads);
  Vector flat = flatten_params(params);
  const index_t total = flat.size();

  std::vector<index_t> indices(static_cast<std::size_t>(total));
  std::iota(indices.begin(), indices.end(), index_t{0});
  if (total > max_params) {
    Prng rng(subsample_seed);
    rng.shuffle(indices);
    indices.resize(static_cast<std::size_t>(max_params));
  }

  ModelParams scratch = params;
  double max_diff = 0.0, max_mag = 0.0;
  for (index_t i : indices) {
    const double orig = flat[i];
    flat[i] = orig + epsilon;
    unflatten_params(flat, scratch);
    const double up = loss_value(scratch, batch, kind, cfg).total;
    flat[i] = orig - epsilon;
    unflatten_params(flat, scratch);
    const double down = loss_value(scratch, batch, kind, cfg).total;
    flat[i] = orig;
    const double numeric = (up - down) / (2.0 * epsilon);
    max_diff = std::max(max_diff, std::abs(ga[i] - numeric));
    max_mag = std::max({max_mag, std::abs(ga[i]), std::abs(numeric)});
  }
  if (max_mag < 1e-12) return 0.0;  // every checked gradient is zero
  return max_diff / max_mag;
}

namespace {

constexpr char kCheckpointMagic[] = "CGUDA1";
constexpr std::size_t kMagicLen = 6;

void append_u32(std::string &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void append_u64(std::string &out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void append_f64(std::string &out, double v) {
  append_u64(out, std::bit_cast<std::uint64_t>(v));
}

void append_tensor(std::string &out, const Matrix &m) {
  append_u32(out, static_cast<std::uint32_t>(m.rows()));
  append_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (index_t i = 0; i < m.rows(); ++i) {
    for (index_t j = 0; j < m.cols(); ++j) append_f64(out, m(i, j));
  }
}

void append_vector(std::string &out, const Vector &v) {
  append_tensor(out, Matrix(v));
}

class ByteReader {
 public:
  ByteReader(std::string data, std::string path)
      : data_(std::move(data)), path_(std::move(path)) {}

  std::uint8_t read_u8() { return byte(); }

  std::uint32_t read_u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(byte()) << (8 * i);
    return v;
  }

  std::uint64_t read_u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(byte()) << (8 * i);
    return v;
  }

  double read_f64() { return std::bit_cast<double>(read_u64()); }

  Matrix read_tensor() {
    const std::uint32_t rows = read_u32(), cols = read_u32();
    if (rows == 0 || cols == 0 || std::uint64_t(rows) * cols > (1u << 28)) {
      fail("implausible tensor shape");
    }
    Matrix m(rows, cols);
    for (index_t i = 0; i < m.rows(); ++i) {
      for (index_t j = 0; j < m.cols(); ++j) m(i, j) = read_f64();
    }
    return m;
  }

  Vector read_vector() {
    const Matrix m = read_tensor();
    if (m.cols() != 1) fail("expected a column vector tensor");
    return m.col(0);
  }

  void expect_magic() {
    if (data_.size() < kMagicLen ||
        data_.compare(0, kMagicLen, kCheckpointMagic) != 0) {
      fail("bad magic; not a checkpoint file");
    }
    at_ = kMagicLen;
  }

  bool at_end() const { return at_ == data_.size(); }

  [[noreturn]] void fail(const std::string &msg) const {
    throw std::runtime_error(path_ + ": " + msg);
  }

 private:
  unsigned char byte() {
    if (at_ >= data_.size()) fail("truncated checkpoint");
    return static_cast<unsigned char>(data_[at_++]);
  }

  std::string data_;
  std::string path_;
  std::size_t at_ = 0;
};

void append_grads(std::string &out, const ParamGrads &g) {
  for (const LayerParams &layer : g.layers) {
    append_tensor(out, layer.weight);
    append_vector(out, layer.bias);
  }
  append_tensor(out, g.classifier);
  append_f64(out, g.lambda);
  append_f64(out, g.omega);
  append_f64(out, g.b);
}

ParamGrads read_grads(ByteReader &r, std::size_t n_layers) {
  ParamGrads g;
  for (std::size_t l = 0; l < n_layers; ++l) {
    LayerParams layer;
    layer.weight = r.read_tensor();
    layer.bias = r.read_vector();
    g.layers.push_back(std::move(layer));
  }
  g.classifier = r.read_tensor();
  g.lambda = r.read_f64();
  g.omega = r.read_f64();
  g.b = r.read_f64();
  return g;
}

}  // namespace

void save_checkpoint(const std::string &path, const ModelParams &params,
                     const AdamState *opt_state) {
  params.validate();
  std::string out;
  out.append(kCheckpointMagic, kMagicLen);
  append_u32(out, static_cast<std::uint32_t>(params.layers.size()));
  for (const LayerParams &layer : params.layers) {
    append_tensor(out, layer.weight);
    append_vector(out, layer.bias);
  }
  append_tensor(out, params.classifier);
  append_f64(out, params.lambda);
  append_f64(out, params.omega);
  append_f64(out, params.b);
  out.push_back(opt_state != nullptr ? '\1' : '\0');
  if (opt_state != nullptr) {
    append_u64(out, static_cast<std::uint64_t>(opt_state->step_count));
    append_f64(out, opt_state->base_lr);
    append_f64(out, opt_state->decay);
    append_grads(out, opt_state->m);
    append_grads(out, opt_state->v);
  }
  atomic_write_file(path, out);
}

Checkpoint load_checkpoint(const std::string &path) {
  ByteReader r(read_file(path), path);
  r.expect_magic();
  const std::uint32_t n_layers = r.read_u32();
  if (n_layers == 0 || n_layers > 64) r.fail("implausible layer count");
  Checkpoint ckpt;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    LayerParams layer;
    layer.weight = r.read_tensor();
    layer.bias = r.read_vector();
    ckpt.params.layers.push_back(std::move(layer));
  }
  ckpt.params.classifier = r.read_tensor();
  ckpt.params.lambda = r.read_f64();
  ckpt.params.omega = r.read_f64();
  ckpt.params.b = r.read_f64();
  const std::uint8_t has_opt = r.read_u8();
  if (has_opt > 1) r.fail("bad optimizer-state flag");
  if (has_opt == 1) {
    AdamState state;
    state.step_count = static_cast<std::int64_t>(r.read_u64());
    state.base_lr = r.read_f64();
    state.decay = r.read_f64();
    state.m = read_grads(r, n_layers);
    state.v = read_grads(r, n_layers);
    ckpt.opt_state = std::move(state);
  }
  if (!r.at_end()) r.fail("trailing bytes after checkpoint payload");
  try {
    ckpt.params.validate();
  } catch (const std::invalid_argument &e) {
    r.fail(std::string("invalid checkpoint contents: ") + e.what());
  }
  return ckpt;
}

}  // namespace cguda
