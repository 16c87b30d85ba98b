// tests/losses_test.cc

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

// The golden constants below were derived with 50-digit arithmetic by
// tests/oracles/golden.py; every instance is small enough to audit by hand.

#include <doctest.h>

#include <cmath>
#include <vector>

#include "cguda/losses.h"
#include "test_util.h"

using namespace cguda;

namespace {

// Mean over rows of [lse(row) - t(i, pick_i)] for a raw logit matrix; the
// reference objective every pair loss reduces to.
double pick_loss(const Matrix &t, const std::vector<int> &pick) {
  double loss = 0.0;
  for (index_t i = 0; i < t.rows(); ++i) {
    const double m = t.row(i).maxCoeff();
    const double lse = m + std::log((t.row(i).array() - m).exp().sum());
    loss += lse - t(i, pick[static_cast<std::size_t>(i)]);
  }
  return loss / static_cast<double>(t.rows());
}

// Surrogate for the cosine pair loss on assumed-unit columns:
// t = omega * A^T B + b, diagonal picks. This is the exact function whose
// gradient contrastive_loss_grad returns for the cosine kind.
double cosine_pair_value(const Matrix &a, const Matrix &b, double omega,
                         double bias) {
  const Matrix t = (omega * (a.transpose() * b)).array() + bias;
  std::vector<int> diag(static_cast<std::size_t>(a.cols()));
  for (index_t i = 0; i < a.cols(); ++i) {
    diag[static_cast<std::size_t>(i)] = static_cast<int>(i);
  }
  return pick_loss(t, diag);
}

// Surrogate for the center loss on assumed-unit embeddings.
double center_value(const Matrix &e, const Matrix &c,
                    const std::vector<int> &assignments, double omega,
                    double bias) {
  const Matrix t = (omega * (e.transpose() * c)).array() + bias;
  return pick_loss(t, assignments);
}

// Surrogate for AAM-softmax treating the columns as exactly unit: the true
// class logit is scale * cos(theta_y + margin) via the explicit
// cos/sqrt(1-c^2) expansion the analytic gradient differentiates.
double aam_value(const Matrix &e, const Matrix &w,
                 const std::vector<int> &labels, const AamConfig &cfg) {
  Matrix t = cfg.scale * (w.transpose() * e);  // C x N
  const double cos_m = std::cos(cfg.margin), sin_m = std::sin(cfg.margin);
  for (index_t i = 0; i < e.cols(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    const double cy = std::clamp(w.col(y).dot(e.col(i)), -1.0, 1.0);
    const double sy = std::sqrt(std::max(0.0, 1.0 - cy * cy));
    t(y, i) = cfg.scale * (cy * cos_m - sy * sin_m);
  }
  Matrix tt = t.transpose();  // N x C, rows are samples
  return pick_loss(tt, labels);
}

// Golden instance: unit vectors in 3D realizing the pair cosine matrix
// [[0.9, 0.1], [0.0, 0.8]] against the canonical basis pair.
void golden_pair(Matrix &a, Matrix &b) {
  a.resize(3, 2);
  b.resize(3, 2);
  a.col(0) << 0.9, 0.1, std::sqrt(1.0 - 0.9 * 0.9 - 0.1 * 0.1);
  a.col(1) << 0.0, 0.8, std::sqrt(1.0 - 0.8 * 0.8);
  b.col(0) << 1.0, 0.0, 0.0;
  b.col(1) << 0.0, 1.0, 0.0;
}

constexpr double kFdEps = 1e-5;

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("score functions match hand values") {
  Vector e1(3), e2(3);
  e1 << 1, 0, 0;
  e2 << 0, 1, 0;
  // exp(-||e1-e2||^2 / 1) = exp(-2)
  CHECK(std::abs(score_euclidean(e1, e2, 1.0) - 0.13533528323661269) < 1e-16);
  CHECK(score_euclidean(e1, e1, 3.0) == 1.0);
  // lambda = 2 quarters the exponent.
  CHECK(std::abs(score_euclidean(e1, e2, 2.0) - std::exp(-0.5)) < 1e-16);
  CHECK_THROWS_AS(score_euclidean(e1, e2, 0.0), std::invalid_argument);

  // exp(omega cos + b) at cos = 1 and cos = 0.
  CHECK(std::abs(score_cosine(e1, e1, 10.0, -5.0) - 148.4131591025766) <
        1e-12);
  CHECK(std::abs(score_cosine(e1, e2, 10.0, -5.0) - 0.0067379469990854671) <
        1e-16);
  // Invariant to positive rescaling.
  CHECK(score_cosine(3.0 * e1, 0.25 * e2, 10.0, -5.0) ==
        doctest::Approx(score_cosine(e1, e2, 10.0, -5.0)).epsilon(1e-14));
  CHECK_THROWS_AS(score_cosine(0.0 * e1, e2, 10.0, -5.0),
                  std::invalid_argument);

  Vector short_vec(2);
  short_vec << 1, 0;
  CHECK_THROWS_AS(score_euclidean(e1, short_vec, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(score_cosine(e1, short_vec, 10.0, -5.0),
                  std::invalid_argument);
}

TEST_CASE("contrastive loss reproduces the golden cosine instance") {
  Matrix a, b;
  golden_pair(a, b);
  ScoreParams score;
  score.kind = ScoreKind::kCosine;
  score.omega = 10.0;
  score.b = -5.0;
  CHECK(std::abs(contrastive_loss(a, b, score) - 0.00033540637289576883) <
        1e-12);
}

TEST_CASE("contrastive loss reproduces the golden Euclidean instance") {
  Matrix a, b;
  golden_pair(a, b);
  ScoreParams score;
  score.kind = ScoreKind::kEuclidean;
  score.lambda = 2.0;
  CHECK(std::abs(contrastive_loss(a, b, score) - 0.51301525239995262) < 1e-12);
}

TEST_CASE("cosine contrastive loss is invariant to positive rescaling") {
  Matrix a, b;
  golden_pair(a, b);
  ScoreParams score;
  score.kind = ScoreKind::kCosine;
  const double base = contrastive_loss(a, b, score);
  a.col(0) *= 3.7;
  b.col(1) *= 0.2;
  CHECK(std::abs(contrastive_loss(a, b, score) - base) < 1e-12);
}

TEST_CASE("contrastive loss is invariant to joint pair permutation") {
  const Matrix a = cguda_test::random_unit_columns(5, 4, 21);
  const Matrix b = cguda_test::random_unit_columns(5, 4, 22);
  ScoreParams score;
  score.kind = ScoreKind::kCosine;
  const double base = contrastive_loss(a, b, score);
  const std::vector<index_t> perm = {2, 0, 3, 1};
  Matrix pa(5, 4), pb(5, 4);
  for (index_t i = 0; i < 4; ++i) {
    pa.col(i) = a.col(perm[static_cast<std::size_t>(i)]);
    pb.col(i) = b.col(perm[static_cast<std::size_t>(i)]);
  }
  CHECK(std::abs(contrastive_loss(pa, pb, score) - base) < 1e-12);
}

TEST_CASE("the denominator includes the matching pair itself") {
  // With one pair the ratio is s/s = 1, so the loss must be exactly 0.
  Matrix a(2, 1), b(2, 1);
  a << 0.6, 0.8;
  b << 1.0, 0.0;
  ScoreParams score;
  score.kind = ScoreKind::kCosine;
  CHECK(contrastive_loss(a, b, score) == 0.0);
}

TEST_CASE("contrastive gradients match central differences (cosine)") {
  Matrix a = cguda_test::random_unit_columns(4, 3, 31);
  Matrix b = cguda_test::random_unit_columns(4, 3, 32);
  ScoreParams score;
  score.kind = ScoreKind::kCosine;
  score.omega = 6.0;
  score.b = -2.0;
  const ContrastiveGrad g = contrastive_loss_grad(a, b, score);
  CHECK(std::abs(g.loss - cosine_pair_value(a, b, score.omega, score.b)) <
        1e-12);
  for (index_t j = 0; j < a.cols(); ++j) {
    for (index_t i = 0; i < a.rows(); ++i) {
      const double orig = a(i, j);
      a(i, j) = orig + kFdEps;
      const double up = cosine_pair_value(a, b, score.omega, score.b);
      a(i, j) = orig - kFdEps;
      const double down = cosine_pair_value(a, b, score.omega, score.b);
      a(i, j) = orig;
      CHECK(g.d_view_a(i, j) ==
            doctest::Approx((up - down) / (2 * kFdEps)).epsilon(1e-6));
      const double orig_b = b(i, j);
      b(i, j) = orig_b + kFdEps;
      const double upb = cosine_pair_value(a, b, score.omega, score.b);
      b(i, j) = orig_b - kFdEps;
      const double downb = cosine_pair_value(a, b, score.omega, score.b);
      b(i, j) = orig_b;
      CHECK(g.d_view_b(i, j) ==
            doctest::Approx((upb - downb) / (2 * kFdEps)).epsilon(1e-6));
    }
  }
  const double up_o = cosine_pair_value(a, b, score.omega + kFdEps, score.b);
  const double dn_o = cosine_pair_value(a, b, score.omega - kFdEps, score.b);
  CHECK(g.d_omega == doctest::Approx((up_o - dn_o) / (2 * kFdEps)).epsilon(1e-6));
  // The bias shifts every logit in a row equally, so it cancels.
  CHECK(std::abs(g.d_b) < 1e-14);
}

TEST_CASE("contrastive gradients match central differences (Euclidean)") {
  // The Euclidean kind acts on raw columns, so the library value function
  // itself is the finite-difference target, lambda included.
  Prng rng(77);
  Matrix a = rng.normal_matrix(4, 3);
  Matrix b = rng.normal_matrix(4, 3);
  ScoreParams score;
  score.kind = ScoreKind::kEuclidean;
  score.lambda = 1.3;
  const ContrastiveGrad g = contrastive_loss_grad(a, b, score);
  CHECK(std::abs(g.loss - contrastive_loss(a, b, score)) < 1e-12);
  for (index_t j = 0; j < a.cols(); ++j) {
    for (index_t i = 0; i < a.rows(); ++i) {
      double orig = a(i, j);
      a(i, j) = orig + kFdEps;
      double up = contrastive_loss(a, b, score);
      a(i, j) = orig - kFdEps;
      double down = contrastive_loss(a, b, score);
      a(i, j) = orig;
      CHECK(g.d_view_a(i, j) ==
            doctest::Approx((up - down) / (2 * kFdEps)).epsilon(1e-6));
      orig = b(i, j);
      b(i, j) = orig + kFdEps;
      up = contrastive_loss(a, b, score);
      b(i, j) = orig - kFdEps;
      down = contrastive_loss(a, b, score);
      b(i, j) = orig;
      CHECK(g.d_view_b(i, j) ==
            doctest::Approx((up - down) / (2 * kFdEps)).epsilon(1e-6));
    }
  }
  ScoreParams up_s = score, dn_s = score;
  up_s.lambda += kFdEps;
  dn_s.lambda -= kFdEps;
  const double num =
      (contrastive_loss(a, b, up_s) - contrastive_loss(a, b, dn_s)) /
      (2 * kFdEps);
  CHECK(g.d_lambda == doctest::Approx(num).epsilon(1e-6));
}

TEST_CASE("softmax cross-entropy matches the golden instance") {
  Matrix w = Matrix::Identity(2, 2);
  Matrix e(2, 2);
  e << 0.5, -0.25, -0.5, 1.0;
  const std::vector<int> labels = {0, 1};
  CHECK(std::abs(softmax_ce_loss(e, w, labels) - 0.28259538443179786) < 1e-15);

  const CeGrad g = softmax_ce_grad(e, w, labels);
  CHECK(std::abs(g.loss - 0.28259538443179786) < 1e-15);
  for (index_t j = 0; j < 2; ++j) {
    for (index_t i = 0; i < 2; ++i) {
      double orig = e(i, j);
      e(i, j) = orig + kFdEps;
      double up = softmax_ce_loss(e, w, labels);
      e(i, j) = orig - kFdEps;
      double down = softmax_ce_loss(e, w, labels);
      e(i, j) = orig;
      CHECK(g.d_embeddings(i, j) ==
            doctest::Approx((up - down) / (2 * kFdEps)).epsilon(1e-6));
      orig = w(i, j);
      w(i, j) = orig + kFdEps;
      up = softmax_ce_loss(e, w, labels);
      w(i, j) = orig - kFdEps;
      down = softmax_ce_loss(e, w, labels);
      w(i, j) = orig;
      CHECK(g.d_classifier(i, j) ==
            doctest::Approx((up - down) / (2 * kFdEps)).epsilon(1e-6));
    }
  }
  CHECK_THROWS_AS(softmax_ce_loss(e, w, {0, 2}), std::invalid_argument);
  CHECK_THROWS_AS(softmax_ce_loss(e, w, {0}), std::invalid_argument);
}

TEST_CASE("AAM-softmax matches the aligned golden instance") {
  // One embedding equal to its class column: loss = log(1 + exp(-s cos m)).
  Matrix e(2, 1), w(2, 2);
  e << 1.0, 0.0;
  w << 1.0, 0.0, 0.0, 1.0;
  const AamConfig cfg{0.2, 30.0};
  const double loss = aam_softmax_loss(e, w, {0}, cfg);
  CHECK(std::abs(loss - 1.7016678761041169e-13) < 1e-15);
  CHECK(loss > 0.0);
}

TEST_CASE("AAM-softmax matches the two-sample golden instance") {
  Matrix e(2, 2), w(2, 2);
  e << std::cos(0.3), std::cos(1.2), std::sin(0.3), std::sin(1.2);
  w << 1.0, 0.0, 0.0, 1.0;
  const AamConfig cfg{0.2, 30.0};
  CHECK(std::abs(aam_softmax_loss(e, w, {0, 1}, cfg) -
                 2.9925170886566434e-7) < 1e-12);
}

TEST_CASE("AAM with zero margin equals plain CE on scaled cosines") {
  const Matrix e = cguda_test::random_unit_columns(5, 6, 41);
  const Matrix w = cguda_test::random_unit_columns(5, 4, 42);
  const std::vector<int> labels = {0, 3, 1, 2, 0, 1};
  const AamConfig cfg{0.0, 7.5};
  const double aam = aam_softmax_loss(e, w, labels, cfg);
  const double ce = softmax_ce_loss((7.5 * e).eval(), w, labels);
  CHECK(std::abs(aam - ce) < 1e-12);
}

TEST_CASE("AAM rejects non-normalized inputs and bad margins") {
  Matrix e = cguda_test::random_unit_columns(4, 3, 51);
  Matrix w = cguda_test::random_unit_columns(4, 2, 52);
  const std::vector<int> labels = {0, 1, 0};
  e.col(1) *= 1.01;
  CHECK_THROWS_AS(aam_softmax_loss(e, w, labels, AamConfig{}),
                  std::invalid_argument);
  e.col(1) /= 1.01;
  w.col(0) *= 0.98;
  CHECK_THROWS_AS(aam_softmax_loss(e, w, labels, AamConfig{}),
                  std::invalid_argument);
  w.col(0) /= 0.98;
  CHECK_THROWS_AS(aam_softmax_loss(e, w, labels, AamConfig{-0.1, 30.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(aam_softmax_loss(e, w, labels, AamConfig{1.6, 30.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(aam_softmax_loss(e, w, labels, AamConfig{0.2, 0.0}),
                  std::invalid_argument);
}

TEST_CASE("AAM gradients match central differences of the margin chain") {
  Matrix e = cguda_test::random_unit_columns(4, 3, 61);
  Matrix w = cguda_test::random_unit_columns(4, 3, 62);
  const std::vector<int> labels = {2, 0, 1};
  const AamConfig cfg{0.2, 10.0};
  const CeGrad g = aam_softmax_grad(e, w, labels, cfg);
  CHECK(std::abs(g.loss - aam_value(e, w, labels, cfg)) < 1e-12);
  for (index_t j = 0; j < 3; ++j) {
    for (index_t i = 0; i < 4; ++i) {
      double orig = e(i, j);
      e(i, j) = orig + kFdEps;
      double up = aam_value(e, w, labels, cfg);
      e(i, j) = orig - kFdEps;
      double down = aam_value(e, w, labels, cfg);
      e(i, j) = orig;
      CHECK(g.d_embeddings(i, j) ==
            doctest::Approx((up - down) / (2 * kFdEps)).epsilon(1e-6));
      orig = w(i, j);
      w(i, j) = orig + kFdEps;
      up = aam_value(e, w, labels, cfg);
      w(i, j) = orig - kFdEps;
      down = aam_value(e, w, labels, cfg);
      w(i, j) = orig;
      CHECK(g.d_classifier(i, j) ==
            doctest::Approx((up - down) / (2 * kFdEps)).epsilon(1e-6));
    }
  }
}

TEST_CASE("center loss matches the aligned golden instance") {
  Matrix e(2, 1), c(2, 2);
  e << 1.0, 0.0;
  c << 1.0, 0.0, 0.0, 1.0;
  // t = [5, -5]; loss = log(1 + exp(-10)).
  CHECK(std::abs(contrastive_center_loss(e, c, {0}, 10.0, -5.0) -
                 4.5398899216864647e-5) < 1e-15);
}

TEST_CASE("center loss matches the two-point golden instance") {
  Matrix e(2, 2), c(2, 2);
  e << std::cos(0.2), std::cos(1.4), std::sin(0.2), std::sin(1.4);
  c << 1.0, 0.0, 0.0, 1.0;
  CHECK(std::abs(contrastive_center_loss(e, c, {0, 1}, 10.0, -5.0) -
                 0.00034563610733809776) < 1e-12);
}

TEST_CASE("center loss value is invariant to embedding scale") {
  Matrix e = cguda_test::random_unit_columns(4, 5, 71);
  const Matrix c = cguda_test::random_unit_columns(4, 2, 72);
  const std::vector<int> y = {0, 1, 0, 1, 1};
  const double base = contrastive_center_loss(e, c, y, 10.0, -5.0);
  e *= 2.5;
  CHECK(std::abs(contrastive_center_loss(e, c, y, 10.0, -5.0) - base) < 1e-12);
}

TEST_CASE("center gradients match central differences; centers stay fixed") {
  Matrix e = cguda_test::random_unit_columns(4, 5, 81);
  const Matrix c = cguda_test::random_unit_columns(4, 3, 82);
  const std::vector<int> y = {0, 1, 2, 0, 1};
  const CenterGrad g = contrastive_center_grad(e, c, y, 8.0, -3.0);
  CHECK(std::abs(g.loss - center_value(e, c, y, 8.0, -3.0)) < 1e-12);
  for (index_t j = 0; j < e.cols(); ++j) {
    for (index_t i = 0; i < e.rows(); ++i) {
      const double orig = e(i, j);
      e(i, j) = orig + kFdEps;
      const double up = center_value(e, c, y, 8.0, -3.0);
      e(i, j) = orig - kFdEps;
      const double down = center_value(e, c, y, 8.0, -3.0);
      e(i, j) = orig;
      CHECK(g.d_embeddings(i, j) ==
            doctest::Approx((up - down) / (2 * kFdEps)).epsilon(1e-6));
    }
  }
  const double up_o = center_value(e, c, y, 8.0 + kFdEps, -3.0);
  const double dn_o = center_value(e, c, y, 8.0 - kFdEps, -3.0);
  CHECK(g.d_omega == doctest::Approx((up_o - dn_o) / (2 * kFdEps)).epsilon(1e-6));
  CHECK(std::abs(g.d_b) < 1e-14);  // row-wise shift cancels

  CHECK_THROWS_AS(contrastive_center_loss(e, c, {0, 1, 3, 0, 1}, 8.0, -3.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(contrastive_center_loss(e, c, {0, 1}, 8.0, -3.0),
                  std::invalid_argument);
}

TEST_CASE("composite losses skip zero-weight terms entirely") {
  const Matrix e = cguda_test::random_unit_columns(4, 3, 91);
  const Matrix w = cguda_test::random_unit_columns(4, 2, 92);
  const std::vector<int> labels = {0, 1, 1};
  const AamConfig aam{0.2, 30.0};
  ScoreParams score;

  // Empty target views would make the contrastive term throw, so alpha = 0
  // must short-circuit before touching them.
  const Matrix empty;
  const double base =
      pretrain_loss(e, w, labels, aam, empty, empty, score, {0.0, 1.0});
  CHECK(std::abs(base - aam_softmax_loss(e, w, labels, aam)) < 1e-15);
  CHECK_THROWS_AS(
      pretrain_loss(e, w, labels, aam, empty, empty, score, {1.0, 1.0}),
      std::invalid_argument);
  CHECK_THROWS_AS(
      pretrain_loss(e, w, labels, aam, empty, empty, score, {-0.5, 1.0}),
      std::invalid_argument);

  // beta = 0 likewise never evaluates the center term.
  const double joint = joint_loss(e, w, labels, aam, empty, empty, empty,
                                  empty, {}, score, {0.0, 0.0});
  CHECK(std::abs(joint - base) < 1e-15);

  // With real data the composite equals the weighted sum of its parts.
  const Matrix va = cguda_test::random_unit_columns(4, 3, 93);
  const Matrix vb = cguda_test::random_unit_columns(4, 3, 94);
  const Matrix centers = cguda_test::random_unit_columns(4, 2, 95);
  const std::vector<int> assign = {1, 0, 1};
  const double full = joint_loss(e, w, labels, aam, va, vb, e, centers, assign,
                                 score, {0.5, 0.25});
  const double expect =
      aam_softmax_loss(e, w, labels, aam) +
      0.5 * contrastive_loss(va, vb, score) +
      0.25 * contrastive_center_loss(e, centers, assign, score.omega, score.b);
  CHECK(std::abs(full - expect) < 1e-14);
}

}  // TEST_SUITE("losses")
