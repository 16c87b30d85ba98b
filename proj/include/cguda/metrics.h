// cguda/metrics.h

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

#ifndef CGUDA_METRICS_H_
#define CGUDA_METRICS_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cguda/dataset.h"
#include "cguda/types.h"

namespace cguda {

struct ScoredTrials {
  std::vector<double> scores;
  std::vector<bool> is_target;
};

struct DcfParams {
  double p_target = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;
};

// Embeddings addressable by utterance id, one per column.
struct EmbeddingTable {
  std::vector<std::int64_t> ids;
  Matrix embeddings;
};

// Cosine of the two length-normalized embeddings, in [-1, 1]. Throws on a
// missing id or a zero-norm embedding.
ScoredTrials score_trials(const EmbeddingTable &table, const TrialList &trials);

// Equal error rate via a sweep over all distinct score thresholds with
// FRR(t) = P(target score < t), FAR(t) = P(nontarget score >= t), linearly
// interpolated where FRR - FAR changes sign.
double eer(const ScoredTrials &scored);

// min over thresholds of [c_miss*P_miss*p_t + c_fa*P_fa*(1-p_t)], normalized
// by min(c_miss*p_t, c_fa*(1-p_t)). The +-inf boundary thresholds keep the
// normalized value <= 1.
double min_dcf(const ScoredTrials &scored, const DcfParams &params);

// Operating points of the threshold sweep, for external DET/ROC plotting.
struct SweepPoint {
  double threshold;
  double frr;
  double far;
};
std::vector<SweepPoint> far_frr_sweep(const ScoredTrials &scored);

// Fraction of points covered by their cluster's majority label.
double purity(const std::vector<int> &assignments,
              const std::vector<int> &true_labels);

// I(A;B) / sqrt(H(A) H(B)) with natural logs. Both partitions constant -> 1
// (identical single-cluster partitions); exactly one of the entropies zero
// -> 0.
double nmi(const std::vector<int> &assignments,
           const std::vector<int> &true_labels);

// Between/within scatter ratio scaled by degrees of freedom, Euclidean
// geometry on the given (length-normalized) embeddings. Throws
// std::invalid_argument when K < 2 or N <= K and DegenerateMetricError when
// the within-scatter vanishes.
double calinski_harabasz(const Matrix &embeddings,
                         const std::vector<int> &assignments);

// Mean over points of (b - a)/max(a, b) with cosine distance 1 - cos;
// a = mean distance to own cluster (excluding self), b = best other cluster.
// Singleton clusters contribute 0.
double silhouette(const Matrix &embeddings,
                  const std::vector<int> &assignments);

// Serialized metrics document; absent values are written as "degenerate".
struct MetricsReport {
  std::optional<double> eer;
  std::optional<double> min_dcf;
  std::optional<double> purity;
  std::optional<double> nmi;
  std::optional<double> ch;
  std::optional<double> ss;
  std::string config_hash;
  std::uint64_t seed = 0;
};
std::string metrics_report_json(const MetricsReport &report);

}  // namespace cguda

#endif  // CGUDA_METRICS_H_
