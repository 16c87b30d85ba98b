// cguda/metrics.cc

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

#include "cguda/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace cguda {

namespace {

// FRR(t) = P(target < t) and FAR(t) = P(nontarget >= t) for one threshold.
struct ErrorRates {
  double frr;
  double far;
};

ErrorRates rates_at(const ScoredTrials &scored, double threshold) {
  std::size_t miss = 0, fa = 0, n_target = 0, n_nontarget = 0;
  for (std::size_t i = 0; i < scored.scores.size(); ++i) {
    if (scored.is_target[i]) {
      ++n_target;
      if (scored.scores[i] < threshold) ++miss;
    } else {
      ++n_nontarget;
      if (scored.scores[i] >= threshold) ++fa;
    }
  }
  return {static_cast<double>(miss) / static_cast<double>(n_target),
          static_cast<double>(fa) / static_cast<double>(n_nontarget)};
}

std::vector<double> distinct_scores(const ScoredTrials &scored) {
  std::vector<double> scores = scored.scores;
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
  return scores;
}

void check_scored(const ScoredTrials &scored) {
  if (scored.scores.size() != scored.is_target.size()) {
    throw std::invalid_argument("scores and flags differ in length");
  }
  bool has_target = false, has_nontarget = false;
  for (std::size_t i = 0; i < scored.scores.size(); ++i) {
    if (!std::isfinite(scored.scores[i])) {
      throw std::invalid_argument("non-finite trial score");
    }
    (scored.is_target[i] ? has_target : has_nontarget) = true;
  }
  if (!has_target || !has_nontarget) {
    throw std::invalid_argument("need at least one target and one nontarget");
  }
}

}  // namespace

ScoredTrials score_trials(const EmbeddingTable &table,
                          const TrialList &trials) {
  if (static_cast<index_t>(table.ids.size()) != table.embeddings.cols()) {
    throw std::invalid_argument("embedding table id/column count mismatch");
  }
  std::unordered_map<std::int64_t, index_t> column;
  column.reserve(table.ids.size());
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    if (!column.emplace(table.ids[i], static_cast<index_t>(i)).second) {
      throw std::invalid_argument("duplicate utterance id in embedding table");
    }
  }
  const auto lookup = [&](std::int64_t id) -> index_t {
    const auto it = column.find(id);
    if (it == column.end()) {
      throw std::invalid_argument("trial references unknown utterance id " +
                                  std::to_string(id));
    }
    return it->second;
  };
  ScoredTrials out;
  out.scores.reserve(trials.id_a.size());
  out.is_target.reserve(trials.id_a.size());
  for (std::size_t t = 0; t < trials.id_a.size(); ++t) {
    const Vector &a = table.embeddings.col(lookup(trials.id_a[t]));
    const Vector &b = table.embeddings.col(lookup(trials.id_b[t]));
    const double na = a.norm(), nb = b.norm();
    if (na < 1e-12 || nb < 1e-12) {
      throw std::runtime_error("zero-norm embedding in trial scoring");
    }
    out.scores.push_back(a.dot(b) / (na * nb));
    out.is_target.push_back(trials.is_target[t]);
  }
  return out;
}

double eer(const ScoredTrials &scored) {
  check_scored(scored);
  // FRR - FAR is non-decreasing along the sorted thresholds (it starts at
  // -FAR <= 0 on the smallest score); a sentinel above the largest score
  // (FRR = 1, FAR = 0) guarantees the sign change is bracketed.
  const std::vector<double> thresholds = distinct_scores(scored);
  ErrorRates prev = rates_at(scored, thresholds.front());
  double prev_diff = prev.frr - prev.far;
  if (prev_diff == 0.0) return prev.frr;
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    const ErrorRates cur = rates_at(scored, thresholds[i]);
    const double diff = cur.frr - cur.far;
    if (diff == 0.0) return cur.frr;
    if (diff > 0.0) {
      const double gamma = -prev_diff / (diff - prev_diff);
      return prev.frr + gamma * (cur.frr - prev.frr);
    }
    prev = cur;
    prev_diff = diff;
  }
  const ErrorRates sentinel{1.0, 0.0};
  const double diff = sentinel.frr - sentinel.far;
  const double gamma = -prev_diff / (diff - prev_diff);
  return prev.frr + gamma * (sentinel.frr - prev.frr);
}

double min_dcf(const ScoredTrials &scored, const DcfParams &params) {
  check_scored(scored);
  if (params.p_target <= 0 || params.p_target >= 1 || params.c_miss <= 0 ||
      params.c_fa <= 0) {
    throw std::invalid_argument("bad DCF parameters");
  }
  const double w_miss = params.c_miss * params.p_target;
  const double w_fa = params.c_fa * (1.0 - params.p_target);
  // Accept-all and reject-all operating points bound the normalized cost by 1.
  double best = std::min(w_fa, w_miss);
  for (const double t : distinct_scores(scored)) {
    const ErrorRates r = rates_at(scored, t);
    best = std::min(best, w_miss * r.frr + w_fa * r.far);
  }
  return best / std::min(w_miss, w_fa);
}

std::vector<SweepPoint> far_frr_sweep(const ScoredTrials &scored) {
  check_scored(scored);
  std::vector<SweepPoint> out;
  for (const double t : distinct_scores(scored)) {
    const ErrorRates r = rates_at(scored, t);
    out.push_back({t, r.frr, r.far});
  }
  return out;
}

namespace {

void check_partitions(const std::vector<int> &a, const std::vector<int> &b) {
  if (a.empty() || a.size() != b.size()) {
    throw std::invalid_argument("partitions must be nonempty and same length");
  }
}

}  // namespace

double purity(const std::vector<int> &assignments,
              const std::vector<int> &true_labels) {
  check_partitions(assignments, true_labels);
  std::map<int, std::map<int, std::size_t>> per_cluster;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    ++per_cluster[assignments[i]][true_labels[i]];
  }
  std::size_t covered = 0;
  for (const auto &[cluster, counts] : per_cluster) {
    std::size_t majority = 0;
    for (const auto &[label, count] : counts) majority = std::max(majority, count);
    covered += majority;
  }
  return static_cast<double>(covered) / static_cast<double>(assignments.size());
}

double nmi(const std::vector<int> &assignments,
           const std::vector<int> &true_labels) {
  check_partitions(assignments, true_labels);
  const double n = static_cast<double>(assignments.size());
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ca, cb;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    joint[{assignments[i], true_labels[i]}] += 1.0;
    ca[assignments[i]] += 1.0;
    cb[true_labels[i]] += 1.0;
  }
  double ha = 0.0, hb = 0.0;
  for (const auto &[label, count] : ca) ha -= count / n * std::log(count / n);
  for (const auto &[label, count] : cb) hb -= count / n * std::log(count / n);
  if (ha <= 0.0 && hb <= 0.0) return 1.0;  // two identical trivial partitions
  if (ha <= 0.0 || hb <= 0.0) return 0.0;
  double mi = 0.0;
  for (const auto &[pair, count] : joint) {
    mi += count / n *
          std::log(n * count / (ca[pair.first] * cb[pair.second]));
  }
  return std::clamp(mi / std::sqrt(ha * hb), 0.0, 1.0);
}

double calinski_harabasz(const Matrix &embeddings,
                         const std::vector<int> &assignments) {
  const index_t n = embeddings.cols();
  if (static_cast<index_t>(assignments.size()) != n || n == 0) {
    throw std::invalid_argument("assignment count mismatch");
  }
  std::map<int, std::vector<index_t>> clusters;
  for (index_t i = 0; i < n; ++i) {
    clusters[assignments[static_cast<std::size_t>(i)]].push_back(i);
  }
  const index_t k = static_cast<index_t>(clusters.size());
  if (k < 2) throw std::invalid_argument("calinski_harabasz: need K >= 2");
  if (n <= k) throw std::invalid_argument("calinski_harabasz: need N > K");
  const Vector overall = embeddings.rowwise().mean();
  double between = 0.0, within = 0.0;
  for (const auto &[label, members] : clusters) {
    Vector mean = Vector::Zero(embeddings.rows());
    for (index_t i : members) mean += embeddings.col(i);
    mean /= static_cast<double>(members.size());
    between += static_cast<double>(members.size()) *
               (mean - overall).squaredNorm();
    for (index_t i : members) within += (embeddings.col(i) - mean).squaredNorm();
  }
  if (within < 1e-18) {
    throw DegenerateMetricError(
        "calinski_harabasz: within-cluster scatter vanished");
  }
  return (between / static_cast<double>(k - 1)) /
         (within / static_cast<double>(n - k));
}

double silhouette(const Matrix &embeddings,
                  const std::vector<int> &assignments) {
  const index_t n = embeddings.cols();
  if (static_cast<index_t>(assignments.size()) != n || n == 0) {
    throw std::invalid_argument("assignment count mismatch");
  }
  Matrix unit(embeddings.rows(), n);
  for (index_t j = 0; j < n; ++j) {
    const double norm = embeddings.col(j).norm();
    if (norm < 1e-12) {
      throw std::runtime_error("silhouette: zero-norm embedding");
    }
    unit.col(j) = embeddings.col(j) / norm;
  }
  std::map<int, std::vector<index_t>> clusters;
  for (index_t i = 0; i < n; ++i) {
    clusters[assignments[static_cast<std::size_t>(i)]].push_back(i);
  }
  if (clusters.size() < 2) {
    throw std::invalid_argument("silhouette: need at least two clusters");
  }
  const Matrix gram = unit.transpose() * unit;
  const auto distance = [&](index_t i, index_t j) {
    return std::max(1.0 - gram(i, j), 0.0);
  };
  double total = 0.0;
  for (index_t i = 0; i < n; ++i) {
    const int own = assignments[static_cast<std::size_t>(i)];
    const std::vector<index_t> &mates = clusters[own];
    if (mates.size() < 2) continue;  // singleton contributes 0
    double a = 0.0;
    for (index_t j : mates) {
      if (j != i) a += distance(i, j);
    }
    a /= static_cast<double>(mates.size() - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto &[label, members] : clusters) {
      if (label == own) continue;
      double mean = 0.0;
      for (index_t j : members) mean += distance(i, j);
      b = std::min(b, mean / static_cast<double>(members.size()));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

std::string metrics_report_json(const MetricsReport &report) {
  nlohmann::ordered_json doc;
  const auto put = [&doc](const char *key, const std::optional<double> &v) {
    if (v.has_value()) {
      doc[key] = *v;
    } else {
      doc[key] = "degenerate";
    }
  };
  put("eer", report.eer);
  put("min_dcf", report.min_dcf);
  put("purity", report.purity);
  put("nmi", report.nmi);
  put("calinski_harabasz", report.ch);
  put("silhouette", report.ss);
  doc["config_hash"] = report.config_hash;
  doc["seed"] = report.seed;
  return doc.dump(2) + "\n";
}

}  // namespace cguda
