// cguda/kmeans.cc

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

#include "cguda/kmeans.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "cguda/io_util.h"
#include "cguda/rng.h"

namespace cguda {

namespace {

constexpr double kDegenerateNorm = 1e-12;

void check_unit_embeddings(const Matrix &embeddings) {
  if (embeddings.cols() == 0) {
    throw std::invalid_argument("kmeans: no embeddings");
  }
  for (index_t j = 0; j < embeddings.cols(); ++j) {
    if (std::abs(embeddings.col(j).norm() - 1.0) > 1e-6) {
      throw std::invalid_argument("kmeans: embeddings must be unit-norm");
    }
  }
}

// k-means++ over the cosine metric: D^2(i) = min over chosen centers of
// (1 - cos(e_i, c)).
Matrix seed_centers(const Matrix &embeddings, int k, Prng &rng) {
  const index_t n = embeddings.cols();
  Matrix centers(embeddings.rows(), k);
  centers.col(0) = embeddings.col(rng.uniform_int(n));
  Vector d2 = Vector::Constant(n, std::numeric_limits<double>::infinity());
  for (int c = 1; c < k; ++c) {
    for (index_t i = 0; i < n; ++i) {
      const double dist = 1.0 - embeddings.col(i).dot(centers.col(c - 1));
      d2[i] = std::min(d2[i], std::max(dist, 0.0));
    }
    const double total = d2.sum();
    index_t pick;
    if (total < 1e-18) {
      // All points coincide with chosen centers; fall back to uniform.
      pick = rng.uniform_int(n);
    } else {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (index_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    }
    centers.col(c) = embeddings.col(pick);
  }
  return centers;
}

ClusterState run_lloyd(const Matrix &embeddings, int k,
                       const KmeansOptions &options, Prng &rng) {
  ClusterState state;
  state.k = k;
  state.centers = seed_centers(embeddings, k, rng);
  state.assignments = assign(embeddings, state.centers);
  state.centers = update_centers(embeddings, state.assignments, k);
  state.objective =
      kmeans_objective(embeddings, state.centers, state.assignments);
  state.iterations_run = 1;
  for (int iter = 2; iter <= options.max_iter; ++iter) {
    std::vector<int> next = assign(embeddings, state.centers);
    if (next == state.assignments) break;  // fixed point
    state.assignments = std::move(next);
    state.centers = update_centers(embeddings, state.assignments, k);
    const double objective =
        kmeans_objective(embeddings, state.centers, state.assignments);
    state.iterations_run = iter;
    const bool small_change = std::abs(objective - state.objective) < options.tol;
    state.objective = objective;
    if (small_change) break;
  }
  return state;
}

}  // namespace

ClusterState kmeans_cosine(const Matrix &embeddings, int k,
                           const KmeansOptions &options, std::uint64_t seed) {
  check_unit_embeddings(embeddings);
  const index_t n = embeddings.cols();
  if (k < 1 || k > n) {
    throw std::invalid_argument("kmeans: need 1 <= k <= number of points");
  }
  if (options.n_init < 1 || options.max_iter < 1 || options.tol < 0) {
    throw std::invalid_argument("kmeans: bad options");
  }
  ClusterState best;
  for (int restart = 0; restart < options.n_init; ++restart) {
    Prng rng(derive_seed(seed, "kmeans-restart",
                         static_cast<std::uint64_t>(restart)));
    ClusterState state = run_lloyd(embeddings, k, options, rng);
    if (restart == 0 || state.objective > best.objective) {
      best = std::move(state);
    }
  }
  return best;
}

std::vector<int> assign(const Matrix &embeddings, const Matrix &centers) {
  if (embeddings.rows() != centers.rows()) {
    throw std::invalid_argument("assign: dimension mismatch");
  }
  const Matrix scores = centers.transpose() * embeddings;  // k x n
  std::vector<int> assignments(static_cast<std::size_t>(embeddings.cols()));
  for (index_t i = 0; i < embeddings.cols(); ++i) {
    index_t arg = 0;
    for (index_t c = 1; c < centers.cols(); ++c) {
      if (scores(c, i) > scores(arg, i)) arg = c;  // ties keep the lowest
    }
    assignments[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return assignments;
}

Matrix update_centers(const Matrix &embeddings, std::vector<int> &assignments,
                      int k) {
  const index_t n = embeddings.cols();
  if (static_cast<index_t>(assignments.size()) != n) {
    throw std::invalid_argument("update_centers: assignment count mismatch");
  }
  for (int y : assignments) {
    if (y < 0 || y >= k) {
      throw std::invalid_argument("update_centers: assignment out of range");
    }
  }
  Matrix centers(embeddings.rows(), k);
  // Repairs can cascade (each one moves a single point), so recompute from
  // scratch until every cluster has a usable center. Each pass fixes the
  // lowest-index broken cluster; at most k passes.
  for (int pass = 0; pass <= k; ++pass) {
    Matrix sums = Matrix::Zero(embeddings.rows(), k);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (index_t i = 0; i < n; ++i) {
      sums.col(assignments[static_cast<std::size_t>(i)]) += embeddings.col(i);
      ++counts[static_cast<std::size_t>(assignments[static_cast<std::size_t>(i)])];
    }
    int broken = -1;
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0 ||
          sums.col(c).norm() < kDegenerateNorm) {
        broken = c;
        break;
      }
      centers.col(c) = sums.col(c) / sums.col(c).norm();
    }
    if (broken < 0) return centers;

    // Re-seed the broken cluster with the point farthest from its own center
    // (lowest cosine), drawn from a healthy donor cluster with >= 2 members.
    // The donor keeps its optimal center for the remaining points, so the
    // within-cluster objective cannot decrease.
    index_t farthest = -1;
    double worst = std::numeric_limits<double>::infinity();
    for (index_t i = 0; i < n; ++i) {
      const int c = assignments[static_cast<std::size_t>(i)];
      if (c == broken || counts[static_cast<std::size_t>(c)] < 2 ||
          sums.col(c).norm() < kDegenerateNorm) {
        continue;
      }
      const double cosine = embeddings.col(i).dot(centers.col(c));
      if (cosine < worst) {
        worst = cosine;
        farthest = i;
      }
    }
    if (farthest < 0) {
      throw std::runtime_error(
          "update_centers: cannot repair a degenerate cluster (no donor)");
    }
    assignments[static_cast<std::size_t>(farthest)] = broken;
  }
  throw std::runtime_error("update_centers: cluster repair did not settle");
}

double kmeans_objective(const Matrix &embeddings, const Matrix &centers,
                        const std::vector<int> &assignments) {
  if (static_cast<index_t>(assignments.size()) != embeddings.cols()) {
    throw std::invalid_argument("kmeans_objective: assignment count mismatch");
  }
  double objective = 0.0;
  for (index_t i = 0; i < embeddings.cols(); ++i) {
    const int y = assignments[static_cast<std::size_t>(i)];
    if (y < 0 || y >= centers.cols()) {
      throw std::invalid_argument("kmeans_objective: assignment out of range");
    }
    objective += embeddings.col(i).dot(centers.col(y));
  }
  return objective;
}

std::vector<int> pseudo_labels(const ClusterState &state) {
  std::vector<int> counts(static_cast<std::size_t>(state.k), 0);
  for (int y : state.assignments) {
    if (y < 0 || y >= state.k) {
      throw std::invalid_argument("pseudo_labels: assignment out of range");
    }
    ++counts[static_cast<std::size_t>(y)];
  }
  std::vector<int> renumber(static_cast<std::size_t>(state.k), -1);
  int next = 0;
  for (int c = 0; c < state.k; ++c) {
    if (counts[static_cast<std::size_t>(c)] > 0) {
      renumber[static_cast<std::size_t>(c)] = next++;
    }
  }
  std::vector<int> labels(state.assignments.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = renumber[static_cast<std::size_t>(state.assignments[i])];
  }
  return labels;
}

void save_cluster_state(const std::string &path, const ClusterState &state,
                        const std::vector<std::int64_t> &ids) {
  if (ids.size() != state.assignments.size()) {
    throw std::invalid_argument("save_cluster_state: id count mismatch");
  }
  if (state.centers.cols() != state.k) {
    throw std::invalid_argument("save_cluster_state: center count mismatch");
  }
  std::string out = "CLUST v1 k=" + std::to_string(state.k) +
                    " d=" + std::to_string(state.centers.rows()) +
                    " n=" + std::to_string(state.assignments.size()) + "\n";
  for (int c = 0; c < state.k; ++c) {
    for (index_t i = 0; i < state.centers.rows(); ++i) {
      if (i > 0) out += ',';
      out += format_double(state.centers(i, c));
    }
    out += '\n';
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out += std::to_string(ids[i]);
    out += ',';
    out += std::to_string(state.assignments[i]);
    out += '\n';
  }
  atomic_write_file(path, out);
}

namespace {

[[noreturn]] void parse_fail(const std::string &path, std::size_t line,
                             const std::string &msg) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split(const std::string &s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t at = s.find(sep, start);
    if (at == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, at - start));
    start = at + 1;
  }
}

}  // namespace

std::pair<ClusterState, std::vector<std::int64_t>> load_cluster_state(
    const std::string &path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) parse_fail(path, 1, "empty file");
  long long k = 0, d = 0, n = 0;
  {
    const std::vector<std::string> tok = split(line, ' ');
    if (tok.size() != 5 || tok[0] != "CLUST" || tok[1] != "v1" ||
        tok[2].rfind("k=", 0) != 0 || tok[3].rfind("d=", 0) != 0 ||
        tok[4].rfind("n=", 0) != 0) {
      parse_fail(path, 1, "expected header 'CLUST v1 k=<K> d=<D> n=<N>'");
    }
    try {
      k = parse_int(tok[2].substr(2));
      d = parse_int(tok[3].substr(2));
      n = parse_int(tok[4].substr(2));
    } catch (const std::invalid_argument &e) {
      parse_fail(path, 1, e.what());
    }
    if (k < 1 || d < 1 || n < 0) parse_fail(path, 1, "bad header counts");
  }
  ClusterState state;
  state.k = static_cast<int>(k);
  state.centers.resize(d, k);
  for (long long c = 0; c < k; ++c) {
    ++line_no;
    if (!std::getline(in, line)) parse_fail(path, line_no, "missing center row");
    const std::vector<std::string> tok = split(line, ',');
    if (static_cast<long long>(tok.size()) != d) {
      parse_fail(path, line_no, "center row has wrong dimension");
    }
    for (long long i = 0; i < d; ++i) {
      try {
        state.centers(i, c) = parse_double(tok[static_cast<std::size_t>(i)]);
      } catch (const std::invalid_argument &e) {
        parse_fail(path, line_no, e.what());
      }
    }
  }
  std::vector<std::int64_t> ids;
  ids.reserve(static_cast<std::size_t>(n));
  state.assignments.reserve(static_cast<std::size_t>(n));
  for (long long i = 0; i < n; ++i) {
    ++line_no;
    if (!std::getline(in, line)) {
      parse_fail(path, line_no, "missing assignment row");
    }
    const std::vector<std::string> tok = split(line, ',');
    if (tok.size() != 2) {
      parse_fail(path, line_no, "expected '<utterance_id>,<cluster_index>'");
    }
    try {
      ids.push_back(parse_int(tok[0]));
      const long long y = parse_int(tok[1]);
      if (y < 0 || y >= k) parse_fail(path, line_no, "cluster index out of range");
      state.assignments.push_back(static_cast<int>(y));
    } catch (const std::invalid_argument &e) {
      parse_fail(path, line_no, e.what());
    }
  }
  if (std::getline(in, line) && !line.empty()) {
    parse_fail(path, line_no + 1, "trailing content after assignments");
  }
  return {std::move(state), std::move(ids)};
}

}  // namespace cguda
