// cguda/kmeans.h

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

#ifndef CGUDA_KMEANS_H_
#define CGUDA_KMEANS_H_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cguda/types.h"

namespace cguda {

// Spherical k-means state over unit-norm embeddings. The objective is the
// sum of cosine similarities of each point to its assigned center; it never
// decreases across an assign + update round.
struct ClusterState {
  std::vector<int> assignments;  // y_i in [0, k)
  Matrix centers;                // d_emb x k, unit columns
  int k = 0;
  double objective = 0.0;
  int iterations_run = 0;
};

struct KmeansOptions {
  int n_init = 5;      // restarts; best objective wins, ties to the first
  int max_iter = 100;  // per restart
  double tol = 1e-6;   // absolute objective-change exit
};

// Lloyd iterations with k-means++ seeding (1 - cos as the D^2 weight),
// best of n_init restarts. Embedding columns must be unit-norm, 1 <= k <= n.
// On natural convergence the returned state is a fixed point of
// assign followed by update_centers.
ClusterState kmeans_cosine(const Matrix &embeddings, int k,
                           const KmeansOptions &options, std::uint64_t seed);

// y_i = argmax_k cos(e_i, c_k); exact ties go to the lowest center index.
std::vector<int> assign(const Matrix &embeddings, const Matrix &centers);

// c_k = normalize(mean of assigned embeddings). A cluster that ends up empty
// or with a degenerate (near-zero) mean is re-seeded with the point farthest
// (lowest cosine) from its currently assigned center; that point is moved to
// the repaired cluster, which is why assignments is taken by mutable
// reference.
Matrix update_centers(const Matrix &embeddings, std::vector<int> &assignments,
                      int k);

double kmeans_objective(const Matrix &embeddings, const Matrix &centers,
                        const std::vector<int> &assignments);

// Assignments renumbered to contiguous [0, K') over nonempty clusters,
// preserving cluster order and co-membership.
std::vector<int> pseudo_labels(const ClusterState &state);

// Text format:
//   CLUST v1 k=<K> d=<D> n=<N>
//   <K center rows, comma-separated floats>
//   <N lines "<utterance_id>,<cluster_index>">
void save_cluster_state(const std::string &path, const ClusterState &state,
                        const std::vector<std::int64_t> &ids);
std::pair<ClusterState, std::vector<std::int64_t>> load_cluster_state(
    const std::string &path);

}  // namespace cguda

#endif  // CGUDA_KMEANS_H_
