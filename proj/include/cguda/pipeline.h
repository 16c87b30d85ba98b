// cguda/pipeline.h

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

#ifndef CGUDA_PIPELINE_H_
#define CGUDA_PIPELINE_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cguda/config.h"
#include "cguda/dataset.h"
#include "cguda/datagen.h"
#include "cguda/kmeans.h"
#include "cguda/metrics.h"
#include "cguda/network.h"
#include "cguda/rng.h"

namespace cguda {

// Five-stage adaptation run: (1) joint pre-training, (2) initial clustering,
// (3) fine-tuning with periodic cluster refreshes, (4) pseudo-labeling,
// (5) supervised training on the combined label space. Every stage draws all
// of its randomness from a stream derived from (config seed, stage tag), so
// stages re-run in isolation reproduce a full run bit for bit.

struct EpochLoss {
  int epoch = 0;
  double classification = 0.0;  // epoch means, unweighted components
  double contrastive = 0.0;
  double center = 0.0;
  double total = 0.0;
};

// Assignments captured at a (re-)clustering point. Only assignments are
// kept; external quality metrics are computed later by evaluation code that
// is allowed to see hidden labels.
struct ClusterSnapshot {
  int epoch = 0;
  int k = 0;
  std::vector<int> assignments;
};

struct RunRecord {
  std::vector<EpochLoss> epochs;
  std::vector<int> recluster_epochs;  // multiples of the refresh period P
  std::optional<ClusterSnapshot> initial_cluster;
  std::vector<ClusterSnapshot> refresh_clusters;
  std::string stop_reason;
};

// JSON text of a training record, exactly as run_full persists it; shared
// with the stage-by-stage commands so both paths write identical bytes.
std::string run_record_text(const RunRecord &record);

// Seeds for one pipeline run, all derived from the root config seed.
struct StageSeeds {
  std::uint64_t init_params;
  std::uint64_t training;  // batch order + augmentation draws
};

StageSeeds stage_seeds(std::uint64_t root, const std::string &stage);

// Seed streams shared between run_full and the stage-by-stage commands; both
// sides must call these, never derive_seed directly, so the two execution
// styles stay bit-identical.
inline std::uint64_t cluster_seed_initial(std::uint64_t root) {
  return derive_seed(root, "cluster-initial");
}
inline std::uint64_t cluster_seed_refresh(std::uint64_t root, int epoch) {
  return derive_seed(root, "cluster-refresh",
                     static_cast<std::uint64_t>(epoch));
}
inline std::uint64_t cluster_seed_pseudo(std::uint64_t root) {
  return derive_seed(root, "cluster-pseudo");
}
inline std::uint64_t eval_seed(std::uint64_t root, const std::string &stage) {
  return derive_seed(root, "eval-" + stage);
}

struct TrainResult {
  ModelParams params;
  AdamState opt_state;
  RunRecord record;
};

// Supervised AAM training from scratch on a labeled dataset; the engine
// behind both the source-only reference model and the final combined-space
// model.
TrainResult train_supervised(const SpeakerDataset &data,
                             const PipelineConfig &cfg, int epochs,
                             const StageSeeds &seeds);

// Stage 1: interleaved mini-batches minimizing classification + alpha *
// contrastive. One epoch is one pass over the source batches; target CSL
// batches cycle. With alpha = 0 the target data is never touched and the
// trace is bit-identical to train_supervised on the source.
TrainResult pretrain(const SpeakerDataset &source, const SpeakerDataset &target,
                     const PipelineConfig &cfg, const StageSeeds &seeds);

// Stage 2 helper: embeddings of every utterance, optionally length-
// normalized, in dataset order.
Matrix extract_embeddings(const ModelParams &params,
                          const SpeakerDataset &dataset, bool normalize);

ClusterState cluster_dataset(const ModelParams &params,
                             const SpeakerDataset &target,
                             const PipelineConfig &cfg, std::uint64_t seed,
                             std::optional<int> k_override = std::nullopt);

struct FinetuneResult {
  ModelParams params;
  AdamState opt_state;
  ClusterState clusters;  // state after the last refresh
  RunRecord record;
};

// Stage 3: minimize classification + alpha * contrastive + beta * center
// with centers held constant between refreshes; re-cluster every
// recluster_period epochs; stop when the epoch-mean center loss is stable
// (relative change < convergence_tol over convergence_window epochs) or at
// finetune_max_epochs.
FinetuneResult finetune(const ModelParams &pretrained,
                        const SpeakerDataset &source,
                        const SpeakerDataset &target,
                        const PipelineConfig &cfg, const StageSeeds &seeds,
                        const ClusterState *initial_clusters = nullptr);

struct PseudoLabelResult {
  SpeakerDataset labeled_target;  // pseudo labels in `labels`
  ClusterState clusters;
};

// Stage 4: embed, normalize, cluster, attach contiguous pseudo labels.
PseudoLabelResult pseudo_label_target(const ModelParams &params,
                                      const SpeakerDataset &target,
                                      const PipelineConfig &cfg,
                                      std::uint64_t seed,
                                      std::optional<int> k_override =
                                          std::nullopt);

struct CombinedDataset {
  Matrix features;
  std::vector<std::int64_t> ids;
  std::vector<int> labels;  // source 0..C_src-1, pseudo C_src..C_src+K'-1
  int source_classes = 0;
  int pseudo_classes = 0;
  int total_classes = 0;
};

// Stage 5 input: union with pseudo labels offset past the source label
// range. Throws on id collisions.
CombinedDataset combine(const SpeakerDataset &source,
                        const SpeakerDataset &pseudo_labeled_target);

TrainResult train_final(const CombinedDataset &combined,
                        const PipelineConfig &cfg, const StageSeeds &seeds);

// Metrics of one model: EER/minDCF on the held-out eval trials, plus
// cluster quality of a k-means run over the adaptation-target embeddings.
// The only place hidden labels are consumed.
struct StageEvaluation {
  double eer = 0.0;
  double min_dcf = 0.0;
  std::optional<double> purity;
  std::optional<double> nmi;
  std::optional<double> ch;
  std::optional<double> ss;
};

StageEvaluation evaluate_model(const ModelParams &params,
                               const SpeakerDataset &target_with_truth,
                               const SpeakerDataset &eval_set,
                               const TrialList &trials,
                               const PipelineConfig &cfg, std::uint64_t seed,
                               const std::vector<int> *fixed_assignments =
                                   nullptr);

// Filenames inside the run directory shared by run_full and the per-stage
// CLI commands.
struct RunPaths {
  std::string dir;
  std::string source_data() const { return dir + "/source.spkdata"; }
  std::string target_data() const { return dir + "/target.spkdata"; }
  std::string eval_data() const { return dir + "/eval.spkdata"; }
  std::string trials() const { return dir + "/trials.txt"; }
  std::string baseline_ckpt() const { return dir + "/baseline.ckpt"; }
  std::string pretrain_ckpt() const { return dir + "/pretrain.ckpt"; }
  std::string initial_clusters() const { return dir + "/cluster_initial.clust"; }
  std::string finetune_ckpt() const { return dir + "/finetune.ckpt"; }
  std::string final_clusters() const { return dir + "/cluster_final.clust"; }
  std::string pseudo_target() const { return dir + "/target_pseudo.spkdata"; }
  std::string final_ckpt() const { return dir + "/final.ckpt"; }
  std::string results() const { return dir + "/results.json"; }
  std::string timing() const { return dir + "/timing.json"; }
  std::string finetune_record() const { return dir + "/finetune_record.json"; }
};

// Seeded source/target/trials generation into the run directory. run_full
// calls this when the data files are absent; the gen-data command calls it
// directly.
void generate_run_data(const PipelineConfig &cfg, const RunPaths &paths);

// Full five-stage run plus the source-only reference model. Generates the
// datasets into the run directory when they are absent, persists every stage
// artifact, and writes the results document (deterministic) plus a timing
// sidecar (wall clock, excluded from the determinism contract). Returns the
// results document text.
std::string run_full(const PipelineConfig &cfg, const RunPaths &paths,
                     std::optional<int> k_override = std::nullopt);

}  // namespace cguda

#endif  // CGUDA_PIPELINE_H_
