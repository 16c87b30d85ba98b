// cguda/pipeline.cc

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

#include "cguda/pipeline.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <stdexcept>
#include <unordered_set>
#include <utility>

#include <nlohmann/json.hpp>

#include "cguda/io_util.h"
#include "cguda/losses.h"

namespace cguda {

namespace {

std::vector<index_t> shuffled_indices(index_t n, Prng &rng) {
  std::vector<index_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), index_t{0});
  rng.shuffle(order);
  return order;
}

// Cycling shuffled queue over the target utterances; reshuffles whenever a
// full batch no longer fits, so every draw sequence is a pure function of
// the stream seed.
class CslSampler {
 public:
  CslSampler(index_t n, int batch)
      : n_(n), batch_(std::min<index_t>(batch, n)), pos_(n) {
    if (n < 1) throw std::invalid_argument("CSL sampler needs data");
  }

  std::vector<index_t> next(Prng &rng) {
    if (pos_ + batch_ > n_) {
      order_ = shuffled_indices(n_, rng);
      pos_ = 0;
    }
    std::vector<index_t> out(order_.begin() + pos_,
                             order_.begin() + pos_ + batch_);
    pos_ += batch_;
    return out;
  }

 private:
  index_t n_;
  index_t batch_;
  index_t pos_;
  std::vector<index_t> order_;
};

GenConfig augmentation_config(const PipelineConfig &cfg) {
  GenConfig aug;
  aug.d_in = cfg.data.d_in;
  aug.aug_sigma = cfg.data.aug_sigma;
  aug.aug_scale_lo = cfg.data.aug_scale_lo;
  aug.aug_scale_hi = cfg.data.aug_scale_hi;
  return aug;
}

ModelParams init_model(const PipelineConfig &cfg, index_t d_in, int classes,
                       std::uint64_t seed) {
  std::vector<index_t> dims;
  dims.push_back(d_in);
  for (int l = 0; l < cfg.model.n_hidden; ++l) {
    dims.push_back(cfg.model.hidden_dim);
  }
  dims.push_back(cfg.model.d_emb);
  return init_params(dims, classes, seed, cfg.model.omega0, cfg.model.b0,
                     cfg.model.lambda0);
}

LossConfig loss_config(const PipelineConfig &cfg) {
  return LossConfig{cfg.train.score, cfg.aam(), cfg.weights()};
}

void fill_source_batch(LossBatch &batch, const SpeakerDataset &source,
                       const std::vector<index_t> &order, index_t at,
                       index_t take) {
  batch.source_inputs.resize(source.dim(), take);
  batch.source_labels.resize(static_cast<std::size_t>(take));
  for (index_t i = 0; i < take; ++i) {
    const index_t idx = order[static_cast<std::size_t>(at + i)];
    batch.source_inputs.col(i) = source.features.col(idx);
    batch.source_labels[static_cast<std::size_t>(i)] =
        source.labels[static_cast<std::size_t>(idx)];
  }
}

void fill_target_views(LossBatch &batch, const SpeakerDataset &target,
                       const std::vector<index_t> &indices,
                       const GenConfig &aug, Prng &rng,
                       const ClusterState *clusters) {
  const index_t m = static_cast<index_t>(indices.size());
  batch.target_view_a.resize(target.dim(), m);
  batch.target_view_b.resize(target.dim(), m);
  batch.target_assignments.clear();
  for (index_t i = 0; i < m; ++i) {
    const SegmentPair pair =
        sample_segment_pair(target, indices[static_cast<std::size_t>(i)], aug,
                            rng);
    batch.target_view_a.col(i) = pair.view_a;
    batch.target_view_b.col(i) = pair.view_b;
    if (clusters != nullptr) {
      batch.target_assignments.push_back(
          clusters->assignments[static_cast<std::size_t>(
              indices[static_cast<std::size_t>(i)])]);
    }
  }
  if (clusters != nullptr) batch.centers = clusters->centers;
}

}  // namespace

StageSeeds stage_seeds(std::uint64_t root, const std::string &stage) {
  return {derive_seed(root, stage + "-init"), derive_seed(root, stage + "-train")};
}

TrainResult train_supervised(const SpeakerDataset &data_in,
                             const PipelineConfig &cfg, int epochs,
                             const StageSeeds &seeds) {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  const SpeakerDataset data = data_in.stripped();
  data.validate();
  if (!data.has_labels()) {
    throw std::invalid_argument("supervised training needs labels");
  }
  TrainResult result;
  result.params = init_model(cfg, data.dim(), data.num_classes(),
                             seeds.init_params);
  result.opt_state = init_adam(result.params, cfg.train.lr, cfg.train.lr_decay);
  const LossConfig lcfg = loss_config(cfg);
  Prng order_rng(derive_seed(seeds.training, "source-order"));
  const index_t n = data.size();
  const index_t bs = cfg.train.batch_supervised;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const std::vector<index_t> order = shuffled_indices(n, order_rng);
    EpochLoss ep;
    ep.epoch = epoch + 1;
    int steps = 0;
    for (index_t at = 0; at < n; at += bs, ++steps) {
      LossBatch batch;
      fill_source_batch(batch, data, order, at, std::min(bs, n - at));
      const BackwardResult back =
          backward(result.params, batch, LossKind::kAamSoftmax, lcfg);
      adam_step(result.params, back.grads, result.opt_state, epoch);
      ep.classification += back.loss.classification;
      ep.total += back.loss.total;
    }
    ep.classification /= steps;
    ep.total /= steps;
    result.record.epochs.push_back(ep);
  }
  result.record.stop_reason =
      "completed " + std::to_string(epochs) + " epochs";
  return result;
}

TrainResult pretrain(const SpeakerDataset &source_in,
                     const SpeakerDataset &target_in,
                     const PipelineConfig &cfg, const StageSeeds &seeds) {
  const SpeakerDataset source = source_in.stripped();
  const SpeakerDataset target = target_in.stripped();
  source.validate();
  target.validate();
  if (!source.has_labels()) {
    throw std::invalid_argument("pre-training needs labeled source data");
  }
  if (source.dim() != target.dim()) {
    throw std::invalid_argument("source/target feature dimensions differ");
  }
  TrainResult result;
  result.params = init_model(cfg, source.dim(), source.num_classes(),
                             seeds.init_params);
  result.opt_state = init_adam(result.params, cfg.train.lr, cfg.train.lr_decay);
  const LossConfig lcfg = loss_config(cfg);
  const GenConfig aug = augmentation_config(cfg);
  // Independent streams: with alpha = 0 the target stream is never touched
  // and the source trace matches train_supervised draw for draw.
  Prng order_rng(derive_seed(seeds.training, "source-order"));
  Prng target_rng(derive_seed(seeds.training, "target-csl"));
  const bool use_target = cfg.train.alpha != 0.0;
  CslSampler sampler(target.size(), cfg.train.batch_csl);
  const index_t n = source.size();
  const index_t bs = cfg.train.batch_supervised;
  for (int epoch = 0; epoch < cfg.train.pretrain_epochs; ++epoch) {
    const std::vector<index_t> order = shuffled_indices(n, order_rng);
    EpochLoss ep;
    ep.epoch = epoch + 1;
    int steps = 0;
    for (index_t at = 0; at < n; at += bs, ++steps) {
      LossBatch batch;
      fill_source_batch(batch, source, order, at, std::min(bs, n - at));
      if (use_target) {
        fill_target_views(batch, target, sampler.next(target_rng), aug,
                          target_rng, nullptr);
      }
      const BackwardResult back =
          backward(result.params, batch, LossKind::kPretrain, lcfg);
      adam_step(result.params, back.grads, result.opt_state, epoch);
      ep.classification += back.loss.classification;
      ep.contrastive += back.loss.contrastive;
      ep.total += back.loss.total;
    }
    ep.classification /= steps;
    ep.contrastive /= steps;
    ep.total /= steps;
    result.record.epochs.push_back(ep);
  }
  result.record.stop_reason =
      "completed " + std::to_string(cfg.train.pretrain_epochs) + " epochs";
  return result;
}

Matrix extract_embeddings(const ModelParams &params,
                          const SpeakerDataset &dataset, bool normalize) {
  Matrix embeddings = forward_batch(params, dataset.features);
  if (normalize) {
    for (index_t j = 0; j < embeddings.cols(); ++j) {
      const double norm = embeddings.col(j).norm();
      if (norm < 1e-12) {
        throw std::runtime_error("degenerate embedding: near-zero norm");
      }
      embeddings.col(j) /= norm;
    }
  }
  return embeddings;
}

ClusterState cluster_dataset(const ModelParams &params,
                             const SpeakerDataset &target,
                             const PipelineConfig &cfg, std::uint64_t seed,
                             std::optional<int> k_override) {
  const SpeakerDataset stripped = target.stripped();
  const Matrix embeddings = extract_embeddings(params, stripped, true);
  const KmeansOptions options{cfg.cluster.n_init, cfg.cluster.max_iter,
                              cfg.cluster.tol};
  return kmeans_cosine(embeddings, k_override.value_or(cfg.cluster.k), options,
                       seed);
}

FinetuneResult finetune(const ModelParams &pretrained,
                        const SpeakerDataset &source_in,
                        const SpeakerDataset &target_in,
                        const PipelineConfig &cfg, const StageSeeds &seeds,
                        const ClusterState *initial_clusters) {
  const SpeakerDataset source = source_in.stripped();
  const SpeakerDataset target = target_in.stripped();
  source.validate();
  target.validate();
  pretrained.validate();
  if (!source.has_labels()) {
    throw std::invalid_argument("fine-tuning needs labeled source data");
  }
  FinetuneResult result;
  result.params = pretrained;
  result.opt_state = init_adam(result.params, cfg.train.lr, cfg.train.lr_decay);
  if (initial_clusters != nullptr) {
    result.clusters = *initial_clusters;
  } else {
    result.clusters = cluster_dataset(result.params, target, cfg,
                                      cluster_seed_initial(cfg.seed));
  }
  if (static_cast<index_t>(result.clusters.assignments.size()) !=
          target.size() ||
      result.clusters.centers.rows() != result.params.embedding_dim()) {
    throw std::invalid_argument("cluster state does not match target/model");
  }
  result.record.initial_cluster = ClusterSnapshot{
      0, result.clusters.k, result.clusters.assignments};

  const LossConfig lcfg = loss_config(cfg);
  const GenConfig aug = augmentation_config(cfg);
  Prng order_rng(derive_seed(seeds.training, "source-order"));
  Prng target_rng(derive_seed(seeds.training, "target-csl"));
  CslSampler sampler(target.size(), cfg.train.batch_csl);
  const index_t n = source.size();
  const index_t bs = cfg.train.batch_supervised;
  result.record.stop_reason = "reached finetune_max_epochs";
  double prev_center = 0.0;
  int consecutive_small = 0;
  for (int epoch = 0; epoch < cfg.train.finetune_max_epochs; ++epoch) {
    const std::vector<index_t> order = shuffled_indices(n, order_rng);
    EpochLoss ep;
    ep.epoch = epoch + 1;
    int steps = 0;
    for (index_t at = 0; at < n; at += bs, ++steps) {
      LossBatch batch;
      fill_source_batch(batch, source, order, at, std::min(bs, n - at));
      fill_target_views(batch, target, sampler.next(target_rng), aug,
                        target_rng, &result.clusters);
      const BackwardResult back =
          backward(result.params, batch, LossKind::kJoint, lcfg);
      adam_step(result.params, back.grads, result.opt_state, epoch);
      ep.classification += back.loss.classification;
      ep.contrastive += back.loss.contrastive;
      ep.center += back.loss.center;
      ep.total += back.loss.total;
    }
    ep.classification /= steps;
    ep.contrastive /= steps;
    ep.center /= steps;
    ep.total /= steps;
    result.record.epochs.push_back(ep);

    const int completed = epoch + 1;
    if (completed % cfg.cluster.recluster_period == 0) {
      // Refresh keeps whatever cluster count the run started with, so a
      // k override on the initial clustering propagates.
      result.clusters =
          cluster_dataset(result.params, target, cfg,
                          cluster_seed_refresh(cfg.seed, completed),
                          result.clusters.k);
      result.record.recluster_epochs.push_back(completed);
      result.record.refresh_clusters.push_back(ClusterSnapshot{
          completed, result.clusters.k, result.clusters.assignments});
    }

    if (epoch > 0) {
      const double rel = std::abs(ep.center - prev_center) /
                         std::max(std::abs(prev_center), 1e-12);
      consecutive_small = rel < cfg.train.convergence_tol
                              ? consecutive_small + 1
                              : 0;
    }
    prev_center = ep.center;
    // The center loss is only considered converged once the clusters have
    // been refreshed at least once; stability against the initial clusters
    // alone says nothing about the joint fixed point.
    if (consecutive_small >= cfg.train.convergence_window &&
        !result.record.refresh_clusters.empty()) {
      result.record.stop_reason =
          "center loss converged after epoch " + std::to_string(completed);
      break;
    }
  }
  return result;
}

PseudoLabelResult pseudo_label_target(const ModelParams &params,
                                      const SpeakerDataset &target,
                                      const PipelineConfig &cfg,
                                      std::uint64_t seed,
                                      std::optional<int> k_override) {
  PseudoLabelResult result;
  result.labeled_target = target.stripped();
  result.clusters =
      cluster_dataset(params, result.labeled_target, cfg, seed, k_override);
  result.labeled_target.labels = pseudo_labels(result.clusters);
  result.labeled_target.validate();
  return result;
}

CombinedDataset combine(const SpeakerDataset &source,
                        const SpeakerDataset &pseudo_labeled_target) {
  source.validate();
  pseudo_labeled_target.validate();
  if (!source.has_labels() || !pseudo_labeled_target.has_labels()) {
    throw std::invalid_argument("combine needs two labeled datasets");
  }
  if (source.dim() != pseudo_labeled_target.dim()) {
    throw std::invalid_argument("combine: feature dimensions differ");
  }
  CombinedDataset out;
  out.source_classes = source.num_classes();
  out.pseudo_classes = pseudo_labeled_target.num_classes();
  out.total_classes = out.source_classes + out.pseudo_classes;
  const index_t n_src = source.size(), n_tgt = pseudo_labeled_target.size();
  out.features.resize(source.dim(), n_src + n_tgt);
  out.features.leftCols(n_src) = source.features;
  out.features.rightCols(n_tgt) = pseudo_labeled_target.features;
  out.ids = source.ids;
  out.ids.insert(out.ids.end(), pseudo_labeled_target.ids.begin(),
                 pseudo_labeled_target.ids.end());
  std::unordered_set<std::int64_t> seen(out.ids.begin(), out.ids.end());
  if (seen.size() != out.ids.size()) {
    throw std::invalid_argument("combine: utterance id collision");
  }
  out.labels = source.labels;
  for (int y : pseudo_labeled_target.labels) {
    out.labels.push_back(y + out.source_classes);
  }
  return out;
}

TrainResult train_final(const CombinedDataset &combined,
                        const PipelineConfig &cfg, const StageSeeds &seeds) {
  SpeakerDataset data;
  data.features = combined.features;
  data.ids = combined.ids;
  data.labels = combined.labels;
  data.domain = Domain::kSource;
  return train_supervised(data, cfg, cfg.train.final_epochs, seeds);
}

StageEvaluation evaluate_model(const ModelParams &params,
                               const SpeakerDataset &target_with_truth,
                               const SpeakerDataset &eval_set,
                               const TrialList &trials,
                               const PipelineConfig &cfg, std::uint64_t seed,
                               const std::vector<int> *fixed_assignments) {
  const Matrix embeddings =
      extract_embeddings(params, target_with_truth, true);
  const Matrix eval_embeddings = extract_embeddings(params, eval_set, true);
  const EmbeddingTable table{eval_set.ids, eval_embeddings};
  const ScoredTrials scored = score_trials(table, trials);
  StageEvaluation ev;
  ev.eer = eer(scored);
  ev.min_dcf = min_dcf(scored, cfg.dcf());

  std::vector<int> assignments;
  if (fixed_assignments != nullptr) {
    assignments = *fixed_assignments;
    if (assignments.size() !=
        static_cast<std::size_t>(target_with_truth.size())) {
      throw std::invalid_argument("fixed assignments size mismatch");
    }
  } else {
    const KmeansOptions options{cfg.cluster.n_init, cfg.cluster.max_iter,
                                cfg.cluster.tol};
    assignments =
        kmeans_cosine(embeddings, cfg.cluster.k, options, seed).assignments;
  }
  if (target_with_truth.has_labels() ||
      target_with_truth.has_hidden_labels()) {
    const std::vector<int> &truth = target_with_truth.truth_labels();
    ev.purity = purity(assignments, truth);
    ev.nmi = nmi(assignments, truth);
  }
  try {
    ev.ch = calinski_harabasz(embeddings, assignments);
  } catch (const DegenerateMetricError &) {
  } catch (const std::invalid_argument &) {
  }
  try {
    ev.ss = silhouette(embeddings, assignments);
  } catch (const std::invalid_argument &) {
  }
  return ev;
}

namespace {

nlohmann::ordered_json stage_eval_json(const StageEvaluation &ev) {
  nlohmann::ordered_json doc;
  doc["eer"] = ev.eer;
  doc["min_dcf"] = ev.min_dcf;
  const auto put = [&doc](const char *key, const std::optional<double> &v) {
    if (v.has_value()) {
      doc[key] = *v;
    } else {
      doc[key] = "degenerate";
    }
  };
  put("purity", ev.purity);
  put("nmi", ev.nmi);
  put("calinski_harabasz", ev.ch);
  put("silhouette", ev.ss);
  return doc;
}

nlohmann::ordered_json run_record_json(const RunRecord &record) {
  nlohmann::ordered_json doc;
  nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
  for (const EpochLoss &ep : record.epochs) {
    epochs.push_back({{"epoch", ep.epoch},
                      {"classification", ep.classification},
                      {"contrastive", ep.contrastive},
                      {"center", ep.center},
                      {"total", ep.total}});
  }
  doc["epochs"] = std::move(epochs);
  doc["recluster_epochs"] = record.recluster_epochs;
  doc["stop_reason"] = record.stop_reason;
  const auto snapshot_json = [](const ClusterSnapshot &snap) {
    return nlohmann::ordered_json{{"epoch", snap.epoch},
                                  {"k", snap.k},
                                  {"assignments", snap.assignments}};
  };
  if (record.initial_cluster.has_value()) {
    doc["initial_cluster"] = snapshot_json(*record.initial_cluster);
  }
  nlohmann::ordered_json refreshes = nlohmann::ordered_json::array();
  for (const ClusterSnapshot &snap : record.refresh_clusters) {
    refreshes.push_back(snapshot_json(snap));
  }
  doc["refresh_clusters"] = std::move(refreshes);
  return doc;
}

}  // namespace

std::string run_record_text(const RunRecord &record) {
  return run_record_json(record).dump(2) + "\n";
}

void generate_run_data(const PipelineConfig &cfg, const RunPaths &paths) {
  GenConfig gen;
  gen.n_speakers = cfg.data.n_source_speakers;
  gen.utts_per_speaker = cfg.data.source_utts_per_speaker;
  gen.d_in = cfg.data.d_in;
  gen.speaker_subspace_rank = cfg.data.speaker_subspace_rank;
  gen.within_speaker_sigma = cfg.data.within_sigma;
  gen.aug_sigma = cfg.data.aug_sigma;
  gen.aug_scale_lo = cfg.data.aug_scale_lo;
  gen.aug_scale_hi = cfg.data.aug_scale_hi;
  gen.seed = derive_seed(cfg.seed, "gen-source");
  gen.id_base = 0;
  const SpeakerDataset source = generate_domain(gen, Domain::kSource);

  GenConfig tgen = gen;
  tgen.n_speakers = cfg.data.n_target_speakers;
  tgen.utts_per_speaker = cfg.data.target_utts_per_speaker;
  tgen.seed = derive_seed(cfg.seed, "gen-target");
  tgen.id_base = source.size();
  if (cfg.data.apply_shift) {
    tgen.domain_shift = make_random_shift(
        cfg.data.d_in, cfg.data.shift_sv_lo, cfg.data.shift_sv_hi,
        cfg.data.shift_offset_sigma, derive_seed(cfg.seed, "domain-shift"));
  }
  const SpeakerDataset target = generate_domain(tgen, Domain::kTarget);

  // Held-out speakers from the same shifted domain; the trial list scores
  // these, never the utterances the adaptation trains on.
  GenConfig egen = tgen;
  egen.n_speakers = cfg.data.n_eval_speakers;
  egen.utts_per_speaker = cfg.data.eval_utts_per_speaker;
  egen.seed = derive_seed(cfg.seed, "gen-eval");
  egen.id_base = source.size() + target.size();
  const SpeakerDataset eval_set = generate_domain(egen, Domain::kTarget);

  const TrialList trials =
      make_trials(eval_set, cfg.data.n_target_trials,
                  cfg.data.n_nontarget_trials, derive_seed(cfg.seed, "trials"));

  std::filesystem::create_directories(paths.dir);
  save_dataset(paths.source_data(), source);
  save_dataset(paths.target_data(), target);
  save_dataset(paths.eval_data(), eval_set);
  save_trials(paths.trials(), trials);
}

std::string run_full(const PipelineConfig &cfg_in, const RunPaths &paths,
                     std::optional<int> k_override) {
  PipelineConfig cfg = cfg_in;
  if (k_override.has_value()) cfg.cluster.k = *k_override;
  cfg.validate();
  std::filesystem::create_directories(paths.dir);

  using Clock = std::chrono::steady_clock;
  nlohmann::ordered_json timing;
  Clock::time_point mark = Clock::now();
  const auto lap = [&](const char *stage) {
    const Clock::time_point now = Clock::now();
    timing[stage] = std::chrono::duration<double>(now - mark).count();
    mark = now;
  };

  const bool have_data = std::filesystem::exists(paths.source_data()) &&
                         std::filesystem::exists(paths.target_data()) &&
                         std::filesystem::exists(paths.eval_data()) &&
                         std::filesystem::exists(paths.trials());
  if (!have_data) generate_run_data(cfg, paths);
  const SpeakerDataset source = load_dataset(paths.source_data());
  const SpeakerDataset target = load_dataset(paths.target_data());
  const SpeakerDataset eval_set = load_dataset(paths.eval_data());
  const TrialList trials = load_trials(paths.trials());
  if (source.dim() != cfg.data.d_in || target.dim() != cfg.data.d_in ||
      eval_set.dim() != cfg.data.d_in) {
    throw std::runtime_error(
        "existing datasets do not match the configured d_in");
  }
  lap("data");

  // Source-only supervised reference.
  const TrainResult baseline = train_supervised(
      source, cfg, cfg.train.final_epochs, stage_seeds(cfg.seed, "baseline"));
  save_checkpoint(paths.baseline_ckpt(), baseline.params, &baseline.opt_state);
  lap("baseline");

  // Stage 1: joint pre-training.
  const TrainResult pre =
      pretrain(source, target, cfg, stage_seeds(cfg.seed, "pretrain"));
  save_checkpoint(paths.pretrain_ckpt(), pre.params, &pre.opt_state);
  lap("pretrain");

  // Stage 2: initial clustering of the target embeddings.
  const ClusterState initial = cluster_dataset(
      pre.params, target, cfg, cluster_seed_initial(cfg.seed));
  save_cluster_state(paths.initial_clusters(), initial, target.ids);
  lap("cluster_initial");

  // Stage 3: fine-tuning with periodic refreshes.
  const FinetuneResult tuned = finetune(pre.params, source, target, cfg,
                                        stage_seeds(cfg.seed, "finetune"),
                                        &initial);
  save_checkpoint(paths.finetune_ckpt(), tuned.params, &tuned.opt_state);
  atomic_write_file(paths.finetune_record(), run_record_text(tuned.record));
  lap("finetune");

  // Stage 4: pseudo labels from re-clustering under the fine-tuned model.
  const PseudoLabelResult pseudo = pseudo_label_target(
      tuned.params, target, cfg, cluster_seed_pseudo(cfg.seed));
  save_cluster_state(paths.final_clusters(), pseudo.clusters, target.ids);
  save_dataset(paths.pseudo_target(), pseudo.labeled_target);
  lap("pseudo_label");

  // Stage 5: supervised training on the combined label space.
  const CombinedDataset combined = combine(source, pseudo.labeled_target);
  const TrainResult final_model =
      train_final(combined, cfg, stage_seeds(cfg.seed, "final"));
  save_checkpoint(paths.final_ckpt(), final_model.params,
                  &final_model.opt_state);
  lap("train_final");

  // Evaluation; the one section allowed to read the hidden target labels.
  nlohmann::ordered_json results;
  results["config_hash"] = config_hash(cfg);
  results["seed"] = cfg.seed;
  results["k"] = cfg.cluster.k;
  nlohmann::ordered_json stages;
  stages["baseline"] = stage_eval_json(
      evaluate_model(baseline.params, target, eval_set, trials, cfg,
                     eval_seed(cfg.seed, "baseline")));
  stages["pretrain"] = stage_eval_json(
      evaluate_model(pre.params, target, eval_set, trials, cfg,
                     eval_seed(cfg.seed, "pretrain")));
  stages["finetune"] = stage_eval_json(
      evaluate_model(tuned.params, target, eval_set, trials, cfg,
                     eval_seed(cfg.seed, "finetune")));
  stages["final"] = stage_eval_json(
      evaluate_model(final_model.params, target, eval_set, trials, cfg,
                     eval_seed(cfg.seed, "final")));
  results["stages"] = std::move(stages);

  nlohmann::ordered_json tuning;
  tuning["epochs_run"] = tuned.record.epochs.size();
  tuning["stop_reason"] = tuned.record.stop_reason;
  tuning["recluster_epochs"] = tuned.record.recluster_epochs;
  nlohmann::ordered_json pseudo_doc;
  pseudo_doc["classes"] = combined.pseudo_classes;
  const bool have_truth = target.has_labels() || target.has_hidden_labels();
  if (have_truth) {
    const std::vector<int> &truth = target.truth_labels();
    if (tuned.record.initial_cluster.has_value()) {
      tuning["initial_cluster_nmi"] =
          nmi(tuned.record.initial_cluster->assignments, truth);
    }
    const ClusterSnapshot *last =
        tuned.record.refresh_clusters.empty()
            ? (tuned.record.initial_cluster.has_value()
                   ? &*tuned.record.initial_cluster
                   : nullptr)
            : &tuned.record.refresh_clusters.back();
    if (last != nullptr) {
      tuning["final_cluster_nmi"] = nmi(last->assignments, truth);
    }
    pseudo_doc["purity"] = purity(pseudo.labeled_target.labels, truth);
    pseudo_doc["nmi"] = nmi(pseudo.labeled_target.labels, truth);
  }
  results["finetune"] = std::move(tuning);
  results["pseudo_labels"] = std::move(pseudo_doc);
  results["combined_classes"] = combined.total_classes;
  lap("evaluate");

  const std::string text = results.dump(2) + "\n";
  atomic_write_file(paths.results(), text);
  atomic_write_file(paths.timing(), timing.dump(2) + "\n");
  return text;
}

}  // namespace cguda
