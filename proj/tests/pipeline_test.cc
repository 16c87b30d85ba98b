// tests/pipeline_test.cc

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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "cguda/io_util.h"
#include "cguda/pipeline.h"
#include "test_util.h"

using namespace cguda;

namespace {

// Scaled-down run: a handful of speakers, one hidden layer, a few epochs.
PipelineConfig tiny_config() {
  PipelineConfig cfg;
  cfg.seed = 777;
  cfg.data.n_source_speakers = 6;
  cfg.data.source_utts_per_speaker = 8;
  cfg.data.n_target_speakers = 4;
  cfg.data.target_utts_per_speaker = 8;
  cfg.data.n_eval_speakers = 3;
  cfg.data.eval_utts_per_speaker = 8;
  cfg.data.d_in = 10;
  cfg.data.n_target_trials = 60;
  cfg.data.n_nontarget_trials = 60;
  cfg.model.hidden_dim = 12;
  cfg.model.n_hidden = 1;
  cfg.model.d_emb = 6;
  cfg.train.pretrain_epochs = 2;
  cfg.train.finetune_max_epochs = 4;
  cfg.train.final_epochs = 2;
  cfg.train.batch_supervised = 16;
  cfg.train.batch_csl = 8;
  cfg.train.convergence_tol = 1e-9;  // never trips within four epochs
  cfg.train.convergence_window = 3;
  cfg.cluster.k = 4;
  cfg.cluster.recluster_period = 2;
  cfg.cluster.n_init = 2;
  cfg.cluster.max_iter = 50;
  cfg.metrics.dcf_p_target = 0.1;
  cfg.validate();
  return cfg;
}

GenConfig domain_gen(const PipelineConfig &cfg, bool target) {
  GenConfig gen;
  gen.n_speakers =
      target ? cfg.data.n_target_speakers : cfg.data.n_source_speakers;
  gen.utts_per_speaker = target ? cfg.data.target_utts_per_speaker
                                : cfg.data.source_utts_per_speaker;
  gen.d_in = cfg.data.d_in;
  gen.within_speaker_sigma = cfg.data.within_sigma;
  gen.aug_sigma = cfg.data.aug_sigma;
  gen.aug_scale_lo = cfg.data.aug_scale_lo;
  gen.aug_scale_hi = cfg.data.aug_scale_hi;
  gen.seed = target ? 9002 : 9001;
  gen.id_base = target ? 1000 : 0;
  return gen;
}

SpeakerDataset make_source(const PipelineConfig &cfg) {
  return generate_domain(domain_gen(cfg, false), Domain::kSource);
}

SpeakerDataset make_target(const PipelineConfig &cfg) {
  GenConfig gen = domain_gen(cfg, true);
  gen.domain_shift = make_random_shift(cfg.data.d_in, 0.7, 1.5, 0.1, 9003);
  return generate_domain(gen, Domain::kTarget);
}

double param_distance(const ModelParams &a, const ModelParams &b) {
  return (flatten_params(a) - flatten_params(b)).norm();
}

// Rotate the hidden truth labels: same multiset, different per-utterance
// identities. Any training-stage output that changes under this scramble has
// read labels it must not see.
SpeakerDataset scramble_hidden(const SpeakerDataset &in) {
  SpeakerDataset out = in;
  REQUIRE(out.has_hidden_labels());
  std::rotate(out.hidden_labels.begin(), out.hidden_labels.begin() + 1,
              out.hidden_labels.end());
  return out;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("stage seed streams are pairwise distinct") {
  const std::uint64_t root = 42;
  const std::vector<std::uint64_t> seeds = {
      stage_seeds(root, "pretrain").init_params,
      stage_seeds(root, "pretrain").training,
      stage_seeds(root, "finetune").init_params,
      stage_seeds(root, "finetune").training,
      stage_seeds(root, "baseline").training,
      cluster_seed_initial(root),
      cluster_seed_refresh(root, 5),
      cluster_seed_refresh(root, 10),
      cluster_seed_pseudo(root),
      eval_seed(root, "baseline"),
      eval_seed(root, "final"),
  };
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  CHECK(unique.size() == seeds.size());
  CHECK(stage_seeds(root, "pretrain").training ==
        stage_seeds(root, "pretrain").training);
  CHECK(stage_seeds(root + 1, "pretrain").training !=
        stage_seeds(root, "pretrain").training);
}

TEST_CASE("supervised training is deterministic and validates its input") {
  const PipelineConfig cfg = tiny_config();
  const SpeakerDataset source = make_source(cfg);
  const StageSeeds seeds = stage_seeds(cfg.seed, "baseline");
  const TrainResult a = train_supervised(source, cfg, 2, seeds);
  const TrainResult b = train_supervised(source, cfg, 2, seeds);
  CHECK(param_distance(a.params, b.params) == 0.0);
  CHECK(a.record.epochs.size() == 2);
  CHECK(a.record.epochs[0].epoch == 1);
  CHECK(a.record.epochs[1].epoch == 2);
  CHECK(a.record.stop_reason == "completed 2 epochs");
  CHECK(a.params.num_classes() == 6);

  // Loss actually decreases on this easy separable data.
  CHECK(a.record.epochs[1].total < a.record.epochs[0].total);

  SpeakerDataset unlabeled = source;
  unlabeled.labels.clear();
  CHECK_THROWS_AS(train_supervised(unlabeled, cfg, 2, seeds),
                  std::invalid_argument);
  CHECK_THROWS_AS(train_supervised(source, cfg, 0, seeds),
                  std::invalid_argument);
}

TEST_CASE("pretrain with alpha = 0 is bit-identical to supervised training") {
  PipelineConfig cfg = tiny_config();
  cfg.train.alpha = 0.0;
  const SpeakerDataset source = make_source(cfg);
  const SpeakerDataset target = make_target(cfg);
  const StageSeeds seeds = stage_seeds(cfg.seed, "pretrain");

  const TrainResult joint = pretrain(source, target, cfg, seeds);
  const TrainResult plain =
      train_supervised(source, cfg, cfg.train.pretrain_epochs, seeds);
  CHECK(param_distance(joint.params, plain.params) == 0.0);
  REQUIRE(joint.record.epochs.size() == plain.record.epochs.size());
  for (std::size_t e = 0; e < joint.record.epochs.size(); ++e) {
    CHECK(joint.record.epochs[e].classification ==
          plain.record.epochs[e].classification);
    CHECK(joint.record.epochs[e].total == plain.record.epochs[e].total);
    CHECK(joint.record.epochs[e].contrastive == 0.0);
  }
}

TEST_CASE("pretrain is deterministic and blind to hidden target labels") {
  const PipelineConfig cfg = tiny_config();
  const SpeakerDataset source = make_source(cfg);
  const SpeakerDataset target = make_target(cfg);
  const StageSeeds seeds = stage_seeds(cfg.seed, "pretrain");

  const TrainResult a = pretrain(source, target, cfg, seeds);
  const TrainResult b = pretrain(source, target, cfg, seeds);
  CHECK(param_distance(a.params, b.params) == 0.0);
  CHECK(a.record.epochs.back().contrastive > 0.0);

  const TrainResult scrambled =
      pretrain(source, scramble_hidden(target), cfg, seeds);
  CHECK(param_distance(a.params, scrambled.params) == 0.0);

  SpeakerDataset narrow = target;
  narrow.features.conservativeResize(cfg.data.d_in - 1, Eigen::NoChange);
  CHECK_THROWS_AS(pretrain(source, narrow, cfg, seeds),
                  std::invalid_argument);
}

TEST_CASE("extract_embeddings matches the forward pass, normalized on demand") {
  const PipelineConfig cfg = tiny_config();
  const SpeakerDataset target = make_target(cfg);
  const ModelParams params =
      init_params({10, 12, 6}, 6, 31, cfg.model.omega0, cfg.model.b0,
                  cfg.model.lambda0);
  const Matrix raw = extract_embeddings(params, target, false);
  CHECK((raw - forward_batch(params, target.features)).norm() == 0.0);
  const Matrix unit = extract_embeddings(params, target, true);
  for (index_t j = 0; j < unit.cols(); ++j) {
    CHECK(std::abs(unit.col(j).norm() - 1.0) < 1e-12);
    CHECK((unit.col(j) - raw.col(j) / raw.col(j).norm()).norm() < 1e-15);
  }
}

TEST_CASE("finetune refreshes clusters on schedule and records them") {
  const PipelineConfig cfg = tiny_config();
  const SpeakerDataset source = make_source(cfg);
  const SpeakerDataset target = make_target(cfg);
  const TrainResult pre =
      pretrain(source, target, cfg, stage_seeds(cfg.seed, "pretrain"));

  const FinetuneResult tuned = finetune(pre.params, source, target, cfg,
                                        stage_seeds(cfg.seed, "finetune"));
  CHECK(tuned.record.epochs.size() == 4);
  CHECK(tuned.record.stop_reason == "reached finetune_max_epochs");
  CHECK(tuned.record.recluster_epochs == std::vector<int>{2, 4});
  REQUIRE(tuned.record.initial_cluster.has_value());
  CHECK(tuned.record.initial_cluster->epoch == 0);
  CHECK(tuned.record.initial_cluster->k == 4);
  REQUIRE(tuned.record.refresh_clusters.size() == 2);
  CHECK(tuned.record.refresh_clusters[0].epoch == 2);
  CHECK(tuned.record.refresh_clusters[1].epoch == 4);
  CHECK(tuned.clusters.assignments ==
        tuned.record.refresh_clusters.back().assignments);
  for (const EpochLoss &ep : tuned.record.epochs) {
    CHECK(ep.center > 0.0);
    CHECK(std::abs(ep.total - (ep.classification +
                               cfg.train.alpha * ep.contrastive +
                               cfg.train.beta * ep.center)) < 1e-9);
  }

  // Deterministic, and blind to the hidden labels.
  const FinetuneResult again = finetune(pre.params, source, target, cfg,
                                        stage_seeds(cfg.seed, "finetune"));
  CHECK(param_distance(tuned.params, again.params) == 0.0);
  const FinetuneResult blind =
      finetune(pre.params, source, scramble_hidden(target), cfg,
               stage_seeds(cfg.seed, "finetune"));
  CHECK(param_distance(tuned.params, blind.params) == 0.0);
  CHECK(blind.clusters.assignments == tuned.clusters.assignments);
}

TEST_CASE("finetune stops once the center loss settles, but only after a refresh") {
  PipelineConfig cfg = tiny_config();
  cfg.train.convergence_tol = 1e9;  // any epoch-to-epoch change counts as small
  cfg.train.convergence_window = 1;
  const SpeakerDataset source = make_source(cfg);
  const SpeakerDataset target = make_target(cfg);
  const TrainResult pre =
      pretrain(source, target, cfg, stage_seeds(cfg.seed, "pretrain"));

  // Refresh period 2: the earliest permissible stop is right after epoch 2.
  const FinetuneResult fast = finetune(pre.params, source, target, cfg,
                                       stage_seeds(cfg.seed, "finetune"));
  CHECK(fast.record.epochs.size() == 2);
  CHECK(fast.record.stop_reason == "center loss converged after epoch 2");
  CHECK(fast.record.refresh_clusters.size() == 1);

  // With no refresh inside the horizon the same tolerance never stops early.
  cfg.cluster.recluster_period = 10;
  const FinetuneResult held = finetune(pre.params, source, target, cfg,
                                       stage_seeds(cfg.seed, "finetune"));
  CHECK(held.record.epochs.size() == 4);
  CHECK(held.record.stop_reason == "reached finetune_max_epochs");
  CHECK(held.record.refresh_clusters.empty());
}

TEST_CASE("a k override on the initial clustering propagates to refreshes") {
  const PipelineConfig cfg = tiny_config();
  const SpeakerDataset source = make_source(cfg);
  const SpeakerDataset target = make_target(cfg);
  const TrainResult pre =
      pretrain(source, target, cfg, stage_seeds(cfg.seed, "pretrain"));

  const ClusterState initial = cluster_dataset(
      pre.params, target, cfg, cluster_seed_initial(cfg.seed), 3);
  CHECK(initial.k == 3);
  const FinetuneResult tuned =
      finetune(pre.params, source, target, cfg,
               stage_seeds(cfg.seed, "finetune"), &initial);
  for (const ClusterSnapshot &snap : tuned.record.refresh_clusters) {
    CHECK(snap.k == 3);
  }
  CHECK(tuned.clusters.k == 3);

  ClusterState wrong = initial;
  wrong.assignments.pop_back();
  CHECK_THROWS_AS(finetune(pre.params, source, target, cfg,
                           stage_seeds(cfg.seed, "finetune"), &wrong),
                  std::invalid_argument);
}

TEST_CASE("pseudo labels are contiguous and congruent with the clustering") {
  const PipelineConfig cfg = tiny_config();
  const SpeakerDataset target = make_target(cfg);
  const ModelParams params =
      init_params({10, 12, 6}, 6, 77, cfg.model.omega0, cfg.model.b0,
                  cfg.model.lambda0);

  const PseudoLabelResult pseudo =
      pseudo_label_target(params, target, cfg, cluster_seed_pseudo(cfg.seed));
  const SpeakerDataset &labeled = pseudo.labeled_target;
  CHECK(labeled.has_labels());
  CHECK_FALSE(labeled.has_hidden_labels());
  CHECK(labeled.ids == target.ids);
  CHECK_NOTHROW(labeled.validate());

  // Contiguous label space 0..K'-1.
  std::set<int> distinct(labeled.labels.begin(), labeled.labels.end());
  CHECK(*distinct.begin() == 0);
  CHECK(*distinct.rbegin() == static_cast<int>(distinct.size()) - 1);
  CHECK(labeled.num_classes() == static_cast<int>(distinct.size()));
  CHECK(static_cast<int>(distinct.size()) <= cfg.cluster.k);

  // Same co-membership as the raw cluster assignments.
  for (std::size_t i = 0; i < labeled.labels.size(); ++i) {
    for (std::size_t j = i + 1; j < labeled.labels.size(); ++j) {
      CHECK((labeled.labels[i] == labeled.labels[j]) ==
            (pseudo.clusters.assignments[i] == pseudo.clusters.assignments[j]));
    }
  }

  // Seeded determinism and the k override.
  const PseudoLabelResult again =
      pseudo_label_target(params, target, cfg, cluster_seed_pseudo(cfg.seed));
  CHECK(again.labeled_target.labels == labeled.labels);
  const PseudoLabelResult narrow =
      pseudo_label_target(params, target, cfg, cluster_seed_pseudo(cfg.seed),
                          2);
  CHECK(narrow.labeled_target.num_classes() <= 2);
}

TEST_CASE("combine offsets pseudo labels past the source classes") {
  const PipelineConfig cfg = tiny_config();
  const SpeakerDataset source = make_source(cfg);
  SpeakerDataset pseudo = make_target(cfg).stripped();
  pseudo.labels.assign(static_cast<std::size_t>(pseudo.size()), 0);
  for (std::size_t i = 0; i < pseudo.labels.size(); ++i) {
    pseudo.labels[i] = static_cast<int>(i % 3);
  }

  const CombinedDataset combined = combine(source, pseudo);
  CHECK(combined.source_classes == 6);
  CHECK(combined.pseudo_classes == 3);
  CHECK(combined.total_classes == 9);
  CHECK(combined.features.cols() == source.size() + pseudo.size());
  CHECK((combined.features.leftCols(source.size()) - source.features).norm() ==
        0.0);
  CHECK((combined.features.rightCols(pseudo.size()) - pseudo.features).norm() ==
        0.0);
  for (index_t i = 0; i < source.size(); ++i) {
    CHECK(combined.labels[static_cast<std::size_t>(i)] ==
          source.labels[static_cast<std::size_t>(i)]);
  }
  for (index_t i = 0; i < pseudo.size(); ++i) {
    const std::size_t at = static_cast<std::size_t>(source.size() + i);
    CHECK(combined.labels[at] ==
          pseudo.labels[static_cast<std::size_t>(i)] + 6);
  }

  // The combined dataset trains end to end.
  const TrainResult final_model =
      train_final(combined, cfg, stage_seeds(cfg.seed, "final"));
  CHECK(final_model.params.num_classes() == 9);

  SpeakerDataset colliding = pseudo;
  colliding.ids[0] = source.ids[0];
  CHECK_THROWS_AS(combine(source, colliding), std::invalid_argument);

  SpeakerDataset unlabeled = pseudo;
  unlabeled.labels.clear();
  CHECK_THROWS_AS(combine(source, unlabeled), std::invalid_argument);
}

TEST_CASE("evaluate_model reports detection and clustering quality") {
  const PipelineConfig cfg = tiny_config();
  const SpeakerDataset target = make_target(cfg);
  const TrialList trials = make_trials(target, 60, 60, 5);
  const ModelParams params =
      init_params({10, 12, 6}, 6, 99, cfg.model.omega0, cfg.model.b0,
                  cfg.model.lambda0);

  const StageEvaluation ev =
      evaluate_model(params, target, target, trials, cfg,
                     eval_seed(cfg.seed, "baseline"));
  CHECK(ev.eer >= 0.0);
  CHECK(ev.eer <= 1.0);
  CHECK(ev.min_dcf >= 0.0);
  CHECK(ev.min_dcf <= 1.0 + 1e-15);
  REQUIRE(ev.purity.has_value());
  REQUIRE(ev.nmi.has_value());
  CHECK(*ev.purity > 0.0);
  CHECK(ev.ch.has_value());
  CHECK(ev.ss.has_value());

  // Feeding the ground truth as fixed assignments maxes out both scores.
  const std::vector<int> &truth = target.truth_labels();
  const StageEvaluation perfect =
      evaluate_model(params, target, target, trials, cfg,
                     eval_seed(cfg.seed, "baseline"), &truth);
  CHECK(*perfect.purity == 1.0);
  CHECK(*perfect.nmi == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<int> short_fixed(3, 0);
  CHECK_THROWS_AS(
      evaluate_model(params, target, target, trials, cfg, 1, &short_fixed),
      std::invalid_argument);
}

TEST_CASE("generated run data round-trips through the run directory") {
  const PipelineConfig cfg = tiny_config();
  cguda_test::TempDir tmp("rundata");
  RunPaths paths{tmp.path()};
  generate_run_data(cfg, paths);

  const SpeakerDataset source = load_dataset(paths.source_data());
  const SpeakerDataset target = load_dataset(paths.target_data());
  const SpeakerDataset eval_set = load_dataset(paths.eval_data());
  const TrialList trials = load_trials(paths.trials());
  CHECK(source.size() == 48);
  CHECK(source.has_labels());
  CHECK(target.size() == 32);
  CHECK_FALSE(target.has_labels());
  CHECK(target.has_hidden_labels());
  CHECK(eval_set.size() == 24);
  CHECK_FALSE(eval_set.has_labels());
  CHECK(eval_set.has_hidden_labels());
  CHECK(trials.size() == 120);

  // Trials reference only held-out utterances.
  const std::set<std::int64_t> eval_ids(eval_set.ids.begin(),
                                        eval_set.ids.end());
  for (std::size_t t = 0; t < trials.size(); ++t) {
    CHECK(eval_ids.count(trials.id_a[t]) == 1);
    CHECK(eval_ids.count(trials.id_b[t]) == 1);
  }

  // Disjoint id spaces by construction.
  std::set<std::int64_t> ids(source.ids.begin(), source.ids.end());
  ids.insert(target.ids.begin(), target.ids.end());
  ids.insert(eval_set.ids.begin(), eval_set.ids.end());
  CHECK(ids.size() == static_cast<std::size_t>(source.size() + target.size() +
                                               eval_set.size()));
}

TEST_CASE("run_full is deterministic, rerunnable, and writes every artifact") {
  const PipelineConfig cfg = tiny_config();
  cguda_test::TempDir tmp_a("run-a");
  cguda_test::TempDir tmp_b("run-b");
  RunPaths a{tmp_a.path()};
  RunPaths b{tmp_b.path()};

  const std::string text_a = run_full(cfg, a);
  const std::string text_b = run_full(cfg, b);
  CHECK(text_a == text_b);

  // Every deterministic artifact matches byte for byte across directories.
  for (const std::string &rel :
       {std::string("source.spkdata"), std::string("target.spkdata"),
        std::string("eval.spkdata"),
        std::string("trials.txt"), std::string("baseline.ckpt"),
        std::string("pretrain.ckpt"), std::string("cluster_initial.clust"),
        std::string("finetune.ckpt"), std::string("cluster_final.clust"),
        std::string("target_pseudo.spkdata"), std::string("final.ckpt"),
        std::string("results.json"), std::string("finetune_record.json")}) {
    CHECK(read_file(a.dir + "/" + rel) == read_file(b.dir + "/" + rel));
  }
  CHECK(std::filesystem::exists(a.timing()));

  // A second run in the same directory reuses the data files and reproduces
  // the results document exactly.
  const std::string again = run_full(cfg, a);
  CHECK(again == text_a);

  // The document is well-formed and internally consistent.
  const nlohmann::json doc = nlohmann::json::parse(text_a);
  CHECK(doc.at("seed").get<std::uint64_t>() == cfg.seed);
  CHECK(doc.at("k").get<int>() == 4);
  CHECK(doc.at("config_hash").get<std::string>() == config_hash(cfg));
  for (const char *stage : {"baseline", "pretrain", "finetune", "final"}) {
    const auto &s = doc.at("stages").at(stage);
    CHECK(s.at("eer").get<double>() >= 0.0);
    CHECK(s.at("eer").get<double>() <= 1.0);
    CHECK(s.at("min_dcf").get<double>() <= 1.0 + 1e-15);
  }
  CHECK(doc.at("finetune").at("epochs_run").get<int>() == 4);
  CHECK(doc.at("finetune").at("recluster_epochs") ==
        nlohmann::json::parse("[2, 4]"));
  CHECK(doc.at("finetune").contains("initial_cluster_nmi"));
  CHECK(doc.at("finetune").contains("final_cluster_nmi"));
  const int pseudo_classes =
      doc.at("pseudo_labels").at("classes").get<int>();
  CHECK(pseudo_classes >= 1);
  CHECK(pseudo_classes <= 4);
  CHECK(doc.at("combined_classes").get<int>() == 6 + pseudo_classes);

  // Saved artifacts load back through their own readers.
  const Checkpoint final_ckpt = load_checkpoint(a.final_ckpt());
  CHECK(final_ckpt.params.num_classes() == 6 + pseudo_classes);
  CHECK(final_ckpt.opt_state.has_value());
  const auto [clusters, cluster_ids] = load_cluster_state(a.final_clusters());
  CHECK(cluster_ids == load_dataset(a.target_data()).ids);
  CHECK(clusters.k == 4);
}

TEST_CASE("run_full honors a k override in config hash and artifacts") {
  const PipelineConfig cfg = tiny_config();
  cguda_test::TempDir tmp("run-k");
  RunPaths paths{tmp.path()};
  const std::string text = run_full(cfg, paths, 3);
  const nlohmann::json doc = nlohmann::json::parse(text);
  CHECK(doc.at("k").get<int>() == 3);
  PipelineConfig folded = cfg;
  folded.cluster.k = 3;
  CHECK(doc.at("config_hash").get<std::string>() == config_hash(folded));
  const auto [clusters, ids] = load_cluster_state(paths.final_clusters());
  CHECK(clusters.k == 3);
}

}  // TEST_SUITE("pipeline")
