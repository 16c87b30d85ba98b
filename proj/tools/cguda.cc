// tools/cguda.cc

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

// Command-line surface over the adaptation pipeline. Every subcommand is a
// thin wrapper over the library: it resolves the configuration, loads the
// artifacts it needs from the run directory, calls one library entry point,
// and persists the outputs. Stage commands and run-all share the same
// derived-seed helpers, so running the stages one by one produces files byte-
// identical to a single run-all over the same directory.
//
// Exit codes:
//   0  success
//   2  usage error (unknown subcommand, bad flag)
//   3  configuration or contract error
//   4  required input artifact missing
//   5  numerical failure inside a stage
//   6  artifact read/write or format failure
//   7  gradient check exceeded the tolerance
//
// Failures print a single machine-parsable line to stderr:
//   ERROR <code> <message>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "cguda/config.h"
#include "cguda/io_util.h"
#include "cguda/pipeline.h"

namespace {

using namespace cguda;

constexpr double kGradCheckTol = 1e-5;
constexpr double kGradCheckEps = 1e-4;
constexpr int kGradCheckInstances = 10;

class CliError : public std::runtime_error {
 public:
  CliError(int code, const std::string &message)
      : std::runtime_error(message), code_(code) {}
  int code() const { return code_; }

 private:
  int code_ = 0;
};

// Prefixes the artifact path onto a message unless the library already did.
std::string with_path(const std::string &path, const char *what) {
  const std::string msg = what;
  return msg.find(path) != std::string::npos ? msg : path + ": " + msg;
}

PipelineConfig resolve_config(const std::string &config_path,
                              const std::optional<std::uint64_t> &seed,
                              const std::optional<int> &k) {
  PipelineConfig cfg;
  if (!config_path.empty()) {
    try {
      cfg = load_config(config_path);
    } catch (const std::exception &e) {
      throw CliError(3, "config: " + with_path(config_path, e.what()));
    }
  }
  if (seed.has_value()) cfg.seed = *seed;
  if (k.has_value()) cfg.cluster.k = *k;
  try {
    cfg.validate();
  } catch (const std::exception &e) {
    throw CliError(3, std::string("config: ") + e.what());
  }
  return cfg;
}

// Loads one artifact through `loader`, mapping absence to exit code 4 and
// unreadable/corrupt contents to exit code 6.
template <typename Loader>
auto load_artifact(const std::string &path, Loader loader) {
  if (!std::filesystem::exists(path)) {
    throw CliError(4, "missing input: " + path);
  }
  try {
    return loader(path);
  } catch (const std::exception &e) {
    throw CliError(6, with_path(path, e.what()));
  }
}

template <typename Saver>
void save_artifact(Saver saver) {
  try {
    saver();
  } catch (const std::exception &e) {
    throw CliError(6, e.what());
  }
}

void ensure_run_dir(const RunPaths &paths) {
  try {
    std::filesystem::create_directories(paths.dir);
  } catch (const std::exception &e) {
    throw CliError(6, e.what());
  }
}

std::string epochs_summary(const RunRecord &record) {
  std::ostringstream out;
  out << record.epochs.size() << " epochs (" << record.stop_reason
      << "), final total " << format_double(record.epochs.back().total);
  return out.str();
}

int cmd_gen_data(const PipelineConfig &cfg, const RunPaths &paths) {
  ensure_run_dir(paths);
  try {
    generate_run_data(cfg, paths);
  } catch (const std::invalid_argument &) {
    throw;  // infeasible counts etc.: contract error, exit 3
  } catch (const std::runtime_error &e) {
    throw CliError(6, e.what());
  }
  std::cout << "gen-data: wrote " << paths.source_data() << ", "
            << paths.target_data() << ", " << paths.eval_data() << ", "
            << paths.trials() << "\n";
  return 0;
}

int cmd_pretrain(const PipelineConfig &cfg, const RunPaths &paths) {
  const SpeakerDataset source = load_artifact(paths.source_data(), load_dataset);
  const SpeakerDataset target = load_artifact(paths.target_data(), load_dataset);
  const TrainResult result =
      pretrain(source, target, cfg, stage_seeds(cfg.seed, "pretrain"));
  save_artifact([&] {
    save_checkpoint(paths.pretrain_ckpt(), result.params, &result.opt_state);
  });
  std::cout << "pretrain: " << epochs_summary(result.record) << " -> "
            << paths.pretrain_ckpt() << "\n";
  return 0;
}

int cmd_cluster(const PipelineConfig &cfg, const RunPaths &paths) {
  const SpeakerDataset target = load_artifact(paths.target_data(), load_dataset);
  const Checkpoint ckpt = load_artifact(paths.pretrain_ckpt(), load_checkpoint);
  const ClusterState state =
      cluster_dataset(ckpt.params, target, cfg, cluster_seed_initial(cfg.seed));
  save_artifact([&] {
    save_cluster_state(paths.initial_clusters(), state, target.ids);
  });
  std::cout << "cluster: k=" << state.k << " objective="
            << format_double(state.objective) << " -> "
            << paths.initial_clusters() << "\n";
  return 0;
}

int cmd_finetune(const PipelineConfig &cfg, const RunPaths &paths) {
  const SpeakerDataset source = load_artifact(paths.source_data(), load_dataset);
  const SpeakerDataset target = load_artifact(paths.target_data(), load_dataset);
  const Checkpoint ckpt = load_artifact(paths.pretrain_ckpt(), load_checkpoint);
  const auto [initial, cluster_ids] =
      load_artifact(paths.initial_clusters(), load_cluster_state);
  if (cluster_ids != target.ids) {
    throw std::invalid_argument(
        "initial cluster state was built for different utterance ids");
  }
  const FinetuneResult result =
      finetune(ckpt.params, source, target, cfg,
               stage_seeds(cfg.seed, "finetune"), &initial);
  save_artifact([&] {
    save_checkpoint(paths.finetune_ckpt(), result.params, &result.opt_state);
    atomic_write_file(paths.finetune_record(), run_record_text(result.record));
  });
  std::cout << "finetune: " << epochs_summary(result.record) << " -> "
            << paths.finetune_ckpt() << "\n";
  return 0;
}

int cmd_pseudo_label(const PipelineConfig &cfg, const RunPaths &paths) {
  const SpeakerDataset target = load_artifact(paths.target_data(), load_dataset);
  const Checkpoint ckpt = load_artifact(paths.finetune_ckpt(), load_checkpoint);
  const PseudoLabelResult result = pseudo_label_target(
      ckpt.params, target, cfg, cluster_seed_pseudo(cfg.seed));
  save_artifact([&] {
    save_cluster_state(paths.final_clusters(), result.clusters, target.ids);
    save_dataset(paths.pseudo_target(), result.labeled_target);
  });
  std::cout << "pseudo-label: " << result.labeled_target.num_classes()
            << " pseudo classes -> " << paths.pseudo_target() << "\n";
  return 0;
}

int cmd_train_final(const PipelineConfig &cfg, const RunPaths &paths) {
  const SpeakerDataset source = load_artifact(paths.source_data(), load_dataset);
  const SpeakerDataset pseudo =
      load_artifact(paths.pseudo_target(), load_dataset);
  const CombinedDataset combined = combine(source, pseudo);
  const TrainResult result =
      train_final(combined, cfg, stage_seeds(cfg.seed, "final"));
  save_artifact([&] {
    save_checkpoint(paths.final_ckpt(), result.params, &result.opt_state);
  });
  std::cout << "train-final: " << combined.total_classes << " classes, "
            << epochs_summary(result.record) << " -> " << paths.final_ckpt()
            << "\n";
  return 0;
}

void emit_curves(const ModelParams &params, const SpeakerDataset &eval_set,
                 const TrialList &trials, const std::string &path) {
  const Matrix embeddings = extract_embeddings(params, eval_set, true);
  const ScoredTrials scored =
      score_trials(EmbeddingTable{eval_set.ids, embeddings}, trials);
  std::string csv = "threshold,frr,far\n";
  for (const SweepPoint &pt : far_frr_sweep(scored)) {
    csv += format_double(pt.threshold) + "," + format_double(pt.frr) + "," +
           format_double(pt.far) + "\n";
  }
  save_artifact([&] { atomic_write_file(path, csv); });
}

int cmd_evaluate(const PipelineConfig &cfg, const RunPaths &paths,
                 std::string ckpt_path, bool curves) {
  if (ckpt_path.empty()) ckpt_path = paths.final_ckpt();
  const SpeakerDataset target = load_artifact(paths.target_data(), load_dataset);
  const SpeakerDataset eval_set =
      load_artifact(paths.eval_data(), load_dataset);
  const TrialList trials = load_artifact(paths.trials(), load_trials);
  const Checkpoint ckpt = load_artifact(ckpt_path, load_checkpoint);

  // The checkpoint's basename doubles as the evaluation stream tag, so
  // "evaluate --ckpt finetune.ckpt" reproduces the finetune section of a
  // run-all results document bit for bit.
  const std::string stage = std::filesystem::path(ckpt_path).stem().string();
  const StageEvaluation ev = evaluate_model(ckpt.params, target, eval_set,
                                            trials, cfg,
                                            eval_seed(cfg.seed, stage));
  MetricsReport report;
  report.eer = ev.eer;
  report.min_dcf = ev.min_dcf;
  report.purity = ev.purity;
  report.nmi = ev.nmi;
  report.ch = ev.ch;
  report.ss = ev.ss;
  report.config_hash = config_hash(cfg);
  report.seed = cfg.seed;
  const std::string text = metrics_report_json(report);
  save_artifact([&] {
    atomic_write_file(paths.dir + "/metrics_" + stage + ".json", text);
  });
  if (curves) {
    emit_curves(ckpt.params, eval_set, trials,
                paths.dir + "/curves_" + stage + ".csv");
  }
  std::cout << text;
  return 0;
}

int cmd_run_all(const PipelineConfig &cfg, const RunPaths &paths, bool curves) {
  ensure_run_dir(paths);
  std::string text;
  try {
    text = run_full(cfg, paths);
  } catch (const std::invalid_argument &) {
    throw;
  } catch (const ConfigError &) {
    throw;
  } catch (const std::runtime_error &e) {
    // run_full interleaves training with persistence; classify by message
    // origin: filesystem-flavored failures carry a path-like prefix from the
    // io helpers, everything else is numerical.
    const std::string what = e.what();
    const bool io_flavored = what.find("cannot open") != std::string::npos ||
                             what.find("cannot write") != std::string::npos ||
                             what.find("rename") != std::string::npos;
    throw CliError(io_flavored ? 6 : 5, what);
  }
  if (curves) {
    const SpeakerDataset eval_set =
        load_artifact(paths.eval_data(), load_dataset);
    const TrialList trials = load_artifact(paths.trials(), load_trials);
    const std::vector<std::pair<std::string, std::string>> stages = {
        {"baseline", paths.baseline_ckpt()},
        {"pretrain", paths.pretrain_ckpt()},
        {"finetune", paths.finetune_ckpt()},
        {"final", paths.final_ckpt()},
    };
    for (const auto &[name, ckpt_path] : stages) {
      const Checkpoint ckpt = load_artifact(ckpt_path, load_checkpoint);
      emit_curves(ckpt.params, eval_set, trials,
                  paths.dir + "/curves_" + name + ".csv");
    }
  }
  std::cout << text;
  return 0;
}

// Small fixed probe network: the audit targets the loss/gradient code, not
// any particular architecture, so the probe stays cheap while the loss
// hyperparameters (margin, scale, score kind, weights) come from the config.
struct GradProbe {
  ModelParams params;
  LossBatch batch;
};

GradProbe make_probe(const PipelineConfig &cfg, std::uint64_t seed) {
  constexpr index_t d_in = 6;
  constexpr index_t d_emb = 5;
  constexpr index_t classes = 5;
  constexpr index_t batch_src = 7;
  constexpr index_t batch_tgt = 6;
  constexpr index_t k = 3;
  GradProbe probe;
  probe.params = init_params({d_in, 8, d_emb}, classes, seed, cfg.model.omega0,
                             cfg.model.b0, cfg.model.lambda0);
  Prng rng(derive_seed(seed, "probe-batch"));
  probe.batch.source_inputs = rng.normal_matrix(d_in, batch_src);
  probe.batch.source_labels.resize(batch_src);
  for (index_t i = 0; i < batch_src; ++i) {
    probe.batch.source_labels[static_cast<std::size_t>(i)] =
        static_cast<int>(i % classes);
  }
  probe.batch.target_view_a = rng.normal_matrix(d_in, batch_tgt);
  probe.batch.target_view_b = rng.normal_matrix(d_in, batch_tgt);
  probe.batch.target_assignments.resize(batch_tgt);
  for (index_t i = 0; i < batch_tgt; ++i) {
    probe.batch.target_assignments[static_cast<std::size_t>(i)] =
        static_cast<int>(i % k);
  }
  probe.batch.centers = rng.normal_matrix(d_emb, k);
  for (index_t j = 0; j < k; ++j) {
    probe.batch.centers.col(j).normalize();
  }
  return probe;
}

int cmd_grad_check(const PipelineConfig &cfg) {
  struct Case {
    const char *name;
    LossKind kind;
    ScoreKind score;
  };
  const std::vector<Case> cases = {
      {"contrastive-cosine", LossKind::kContrastive, ScoreKind::kCosine},
      {"contrastive-euclidean", LossKind::kContrastive, ScoreKind::kEuclidean},
      {"aam-softmax", LossKind::kAamSoftmax, cfg.train.score},
      {"contrastive-center", LossKind::kContrastiveCenter, ScoreKind::kCosine},
      {"pretrain-composite", LossKind::kPretrain, cfg.train.score},
      {"joint-composite", LossKind::kJoint, cfg.train.score},
  };
  double overall = 0.0;
  for (const Case &c : cases) {
    LossConfig lcfg;
    lcfg.score = c.score;
    lcfg.aam = cfg.aam();
    lcfg.weights = cfg.weights();
    double worst = 0.0;
    for (int i = 0; i < kGradCheckInstances; ++i) {
      const std::uint64_t seed =
          derive_seed(cfg.seed, "grad-check-instance",
                      static_cast<std::uint64_t>(i));
      const GradProbe probe = make_probe(cfg, seed);
      worst = std::max(worst, grad_check(probe.params, probe.batch, c.kind,
                                         lcfg, kGradCheckEps, seed));
    }
    overall = std::max(overall, worst);
    std::ostringstream line;
    line.setf(std::ios::scientific);
    line.precision(3);
    line << c.name << " " << worst;
    std::cout << line.str() << "\n";
  }
  if (overall > kGradCheckTol) {
    std::ostringstream msg;
    msg.setf(std::ios::scientific);
    msg.precision(3);
    msg << "gradient check failed: worst relative error " << overall
        << " exceeds " << kGradCheckTol;
    throw CliError(7, msg.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"cluster-guided domain adaptation for speaker embeddings"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::string ckpt_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> k;
  bool curves = false;

  const auto add_common = [&](CLI::App *sub, bool with_out) {
    sub->add_option("--config", config_path, "configuration file");
    sub->add_option("--seed", seed, "root seed override");
    if (with_out) sub->add_option("--out", out_dir, "run directory");
  };
  const auto add_k = [&](CLI::App *sub) {
    sub->add_option("--k", k, "cluster count override");
  };

  CLI::App *gen = app.add_subcommand("gen-data", "generate datasets + trials");
  add_common(gen, true);
  add_k(gen);
  CLI::App *pre = app.add_subcommand("pretrain", "stage 1: joint pre-training");
  add_common(pre, true);
  CLI::App *clu =
      app.add_subcommand("cluster", "stage 2: initial target clustering");
  add_common(clu, true);
  add_k(clu);
  CLI::App *fin = app.add_subcommand(
      "finetune", "stage 3: joint loss with periodic re-clustering");
  add_common(fin, true);
  CLI::App *pseudo =
      app.add_subcommand("pseudo-label", "stage 4: attach pseudo labels");
  add_common(pseudo, true);
  add_k(pseudo);
  CLI::App *fino = app.add_subcommand(
      "train-final", "stage 5: supervised training on the combined classes");
  add_common(fino, true);
  CLI::App *eval =
      app.add_subcommand("evaluate", "score a checkpoint on the trials");
  add_common(eval, true);
  add_k(eval);
  eval->add_option("--ckpt", ckpt_path,
                   "checkpoint to evaluate (default <out>/final.ckpt)");
  eval->add_flag("--emit-curves", curves, "write the FRR/FAR sweep as CSV");
  CLI::App *all =
      app.add_subcommand("run-all", "all five stages plus the baseline");
  add_common(all, true);
  add_k(all);
  all->add_flag("--emit-curves", curves,
                "write per-stage FRR/FAR sweeps as CSV");
  CLI::App *grad = app.add_subcommand(
      "grad-check", "finite-difference audit of every loss gradient");
  add_common(grad, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << "ERROR 2 " << e.what() << "\n";
    return 2;
  }

  try {
    const PipelineConfig cfg = resolve_config(config_path, seed, k);
    const RunPaths paths{out_dir};
    if (gen->parsed()) return cmd_gen_data(cfg, paths);
    if (pre->parsed()) return cmd_pretrain(cfg, paths);
    if (clu->parsed()) return cmd_cluster(cfg, paths);
    if (fin->parsed()) return cmd_finetune(cfg, paths);
    if (pseudo->parsed()) return cmd_pseudo_label(cfg, paths);
    if (fino->parsed()) return cmd_train_final(cfg, paths);
    if (eval->parsed()) return cmd_evaluate(cfg, paths, ckpt_path, curves);
    if (all->parsed()) return cmd_run_all(cfg, paths, curves);
    if (grad->parsed()) return cmd_grad_check(cfg);
    std::cerr << "ERROR 2 no subcommand selected\n";
    return 2;
  } catch (const CliError &e) {
    std::cerr << "ERROR " << e.code() << " " << e.what() << "\n";
    return e.code();
  } catch (const ConfigError &e) {
    std::cerr << "ERROR 3 " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument &e) {
    std::cerr << "ERROR 3 " << e.what() << "\n";
    return 3;
  } catch (const std::exception &e) {
    std::cerr << "ERROR 5 " << e.what() << "\n";
    return 5;
  }
}
