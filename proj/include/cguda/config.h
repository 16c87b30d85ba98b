// cguda/config.h

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

#ifndef CGUDA_CONFIG_H_
#define CGUDA_CONFIG_H_

#include <cstdint>
#include <stdexcept>
#include <string>

#include "cguda/losses.h"
#include "cguda/metrics.h"
#include "cguda/types.h"

namespace cguda {

// [data] section: synthetic two-domain generation and trial sampling.
struct DataConfig {
  int n_source_speakers = 64;
  int source_utts_per_speaker = 20;
  int n_target_speakers = 32;
  int target_utts_per_speaker = 20;
  // Held-out target-domain speakers; the trial list is built from these, so
  // verification is never scored on the utterances the adaptation saw.
  int n_eval_speakers = 16;
  int eval_utts_per_speaker = 20;
  int d_in = 40;
  // Rank of the subspace the speaker prototypes span (0 = full input space).
  // Within-speaker noise is full-dimensional either way, so a low rank gives
  // label supervision a noise subspace to learn away.
  int speaker_subspace_rank = 10;
  double within_sigma = 0.15;
  bool apply_shift = true;  // affine domain shift on the target
  double shift_sv_lo = 0.5;
  double shift_sv_hi = 2.0;
  double shift_offset_sigma = 0.1;
  double aug_sigma = 0.15;
  double aug_scale_lo = 0.7;
  double aug_scale_hi = 1.4;
  int n_target_trials = 2000;
  int n_nontarget_trials = 2000;
};

// [model] section.
struct ModelConfig {
  int hidden_dim = 64;
  int n_hidden = 2;
  int d_emb = 16;
  double omega0 = 10.0;
  double b0 = -5.0;
  double lambda0 = 1.0;
};

// [train] section.
struct TrainConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double lr = 0.001;
  double lr_decay = 0.95;  // per-epoch multiplicative decay (5% per epoch)
  int pretrain_epochs = 15;
  int finetune_max_epochs = 30;
  int final_epochs = 15;
  double convergence_tol = 1e-3;  // relative change of epoch-mean center loss
  int convergence_window = 3;
  int batch_supervised = 256;
  int batch_csl = 128;
  double aam_margin = 0.2;
  double aam_scale = 30.0;
  ScoreKind score = ScoreKind::kCosine;
};

// [cluster] section.
struct ClusterConfig {
  int k = 32;
  int recluster_period = 5;  // epochs between re-clustering runs
  int n_init = 5;
  int max_iter = 100;
  double tol = 1e-6;
};

// [metrics] section.
struct MetricsConfig {
  double dcf_p_target = 0.01;
  double dcf_c_miss = 1.0;
  double dcf_c_fa = 1.0;
};

struct PipelineConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  ClusterConfig cluster;
  MetricsConfig metrics;
  std::uint64_t seed = 12345;

  AamConfig aam() const { return {train.aam_margin, train.aam_scale}; }
  LossWeights weights() const { return {train.alpha, train.beta}; }
  DcfParams dcf() const {
    return {metrics.dcf_p_target, metrics.dcf_c_miss, metrics.dcf_c_fa};
  }

  // Throws ConfigError naming the offending key on any invariant violation.
  void validate() const;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string &message)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " +
                                          message
                                    : message),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_ = 0;
};

// Flat "key = value" sections [data] [model] [train] [cluster] [metrics],
// '#' comments. Unknown keys and malformed lines are rejected with their
// line number; missing keys take the defaults above. An empty file yields
// the full default configuration.
PipelineConfig parse_config_text(const std::string &text);
PipelineConfig load_config(const std::string &path);

// Canonical serialization; parse_config_text round-trips it.
std::string config_to_text(const PipelineConfig &cfg);

// FNV-1a hash of the canonical serialization, as "0x..." hex.
std::string config_hash(const PipelineConfig &cfg);

}  // namespace cguda

#endif  // CGUDA_CONFIG_H_
