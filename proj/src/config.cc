// cguda/config.cc

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

#include "cguda/config.h"

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "cguda/io_util.h"
#include "cguda/rng.h"

namespace cguda {

namespace {

int checked_int(const std::string &value) {
  const std::int64_t v = parse_int(value);
  if (v < std::numeric_limits<int>::min() ||
      v > std::numeric_limits<int>::max()) {
    throw std::invalid_argument("integer out of range");
  }
  return static_cast<int>(v);
}

bool checked_bool(const std::string &value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw std::invalid_argument("expected 'true' or 'false'");
}

ScoreKind checked_score(const std::string &value) {
  if (value == "cosine") return ScoreKind::kCosine;
  if (value == "euclidean") return ScoreKind::kEuclidean;
  throw std::invalid_argument("expected 'cosine' or 'euclidean'");
}

// One entry per configuration key; the same table drives parsing, the
// canonical serialization, and key naming in error messages. The section of
// the `seed` key is "" (it lives above the first section header).
struct KeyDef {
  const char *section;
  const char *key;
  void (*set)(PipelineConfig &, const std::string &);
  std::string (*get)(const PipelineConfig &);
};

#define CGUDA_INT_KEY(sec, name, field)                                     \
  KeyDef {                                                                  \
    sec, name,                                                              \
        [](PipelineConfig &c, const std::string &v) { c.field = checked_int(v); }, \
        [](const PipelineConfig &c) { return std::to_string(c.field); }     \
  }
#define CGUDA_DBL_KEY(sec, name, field)                                     \
  KeyDef {                                                                  \
    sec, name,                                                              \
        [](PipelineConfig &c, const std::string &v) { c.field = parse_double(v); }, \
        [](const PipelineConfig &c) { return format_double(c.field); }      \
  }
#define CGUDA_BOOL_KEY(sec, name, field)                                    \
  KeyDef {                                                                  \
    sec, name,                                                              \
        [](PipelineConfig &c, const std::string &v) { c.field = checked_bool(v); }, \
        [](const PipelineConfig &c) {                                       \
          return std::string(c.field ? "true" : "false");                   \
        }                                                                   \
  }

const std::vector<KeyDef> &registry() {
  static const std::vector<KeyDef> defs = {
      KeyDef{"", "seed",
             [](PipelineConfig &c, const std::string &v) {
               c.seed = parse_uint(v);
             },
             [](const PipelineConfig &c) { return std::to_string(c.seed); }},
      CGUDA_INT_KEY("data", "n_source_speakers", data.n_source_speakers),
      CGUDA_INT_KEY("data", "source_utts_per_speaker",
                    data.source_utts_per_speaker),
      CGUDA_INT_KEY("data", "n_target_speakers", data.n_target_speakers),
      CGUDA_INT_KEY("data", "target_utts_per_speaker",
                    data.target_utts_per_speaker),
      CGUDA_INT_KEY("data", "n_eval_speakers", data.n_eval_speakers),
      CGUDA_INT_KEY("data", "eval_utts_per_speaker",
                    data.eval_utts_per_speaker),
      CGUDA_INT_KEY("data", "d_in", data.d_in),
      CGUDA_INT_KEY("data", "speaker_subspace_rank",
                    data.speaker_subspace_rank),
      CGUDA_DBL_KEY("data", "within_sigma", data.within_sigma),
      CGUDA_BOOL_KEY("data", "apply_shift", data.apply_shift),
      CGUDA_DBL_KEY("data", "shift_sv_lo", data.shift_sv_lo),
      CGUDA_DBL_KEY("data", "shift_sv_hi", data.shift_sv_hi),
      CGUDA_DBL_KEY("data", "shift_offset_sigma", data.shift_offset_sigma),
      CGUDA_DBL_KEY("data", "aug_sigma", data.aug_sigma),
      CGUDA_DBL_KEY("data", "aug_scale_lo", data.aug_scale_lo),
      CGUDA_DBL_KEY("data", "aug_scale_hi", data.aug_scale_hi),
      CGUDA_INT_KEY("data", "n_target_trials", data.n_target_trials),
      CGUDA_INT_KEY("data", "n_nontarget_trials", data.n_nontarget_trials),
      CGUDA_INT_KEY("model", "hidden_dim", model.hidden_dim),
      CGUDA_INT_KEY("model", "n_hidden", model.n_hidden),
      CGUDA_INT_KEY("model", "d_emb", model.d_emb),
      CGUDA_DBL_KEY("model", "omega0", model.omega0),
      CGUDA_DBL_KEY("model", "b0", model.b0),
      CGUDA_DBL_KEY("model", "lambda0", model.lambda0),
      CGUDA_DBL_KEY("train", "alpha", train.alpha),
      CGUDA_DBL_KEY("train", "beta", train.beta),
      CGUDA_DBL_KEY("train", "lr", train.lr),
      CGUDA_DBL_KEY("train", "lr_decay", train.lr_decay),
      CGUDA_INT_KEY("train", "pretrain_epochs", train.pretrain_epochs),
      CGUDA_INT_KEY("train", "finetune_max_epochs", train.finetune_max_epochs),
      CGUDA_INT_KEY("train", "final_epochs", train.final_epochs),
      CGUDA_DBL_KEY("train", "convergence_tol", train.convergence_tol),
      CGUDA_INT_KEY("train", "convergence_window", train.convergence_window),
      CGUDA_INT_KEY("train", "batch_supervised", train.batch_supervised),
      CGUDA_INT_KEY("train", "batch_csl", train.batch_csl),
      CGUDA_DBL_KEY("train", "aam_margin", train.aam_margin),
      CGUDA_DBL_KEY("train", "aam_scale", train.aam_scale),
      KeyDef{"train", "score",
             [](PipelineConfig &c, const std::string &v) {
               c.train.score = checked_score(v);
             },
             [](const PipelineConfig &c) {
               return std::string(c.train.score == ScoreKind::kCosine
                                      ? "cosine"
                                      : "euclidean");
             }},
      CGUDA_INT_KEY("cluster", "k", cluster.k),
      CGUDA_INT_KEY("cluster", "recluster_period", cluster.recluster_period),
      CGUDA_INT_KEY("cluster", "n_init", cluster.n_init),
      CGUDA_INT_KEY("cluster", "max_iter", cluster.max_iter),
      CGUDA_DBL_KEY("cluster", "tol", cluster.tol),
      CGUDA_DBL_KEY("metrics", "dcf_p_target", metrics.dcf_p_target),
      CGUDA_DBL_KEY("metrics", "dcf_c_miss", metrics.dcf_c_miss),
      CGUDA_DBL_KEY("metrics", "dcf_c_fa", metrics.dcf_c_fa),
  };
  return defs;
}

#undef CGUDA_INT_KEY
#undef CGUDA_DBL_KEY
#undef CGUDA_BOOL_KEY

std::string trim(const std::string &s) {
  std::size_t begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  std::size_t end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

bool known_section(const std::string &name) {
  for (const KeyDef &def : registry()) {
    if (name == def.section) return true;
  }
  return false;
}

}  // namespace

PipelineConfig parse_config_text(const std::string &text) {
  PipelineConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(line_no, "unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty() || !known_section(section)) {
        throw ConfigError(line_no, "unknown section '" + section + "'");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(line_no, "expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(line_no, "missing key before '='");
    const KeyDef *found = nullptr;
    for (const KeyDef &def : registry()) {
      if (section == def.section && key == def.key) {
        found = &def;
        break;
      }
    }
    if (found == nullptr) {
      const std::string qualified =
          section.empty() ? key : section + "." + key;
      throw ConfigError(line_no, "unknown key '" + qualified + "'");
    }
    try {
      found->set(cfg, value);
    } catch (const std::invalid_argument &e) {
      throw ConfigError(line_no, "bad value for '" + key + "': " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::string &path) {
  try {
    return parse_config_text(read_file(path));
  } catch (const ConfigError &e) {
    throw ConfigError(e.line(), path + ": " + e.what());
  }
}

std::string config_to_text(const PipelineConfig &cfg) {
  std::string out;
  std::string section;  // keys with the empty section go above any header
  for (const KeyDef &def : registry()) {
    if (section != def.section) {
      section = def.section;
      out += "\n[" + section + "]\n";
    }
    out += std::string(def.key) + " = " + def.get(cfg) + "\n";
  }
  return out;
}

std::string config_hash(const PipelineConfig &cfg) {
  const std::uint64_t h = fnv1a64(config_to_text(cfg));
  char buf[17];
  for (int i = 0; i < 16; ++i) {
    buf[15 - i] = "0123456789abcdef"[(h >> (4 * i)) & 0xf];
  }
  buf[16] = '\0';
  return std::string("0x") + buf;
}

namespace {

[[noreturn]] void bad(const std::string &key, const std::string &why) {
  throw ConfigError(0, "config key " + key + " " + why);
}

}  // namespace

void PipelineConfig::validate() const {
  if (data.n_source_speakers < 1) bad("data.n_source_speakers", "must be >= 1");
  if (data.source_utts_per_speaker < 1) {
    bad("data.source_utts_per_speaker", "must be >= 1");
  }
  if (data.n_target_speakers < 2) bad("data.n_target_speakers", "must be >= 2");
  if (data.target_utts_per_speaker < 2) {
    bad("data.target_utts_per_speaker", "must be >= 2");
  }
  if (data.n_eval_speakers < 2) bad("data.n_eval_speakers", "must be >= 2");
  if (data.eval_utts_per_speaker < 2) {
    bad("data.eval_utts_per_speaker", "must be >= 2");
  }
  if (data.d_in < 1) bad("data.d_in", "must be >= 1");
  if (data.speaker_subspace_rank < 0 || data.speaker_subspace_rank > data.d_in) {
    bad("data.speaker_subspace_rank", "must be in [0, d_in]");
  }
  if (!(data.within_sigma > 0)) bad("data.within_sigma", "must be > 0");
  if (!(data.shift_sv_lo > 0)) bad("data.shift_sv_lo", "must be > 0");
  if (!(data.shift_sv_hi >= data.shift_sv_lo)) {
    bad("data.shift_sv_hi", "must be >= data.shift_sv_lo");
  }
  if (!(data.shift_offset_sigma >= 0)) {
    bad("data.shift_offset_sigma", "must be >= 0");
  }
  if (!(data.aug_sigma >= 0)) bad("data.aug_sigma", "must be >= 0");
  if (!(data.aug_scale_lo > 0)) bad("data.aug_scale_lo", "must be > 0");
  if (!(data.aug_scale_hi >= data.aug_scale_lo)) {
    bad("data.aug_scale_hi", "must be >= data.aug_scale_lo");
  }
  if (data.n_target_trials < 1) bad("data.n_target_trials", "must be >= 1");
  if (data.n_nontarget_trials < 1) {
    bad("data.n_nontarget_trials", "must be >= 1");
  }
  if (model.hidden_dim < 1) bad("model.hidden_dim", "must be >= 1");
  if (model.n_hidden < 1) bad("model.n_hidden", "must be >= 1");
  if (model.d_emb < 1) bad("model.d_emb", "must be >= 1");
  if (!(model.lambda0 > 0)) bad("model.lambda0", "must be > 0");
  if (!(train.alpha >= 0)) bad("train.alpha", "must be >= 0");
  if (!(train.beta >= 0)) bad("train.beta", "must be >= 0");
  if (!(train.lr > 0)) bad("train.lr", "must be > 0");
  if (!(train.lr_decay > 0) || train.lr_decay > 1) {
    bad("train.lr_decay", "must be in (0, 1]");
  }
  if (train.pretrain_epochs < 1) bad("train.pretrain_epochs", "must be >= 1");
  if (train.finetune_max_epochs < 1) {
    bad("train.finetune_max_epochs", "must be >= 1");
  }
  if (train.final_epochs < 1) bad("train.final_epochs", "must be >= 1");
  if (!(train.convergence_tol > 0)) {
    bad("train.convergence_tol", "must be > 0");
  }
  if (train.convergence_window < 1) {
    bad("train.convergence_window", "must be >= 1");
  }
  if (train.batch_supervised < 1) bad("train.batch_supervised", "must be >= 1");
  if (train.batch_csl < 1) bad("train.batch_csl", "must be >= 1");
  if (!(train.aam_margin >= 0) || !(train.aam_margin < M_PI_2)) {
    bad("train.aam_margin", "must be in [0, pi/2)");
  }
  if (!(train.aam_scale > 0)) bad("train.aam_scale", "must be > 0");
  if (cluster.k < 1) bad("cluster.k", "must be >= 1");
  const long long n_target_utts =
      static_cast<long long>(data.n_target_speakers) *
      data.target_utts_per_speaker;
  if (cluster.k > n_target_utts) {
    bad("cluster.k", "must not exceed the number of target utterances");
  }
  if (cluster.recluster_period < 1) {
    bad("cluster.recluster_period", "must be >= 1");
  }
  if (cluster.n_init < 1) bad("cluster.n_init", "must be >= 1");
  if (cluster.max_iter < 1) bad("cluster.max_iter", "must be >= 1");
  if (!(cluster.tol >= 0)) bad("cluster.tol", "must be >= 0");
  if (!(metrics.dcf_p_target > 0) || !(metrics.dcf_p_target < 1)) {
    bad("metrics.dcf_p_target", "must be in (0, 1)");
  }
  if (!(metrics.dcf_c_miss > 0)) bad("metrics.dcf_c_miss", "must be > 0");
  if (!(metrics.dcf_c_fa > 0)) bad("metrics.dcf_c_fa", "must be > 0");
}

}  // namespace cguda
