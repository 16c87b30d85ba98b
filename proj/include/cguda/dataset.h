// cguda/dataset.h

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

#ifndef CGUDA_DATASET_H_
#define CGUDA_DATASET_H_

#include <cstdint>
#include <string>
#include <vector>

#include "cguda/types.h"

namespace cguda {

enum class Domain { kSource, kTarget };

std::string domain_name(Domain d);
Domain domain_from_name(const std::string &name);

// Fixed-dimension utterance features, one per column. Labels are present for
// the labeled (source) role. hidden_labels carry the target-domain ground
// truth and are read by evaluation code only; no training operation may look
// at them.
struct SpeakerDataset {
  Matrix features;                       // d_in x n
  std::vector<std::int64_t> ids;         // one id per utterance
  std::vector<int> labels;               // empty when the role is unlabeled
  std::vector<int> hidden_labels;        // empty unless target role
  Domain domain = Domain::kSource;

  index_t dim() const { return features.rows(); }
  index_t size() const { return features.cols(); }
  bool has_labels() const { return !labels.empty(); }
  bool has_hidden_labels() const { return !hidden_labels.empty(); }

  // Number of classes implied by labels (max + 1); 0 when unlabeled.
  int num_classes() const;

  // Ground-truth speaker identity for evaluation: labels when present,
  // otherwise hidden_labels. Training code must not call this on an
  // unlabeled dataset.
  const std::vector<int> &truth_labels() const;

  // Copy with hidden_labels removed. Pipeline training stages strip their
  // inputs on entry so the firewall is structural, not a convention.
  SpeakerDataset stripped() const;

  // Throws std::invalid_argument on inconsistent sizes, non-finite features,
  // or labels that are not contiguous from 0.
  void validate() const;
};

struct TrialList {
  std::vector<std::int64_t> id_a;
  std::vector<std::int64_t> id_b;
  std::vector<bool> is_target;

  std::size_t size() const { return is_target.size(); }
};

// Text format, one utterance per row:
//   SPKDATA v1 n=<count> d=<dim> domain=<source|target>
//   <id>,<label|->,<hidden_label|->,<f0>,...,<f_{d-1}>
// Floats are shortest round-trip decimals.
void save_dataset(const std::string &path, const SpeakerDataset &dataset);
SpeakerDataset load_dataset(const std::string &path);

// Text format, one trial per line: "<id_a> <id_b> <target|nontarget>".
void save_trials(const std::string &path, const TrialList &trials);
TrialList load_trials(const std::string &path);

}  // namespace cguda

#endif  // CGUDA_DATASET_H_
