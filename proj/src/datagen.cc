// cguda/datagen.cc

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

#include "cguda/datagen.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace cguda {

AffineShift make_random_shift(index_t dim, double sv_lo, double sv_hi,
                              double offset_sigma, std::uint64_t seed) {
  if (sv_lo <= 0 || sv_hi < sv_lo) {
    throw std::invalid_argument("singular value range must be 0 < lo <= hi");
  }
  Prng rng(seed);
  Vector sv(dim);
  const double log_lo = std::log(sv_lo), log_hi = std::log(sv_hi);
  for (index_t i = 0; i < dim; ++i) {
    sv[i] = std::exp(rng.uniform(log_lo, log_hi));
  }
  AffineShift shift;
  shift.matrix = Matrix(sv.asDiagonal());
  shift.offset = offset_sigma * rng.normal_vector(dim);
  return shift;
}

void GenConfig::validate() const {
  if (n_speakers <= 0) throw std::invalid_argument("n_speakers must be > 0");
  if (utts_per_speaker <= 0) {
    throw std::invalid_argument("utts_per_speaker must be > 0");
  }
  if (d_in <= 0) throw std::invalid_argument("d_in must be > 0");
  if (speaker_subspace_rank < 0 || speaker_subspace_rank > d_in) {
    throw std::invalid_argument(
        "speaker_subspace_rank must be in [0, d_in]");
  }
  if (within_speaker_sigma < 0) {
    throw std::invalid_argument("within_speaker_sigma must be >= 0");
  }
  if (aug_sigma < 0) throw std::invalid_argument("aug_sigma must be >= 0");
  if (aug_scale_lo <= 0 || aug_scale_hi < aug_scale_lo) {
    throw std::invalid_argument("aug scale range must be 0 < lo <= hi");
  }
  if (domain_shift) {
    if (domain_shift->matrix.rows() != d_in ||
        domain_shift->matrix.cols() != d_in ||
        domain_shift->offset.size() != d_in) {
      throw std::invalid_argument("domain shift dimensions do not match d_in");
    }
  }
}

SpeakerDataset generate_domain(const GenConfig &cfg, Domain role) {
  cfg.validate();
  Prng rng(cfg.seed);
  const index_t d = cfg.d_in;
  const index_t n = static_cast<index_t>(cfg.n_speakers) * cfg.utts_per_speaker;

  // Unit-norm speaker prototypes, optionally confined to the leading
  // coordinates. Noise is added across all dimensions later, so the trailing
  // coordinates carry nothing but noise when a rank is set.
  const index_t rank =
      (cfg.speaker_subspace_rank > 0 &&
       cfg.speaker_subspace_rank < cfg.d_in)
          ? cfg.speaker_subspace_rank
          : d;
  Matrix prototypes = Matrix::Zero(d, cfg.n_speakers);
  for (int s = 0; s < cfg.n_speakers; ++s) {
    Vector p = rng.normal_vector(rank);
    double norm = p.norm();
    while (norm < 1e-12) {  // essentially impossible, but stay well-defined
      p = rng.normal_vector(rank);
      norm = p.norm();
    }
    prototypes.col(s).head(rank) = p / norm;
  }

  SpeakerDataset dataset;
  dataset.domain = role;
  dataset.features.resize(d, n);
  std::vector<int> speaker_of(static_cast<std::size_t>(n));
  index_t col = 0;
  for (int s = 0; s < cfg.n_speakers; ++s) {
    for (int u = 0; u < cfg.utts_per_speaker; ++u, ++col) {
      Vector x = prototypes.col(s);
      if (cfg.within_speaker_sigma > 0) {
        x += cfg.within_speaker_sigma * rng.normal_vector(d);
      }
      if (cfg.domain_shift) {
        x = cfg.domain_shift->matrix * x + cfg.domain_shift->offset;
      }
      dataset.features.col(col) = x;
      speaker_of[static_cast<std::size_t>(col)] = s;
      dataset.ids.push_back(cfg.id_base + col);
    }
  }
  if (role == Domain::kSource) {
    dataset.labels = std::move(speaker_of);
  } else {
    dataset.hidden_labels = std::move(speaker_of);
  }
  dataset.validate();
  return dataset;
}

SegmentPair sample_segment_pair(const SpeakerDataset &dataset, index_t index,
                                const GenConfig &aug, Prng &rng) {
  if (index < 0 || index >= dataset.size()) {
    throw std::out_of_range("utterance index out of range");
  }
  const Vector utterance = dataset.features.col(index);
  SegmentPair pair;
  pair.source_index = index;
  auto augment = [&]() {
    Vector view(utterance.size());
    for (index_t i = 0; i < utterance.size(); ++i) {
      view[i] = rng.uniform(aug.aug_scale_lo, aug.aug_scale_hi) * utterance[i];
    }
    if (aug.aug_sigma > 0) {
      view += aug.aug_sigma * rng.normal_vector(utterance.size());
    }
    return view;
  };
  pair.view_a = augment();
  pair.view_b = augment();
  return pair;
}

TrialList make_trials(const SpeakerDataset &dataset, int n_target_trials,
                      int n_nontarget_trials, std::uint64_t seed) {
  if (n_target_trials < 0 || n_nontarget_trials < 0) {
    throw std::invalid_argument("trial counts must be >= 0");
  }
  const std::vector<int> &labels = dataset.truth_labels();
  const int n_classes =
      *std::max_element(labels.begin(), labels.end()) + 1;

  // Utterance indices per speaker, in dataset order.
  std::vector<std::vector<index_t>> by_speaker(
      static_cast<std::size_t>(n_classes));
  for (index_t i = 0; i < dataset.size(); ++i) {
    by_speaker[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]
        .push_back(i);
  }
  std::vector<int> multi_speakers;
  for (int s = 0; s < n_classes; ++s) {
    if (by_speaker[static_cast<std::size_t>(s)].size() >= 2) {
      multi_speakers.push_back(s);
    }
  }
  if (n_classes < 2 && n_nontarget_trials > 0) {
    throw std::invalid_argument("nontarget trials need >= 2 speakers");
  }
  if (multi_speakers.empty() && n_target_trials > 0) {
    throw std::invalid_argument(
        "target trials need a speaker with >= 2 utterances");
  }

  Prng rng(seed);
  TrialList trials;
  auto add = [&](index_t a, index_t b, bool is_target) {
    trials.id_a.push_back(dataset.ids[static_cast<std::size_t>(a)]);
    trials.id_b.push_back(dataset.ids[static_cast<std::size_t>(b)]);
    trials.is_target.push_back(is_target);
  };
  for (int t = 0; t < n_target_trials; ++t) {
    const int s = multi_speakers[static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(multi_speakers.size())))];
    const auto &utts = by_speaker[static_cast<std::size_t>(s)];
    const auto i = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(utts.size())));
    auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(utts.size() - 1)));
    if (j >= i) ++j;
    add(utts[i], utts[j], true);
  }
  for (int t = 0; t < n_nontarget_trials; ++t) {
    for (;;) {
      const auto a = static_cast<index_t>(rng.uniform_int(dataset.size()));
      const auto b = static_cast<index_t>(rng.uniform_int(dataset.size()));
      if (labels[static_cast<std::size_t>(a)] !=
          labels[static_cast<std::size_t>(b)]) {
        add(a, b, false);
        break;
      }
    }
  }
  return trials;
}

}  // namespace cguda
