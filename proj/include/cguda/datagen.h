// cguda/datagen.h

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

#ifndef CGUDA_DATAGEN_H_
#define CGUDA_DATAGEN_H_

#include <cstdint>
#include <optional>

#include "cguda/dataset.h"
#include "cguda/rng.h"
#include "cguda/types.h"

namespace cguda {

// Fixed affine map x -> matrix * x + offset applied to every utterance of a
// domain. Stands in for a systematic channel mismatch between corpora.
struct AffineShift {
  Matrix matrix;
  Vector offset;
};

// Random channel mismatch: matrix = diag(s) with s log-uniform in
// [sv_lo, sv_hi], offset ~ N(0, offset_sigma^2 I). Per-coefficient gain is
// the natural mismatch model for spectral features, where a recording chain
// multiplies each band by its own response.
AffineShift make_random_shift(index_t dim, double sv_lo, double sv_hi,
                              double offset_sigma, std::uint64_t seed);

struct GenConfig {
  int n_speakers = 64;
  int utts_per_speaker = 20;
  int d_in = 40;
  // Prototypes are drawn inside the leading speaker_subspace_rank input
  // coordinates (0 = span the full input space). Within-speaker noise always
  // spans all d_in dimensions, so a low-rank speaker space leaves a noise
  // subspace that a learned map can profitably suppress.
  int speaker_subspace_rank = 0;
  double within_speaker_sigma = 0.15;
  std::optional<AffineShift> domain_shift;  // absent = identity
  double aug_sigma = 0.1;
  double aug_scale_lo = 0.8;  // per-view channel gain range
  double aug_scale_hi = 1.25;
  std::uint64_t seed = 0;
  std::int64_t id_base = 0;   // first utterance id; keeps domains disjoint

  void validate() const;  // throws std::invalid_argument
};

// Two stochastic augmentations of one utterance; the positive pair for the
// contrastive loss.
struct SegmentPair {
  Vector view_a;
  Vector view_b;
  std::int64_t source_index = 0;
};

// Each speaker gets a unit-norm prototype (confined to the leading
// speaker_subspace_rank coordinates when that is set); utterance =
// shift(prototype + N(0, sigma^2 I)). Labels stay visible for the source
// role and move to hidden_labels for the target role.
SpeakerDataset generate_domain(const GenConfig &cfg, Domain role);

// One augmented pair: per-view channel gains drawn elementwise from
// [aug_scale_lo, aug_scale_hi] (an independent gain per coefficient, the
// same family of distortion as the domain shift), plus N(0, aug_sigma^2)
// per element.
SegmentPair sample_segment_pair(const SpeakerDataset &dataset, index_t index,
                                const GenConfig &aug, Prng &rng);

// Seeded same-speaker / different-speaker pairs with ground-truth flags.
// Never pairs an utterance with itself. Throws when the requested counts
// cannot be satisfied.
TrialList make_trials(const SpeakerDataset &dataset, int n_target_trials,
                      int n_nontarget_trials, std::uint64_t seed);

}  // namespace cguda

#endif  // CGUDA_DATAGEN_H_
