// cguda/types.h

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

#ifndef CGUDA_TYPES_H_
#define CGUDA_TYPES_H_

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cguda {

// All numerics are double precision; one utterance or embedding per column.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using index_t = Eigen::Index;

// Thrown when a metric is mathematically undefined on the given input
// (e.g. zero within-cluster scatter). Callers that serialize metric values
// map this to an explicit "degenerate" marker.
class DegenerateMetricError : public std::runtime_error {
 public:
  explicit DegenerateMetricError(const std::string &what)
      : std::runtime_error(what) {}
};

}  // namespace cguda

#endif  // CGUDA_TYPES_H_
