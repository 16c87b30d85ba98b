// cguda/rng.h

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

#ifndef CGUDA_RNG_H_
#define CGUDA_RNG_H_

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "cguda/types.h"

namespace cguda {

inline std::uint64_t splitmix64(std::uint64_t &state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Expands one root seed into independent per-stage streams. Streams are
// addressed by (tag, index), so adding a new stage or an extra draw in one
// stage never perturbs the randomness of the others.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                                 std::uint64_t index = 0) {
  std::uint64_t s = root ^ fnv1a64(tag);
  s += index * 0x9e3779b97f4a7c15ULL;
  splitmix64(s);
  return splitmix64(s);
}

// Deterministic PRNG wrapper. All conversions from raw 64-bit output to
// doubles and bounded integers are spelled out here rather than delegated to
// std::*_distribution, whose algorithms are implementation-defined; this way
// a (seed, call sequence) pair fixes every draw bit-for-bit.
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform in [0, n), unbiased via rejection.
  std::int64_t uniform_int(std::int64_t n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t threshold = (0 - un) % un;
    for (;;) {
      std::uint64_t x = next_u64();
      if (x >= threshold) return static_cast<std::int64_t>(x % un);
    }
  }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Vector normal_vector(index_t n) {
    Vector v(n);
    for (index_t i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Matrix normal_matrix(index_t rows, index_t cols) {
    Matrix m(rows, cols);
    // Column-major fill order, matching Eigen's storage.
    for (index_t j = 0; j < cols; ++j)
      for (index_t i = 0; i < rows; ++i) m(i, j) = normal();
    return m;
  }

  // Fisher-Yates; std::shuffle is not used because its draw pattern is
  // implementation-defined.
  template <typename T>
  void shuffle(std::vector<T> &v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cguda

#endif  // CGUDA_RNG_H_
