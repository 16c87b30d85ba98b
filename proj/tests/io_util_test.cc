// tests/io_util_test.cc

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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <vector>

#include "cguda/io_util.h"
#include "cguda/rng.h"
#include "test_util.h"

using namespace cguda;

TEST_SUITE("io_util") {

TEST_CASE("format_double round-trips awkward values bit for bit") {
  const std::vector<double> values = {
      0.0,      -0.0,     1.0,       0.1,       1.0 / 3.0, 0.1 + 0.2,
      -1e-300,  1e308,    2.5e-17,   123456.75, -0.001,    M_PI,
      5e-324,   // smallest subnormal
      1.7976931348623157e308,
  };
  for (double v : values) {
    CAPTURE(v);
    const std::string s = format_double(v);
    const double back = parse_double(s);
    CHECK(std::signbit(back) == std::signbit(v));
    CHECK(back == v);
  }
}

TEST_CASE("format_double is the shortest representation for simple decimals") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(-2.5) == "-2.5");
}

TEST_CASE("strict parsers reject trailing garbage") {
  CHECK_THROWS_AS(parse_double("1.5x"), std::invalid_argument);
  CHECK_THROWS_AS(parse_double(""), std::invalid_argument);
  CHECK_THROWS_AS(parse_double("1.5 "), std::invalid_argument);
  CHECK_THROWS_AS(parse_int("12.5"), std::invalid_argument);
  CHECK_THROWS_AS(parse_int("abc"), std::invalid_argument);
  CHECK_THROWS_AS(parse_uint("-3"), std::invalid_argument);
  CHECK(parse_int("-42") == -42);
  CHECK(parse_uint("18446744073709551615") == 18446744073709551615ULL);
  CHECK(parse_double("-2.5e-3") == -2.5e-3);
}

TEST_CASE("atomic_write_file persists content and leaves no temp file") {
  cguda_test::TempDir dir("cguda-io");
  const std::string path = dir.file("out.txt");
  atomic_write_file(path, "hello\nworld\n");
  CHECK(read_file(path) == "hello\nworld\n");
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
  // Overwrite goes through the same temp-then-rename path.
  atomic_write_file(path, "second");
  CHECK(read_file(path) == "second");
}

TEST_CASE("read_file on a missing path throws") {
  CHECK_THROWS_AS(read_file("/nonexistent/definitely/missing.txt"),
                  std::runtime_error);
}

TEST_CASE("prng is reproducible and streams are independent") {
  Prng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t va = a.next_u64();
    all_equal = all_equal && (va == b.next_u64());
    any_diff = any_diff || (va != c.next_u64());
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("derive_seed separates tags and indices") {
  const std::uint64_t root = 12345;
  std::set<std::uint64_t> seen;
  seen.insert(derive_seed(root, "alpha"));
  seen.insert(derive_seed(root, "beta"));
  seen.insert(derive_seed(root, "alpha", 1));
  seen.insert(derive_seed(root, "alpha", 2));
  seen.insert(derive_seed(root + 1, "alpha"));
  CHECK(seen.size() == 5);
  CHECK(derive_seed(root, "alpha") == derive_seed(root, "alpha", 0));
}

TEST_CASE("uniform stays in [0, 1) and hits both halves") {
  Prng rng(7);
  bool low = false, high = false;
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    (u < 0.5 ? low : high) = true;
  }
  CHECK(low);
  CHECK(high);
}

TEST_CASE("uniform_int covers the full range without bias artifacts") {
  Prng rng(11);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) {
    const std::int64_t v = rng.uniform_int(5);
    REQUIRE(v >= 0);
    REQUIRE(v < 5);
    ++counts[static_cast<std::size_t>(v)];
  }
  for (int c : counts) CHECK(c > 800);  // expectation 1000 each
}

TEST_CASE("normal draws have plausible first two moments") {
  Prng rng(5);
  double sum = 0.0, sum2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("normal_matrix fills in column-major order") {
  Prng a(99), b(99);
  const Matrix m = a.normal_matrix(3, 2);
  for (index_t j = 0; j < 2; ++j) {
    for (index_t i = 0; i < 3; ++i) {
      CHECK(m(i, j) == b.normal());
    }
  }
}

TEST_CASE("shuffle is a seeded permutation") {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
  std::vector<int> w = v;
  Prng a(3), b(3);
  a.shuffle(v);
  b.shuffle(w);
  CHECK(v == w);
  std::set<int> elements(v.begin(), v.end());
  CHECK(elements.size() == 50);
  Prng c(4);
  std::vector<int> u = w;
  c.shuffle(u);
  CHECK(u != v);  // different seed, different order
}

}  // TEST_SUITE("io_util")
