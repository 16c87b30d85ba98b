// cguda/io_util.h

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

#ifndef CGUDA_IO_UTIL_H_
#define CGUDA_IO_UTIL_H_

#include <cstdint>
#include <string>
#include <string_view>

namespace cguda {

// Shortest decimal that round-trips to the same double.
std::string format_double(double value);

// Strict parse of a full token; throws std::invalid_argument on trailing
// garbage or non-finite syntax errors.
double parse_double(std::string_view token);
std::int64_t parse_int(std::string_view token);
std::uint64_t parse_uint(std::string_view token);

std::string read_file(const std::string &path);

// Write-temp-then-rename so a crash never leaves a half-written artifact.
void atomic_write_file(const std::string &path, std::string_view content);

}  // namespace cguda

#endif  // CGUDA_IO_UTIL_H_
