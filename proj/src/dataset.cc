// cguda/dataset.cc

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

#include "cguda/dataset.h"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include "cguda/io_util.h"

namespace cguda {

std::string domain_name(Domain d) {
  return d == Domain::kSource ? "source" : "target";
}

Domain domain_from_name(const std::string &name) {
  if (name == "source") return Domain::kSource;
  if (name == "target") return Domain::kTarget;
  throw std::invalid_argument("unknown domain '" + name + "'");
}

int SpeakerDataset::num_classes() const {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

const std::vector<int> &SpeakerDataset::truth_labels() const {
  if (!labels.empty()) return labels;
  if (!hidden_labels.empty()) return hidden_labels;
  throw std::logic_error("dataset has neither labels nor hidden labels");
}

SpeakerDataset SpeakerDataset::stripped() const {
  SpeakerDataset out = *this;
  out.hidden_labels.clear();
  return out;
}

namespace {

void check_contiguous(const std::vector<int> &labels, const char *what) {
  if (labels.empty()) return;
  std::set<int> distinct(labels.begin(), labels.end());
  if (*distinct.begin() != 0 ||
      *distinct.rbegin() != static_cast<int>(distinct.size()) - 1) {
    throw std::invalid_argument(std::string(what) +
                                " are not contiguous integers from 0");
  }
}

}  // namespace

void SpeakerDataset::validate() const {
  const auto n = static_cast<std::size_t>(features.cols());
  if (features.rows() <= 0 || features.cols() <= 0) {
    throw std::invalid_argument("dataset is empty");
  }
  if (!features.allFinite()) {
    throw std::invalid_argument("dataset features contain NaN/Inf");
  }
  if (ids.size() != n) {
    throw std::invalid_argument("id count does not match utterance count");
  }
  if (!labels.empty() && labels.size() != n) {
    throw std::invalid_argument("label count does not match utterance count");
  }
  if (!hidden_labels.empty() && hidden_labels.size() != n) {
    throw std::invalid_argument(
        "hidden label count does not match utterance count");
  }
  check_contiguous(labels, "labels");
  check_contiguous(hidden_labels, "hidden labels");
  std::set<std::int64_t> distinct_ids(ids.begin(), ids.end());
  if (distinct_ids.size() != n) {
    throw std::invalid_argument("utterance ids are not unique");
  }
}

void save_dataset(const std::string &path, const SpeakerDataset &dataset) {
  dataset.validate();
  std::ostringstream out;
  out << "SPKDATA v1 n=" << dataset.size() << " d=" << dataset.dim()
      << " domain=" << domain_name(dataset.domain) << "\n";
  for (index_t i = 0; i < dataset.size(); ++i) {
    out << dataset.ids[static_cast<std::size_t>(i)] << ',';
    if (dataset.has_labels()) {
      out << dataset.labels[static_cast<std::size_t>(i)];
    } else {
      out << '-';
    }
    out << ',';
    if (dataset.has_hidden_labels()) {
      out << dataset.hidden_labels[static_cast<std::size_t>(i)];
    } else {
      out << '-';
    }
    for (index_t r = 0; r < dataset.dim(); ++r) {
      out << ',' << format_double(dataset.features(r, i));
    }
    out << '\n';
  }
  atomic_write_file(path, out.str());
}

namespace {

std::vector<std::string> split(const std::string &line, char sep) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

[[noreturn]] void fail(const std::string &path, int line,
                       const std::string &msg) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

SpeakerDataset load_dataset(const std::string &path) {
  std::istringstream in(read_file(path));
  std::string header;
  if (!std::getline(in, header)) fail(path, 1, "empty file");
  auto tokens = split(header, ' ');
  if (tokens.size() != 5 || tokens[0] != "SPKDATA" || tokens[1] != "v1" ||
      tokens[2].rfind("n=", 0) != 0 || tokens[3].rfind("d=", 0) != 0 ||
      tokens[4].rfind("domain=", 0) != 0) {
    fail(path, 1, "bad SPKDATA header");
  }
  const auto n = parse_int(std::string_view(tokens[2]).substr(2));
  const auto d = parse_int(std::string_view(tokens[3]).substr(2));
  if (n <= 0 || d <= 0) fail(path, 1, "non-positive n or d");

  SpeakerDataset dataset;
  dataset.domain = domain_from_name(tokens[4].substr(7));
  dataset.features.resize(d, n);
  dataset.ids.reserve(static_cast<std::size_t>(n));

  std::string line;
  for (std::int64_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) fail(path, static_cast<int>(i) + 2, "truncated file");
    auto fields = split(line, ',');
    if (fields.size() != static_cast<std::size_t>(d) + 3) {
      fail(path, static_cast<int>(i) + 2, "wrong field count");
    }
    dataset.ids.push_back(parse_int(fields[0]));
    if (fields[1] != "-") {
      dataset.labels.push_back(static_cast<int>(parse_int(fields[1])));
    } else if (!dataset.labels.empty()) {
      fail(path, static_cast<int>(i) + 2, "mixed labeled/unlabeled rows");
    }
    if (fields[2] != "-") {
      dataset.hidden_labels.push_back(static_cast<int>(parse_int(fields[2])));
    } else if (!dataset.hidden_labels.empty()) {
      fail(path, static_cast<int>(i) + 2, "mixed hidden-label rows");
    }
    for (std::int64_t r = 0; r < d; ++r) {
      dataset.features(r, i) =
          parse_double(fields[static_cast<std::size_t>(r) + 3]);
    }
  }
  dataset.validate();
  return dataset;
}

void save_trials(const std::string &path, const TrialList &trials) {
  std::ostringstream out;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    out << trials.id_a[i] << ' ' << trials.id_b[i] << ' '
        << (trials.is_target[i] ? "target" : "nontarget") << '\n';
  }
  atomic_write_file(path, out.str());
}

TrialList load_trials(const std::string &path) {
  std::istringstream in(read_file(path));
  TrialList trials;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split(line, ' ');
    if (fields.size() != 3) fail(path, lineno, "expected 3 fields");
    trials.id_a.push_back(parse_int(fields[0]));
    trials.id_b.push_back(parse_int(fields[1]));
    if (fields[2] == "target") {
      trials.is_target.push_back(true);
    } else if (fields[2] == "nontarget") {
      trials.is_target.push_back(false);
    } else {
      fail(path, lineno, "expected target|nontarget");
    }
  }
  return trials;
}

}  // namespace cguda
