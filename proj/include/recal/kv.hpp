/*
 * Copyright 2026 The recal Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Line-oriented `key = value` text, shared by dataset sidecars, metrics
// reports, calibration-set exports and experiment configs.

#include <charconv>
#include <cstdint>
#include <system_error>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "recal/error.hpp"

namespace recal::kv {

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
};

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

// Blank lines and lines starting with '#' are skipped.
inline std::vector<Entry> parse(std::istream& in, std::string_view module) {
  std::vector<Entry> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      detail::fail(ErrorKind::kConfig, module,
                   "line " + std::to_string(n) + ": expected `key = value`");
    }
    Entry e{trim(std::string_view(t).substr(0, eq)),
            trim(std::string_view(t).substr(eq + 1)), n};
    if (e.key.empty()) {
      detail::fail(ErrorKind::kConfig, module,
                   "line " + std::to_string(n) + ": empty key");
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<Entry> parse_file(const std::string& path,
                                     std::string_view module) {
  std::ifstream in(path);
  if (!in) detail::fail(ErrorKind::kIo, module, "cannot open " + path);
  return parse(in, module);
}

inline void write(std::ostream& out,
                  const std::vector<std::pair<std::string, std::string>>& kvs) {
  for (const auto& [k, v] : kvs) out << k << " = " << v << '\n';
}

inline void write_file(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& kvs,
                       std::string_view module) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) detail::fail(ErrorKind::kIo, module, "cannot write " + path);
  write(out, kvs);
  if (!out) detail::fail(ErrorKind::kIo, module, "write failed: " + path);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename Range>
std::string join(const Range& items, std::string_view sep) {
  std::ostringstream os;
  bool first = true;
  for (const auto& x : items) {
    if (!first) os << sep;
    os << x;
    first = false;
  }
  return os.str();
}

/// Shortest text that parses back to exactly `x`; locale-independent.
inline std::string format_real(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

/// Parses the whole of `s` as a real number; throws kConfig naming `key`.
inline double parse_real(std::string_view s, std::string_view key, std::string_view module) {
  double x = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    detail::fail(ErrorKind::kConfig, module,
                 std::string(key) + ": expected a number, got '" + std::string(s) + "'");
  }
  return x;
}

inline std::uint64_t parse_uint(std::string_view s, std::string_view key, std::string_view module) {
  std::uint64_t x = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (s.empty() || r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    detail::fail(ErrorKind::kConfig, module,
                 std::string(key) + ": expected a non-negative integer, got '" + std::string(s) + "'");
  }
  return x;
}

inline bool parse_bool(std::string_view s, std::string_view key, std::string_view module) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  detail::fail(ErrorKind::kConfig, module,
               std::string(key) + ": expected true or false, got '" + std::string(s) + "'");
}

}  // namespace recal::kv
