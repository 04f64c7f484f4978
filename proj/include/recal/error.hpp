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

#include <stdexcept>
#include <string>
#include <string_view>

namespace recal {

enum class ErrorKind {
  kConfig,
  kData,
  kNumeric,
  kIo,
  kMissingGroups,
};

// All library failures carry the module that raised them so the CLI can
// report origin and map the kind onto an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string_view module, const std::string& what)
      : std::runtime_error("[" + std::string(module) + "] " + what),
        kind_(kind),
        module_(module) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorKind kind_;
  std::string module_;
};

namespace detail {

[[noreturn]] inline void fail(ErrorKind kind, std::string_view module,
                              const std::string& what) {
  throw Error(kind, module, what);
}

inline void require(bool cond, ErrorKind kind, std::string_view module,
                    const std::string& what) {
  if (!cond) fail(kind, module, what);
}

}  // namespace detail
}  // namespace recal
