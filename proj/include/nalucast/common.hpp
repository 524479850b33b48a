/*
 * Copyright 2026 The nalucast authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nalucast {

/// Base error for the whole library. Messages are prefixed with the module
/// that raised them ("tensor: ...", "data: ...") so CLI output stays
/// attributable.
class Error : public std::runtime_error {
 public:
  Error(std::string_view module, std::string_view message)
      : std::runtime_error(std::string(module) + ": " + std::string(message)),
        module_(module) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

/// Raised when tensor extents do not line up (matmul, zip, reshape, layers).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when a training loss leaves the finite range.
class DivergenceError : public Error {
 public:
  DivergenceError(std::string_view message, long long iteration)
      : Error("training", message), iteration_(iteration) {}

  long long iteration() const noexcept { return iteration_; }

 private:
  long long iteration_;
};

/// Formats a double with enough digits to round-trip exactly.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace nalucast
