/*
 * Copyright 2026 The gpmil Authors.
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
#include <utility>
#include <vector>

namespace gpmil {

/// Base class for every error raised by the library. `kind()` is a short
/// stable identifier that the command-line tool prints as the error class.
class Error : public std::runtime_error {
 public:
  Error(std::string_view kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  [[nodiscard]] std::string_view kind() const noexcept { return kind_; }

 private:
  std::string_view kind_;
};

#define GPMIL_DEFINE_ERROR(Name, tag)                                    \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(tag, message) {}   \
  }

GPMIL_DEFINE_ERROR(InvalidArgument, "invalid_argument");
GPMIL_DEFINE_ERROR(SingularMatrix, "singular_matrix");
GPMIL_DEFINE_ERROR(NonFinite, "non_finite");
GPMIL_DEFINE_ERROR(ParseError, "parse_error");
GPMIL_DEFINE_ERROR(IoError, "io_error");
GPMIL_DEFINE_ERROR(StratificationError, "stratification_error");
GPMIL_DEFINE_ERROR(ConfigError, "config_error");

#undef GPMIL_DEFINE_ERROR

/// Raised when a matrix cannot be factorized even with the largest jitter.
class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(const std::string& message, std::vector<double> ladder)
      : Error("not_positive_definite", message), ladder_(std::move(ladder)) {}

  /// Jitter values that were attempted, in order.
  [[nodiscard]] const std::vector<double>& attempted_jitter() const noexcept {
    return ladder_;
  }

 private:
  std::vector<double> ladder_;
};

}  // namespace gpmil
