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

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

#include <Eigen/Dense>

namespace gpmil {

/// Deterministic random source. Everything that consumes randomness draws
/// through this class so results are reproducible across standard libraries:
/// only the raw 64-bit Mersenne Twister stream is taken from <random>, the
/// distributions are implemented here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on (0, 1], 53 bits of resolution.
  double uniform_open0();

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi);

  /// Uniform integer on [lo, hi], unbiased (rejection sampling).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Standard normal via the Box-Muller transform; the second variate of each
  /// pair is cached and returned by the following call.
  double normal();

  /// Row-major fill of a rows x cols matrix with standard normals.
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent stream seed from a root seed and a stream name
/// ("data", "init", "sampling", "shuffle", ...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

}  // namespace gpmil
