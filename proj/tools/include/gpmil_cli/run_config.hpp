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
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <gpmil/data.hpp>
#include <gpmil/trainer.hpp>

namespace gpmil::cli {

struct DataOptions {
  std::size_t n_bags = 300;
  Index k_min = 20;
  Index k_max = 50;
  Index dim = 16;
  int n_classes = 2;
  double separation = 3.0;  ///< distance of each positive cluster from the origin
  double cluster_std = 1.0;
  double fraction_lo = 0.05;
  double fraction_hi = 0.2;
  std::array<double, 3> split{200.0 / 300.0, 40.0 / 300.0, 60.0 / 300.0};
};

struct EvalSettings {
  Index n_samples = 32;
  int n_bins = 15;
  std::size_t top_k = 5;
};

struct AblationGrid {
  std::vector<bool> use_lm{true, false};
  std::vector<Normalization> normalization{Normalization::kSigmoid,
                                           Normalization::kSoftmax};
  std::vector<bool> diag_only{true};
  std::vector<Index> num_inducing{16, 80};
  int n_seeds = 5;
};

/// Everything a run needs. Layout on disk:
///   {"seed": .., "model": "sgpmil"|"gated_attention",
///    "data": {..}, "train": {..}, "eval": {..}, "ablate": {..}}
/// Missing keys keep their current value; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string model = "sgpmil";
  DataOptions data;
  TrainConfig train;
  EvalSettings eval;
  AblationGrid ablate;

  void validate() const;
};

/// Overlays the JSON document `text` onto `base`. Throws ConfigError.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
/// Fully resolved document; parse_config(to_json(c)) reproduces c.
std::string to_json(const RunConfig& config);
void write_config(const RunConfig& config, const std::filesystem::path& path);

SyntheticSpec synthetic_spec(const RunConfig& config);
/// Training config with the run's root seed filled in.
TrainConfig train_config(const RunConfig& config);
/// Seed of the Monte-Carlo prediction stream used by eval and export.
std::uint64_t eval_seed(const RunConfig& config);

}  // namespace gpmil::cli
