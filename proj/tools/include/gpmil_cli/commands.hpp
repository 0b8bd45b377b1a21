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

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <gpmil/evaluation.hpp>
#include <gpmil/model_io.hpp>

#include "gpmil_cli/run_config.hpp"

namespace gpmil::cli {

namespace fs = std::filesystem;

/// Generates the synthetic dataset described by `config` into `out`. With a
/// split prefix P, also writes P.train, P.val and P.test (same extension as
/// `out`) using config.data.split.
Dataset cmd_gen_data(const RunConfig& config, const fs::path& out,
                     const std::optional<fs::path>& split_prefix,
                     std::ostream& log);

/// Writes model.json, history.jsonl and config.json into `out_dir`. On a
/// training abort the partial history is still written before rethrowing.
void cmd_train(const RunConfig& config, const fs::path& data,
               const std::optional<fs::path>& validation, const fs::path& out_dir,
               std::ostream& log);

/// Writes metrics.json, metrics.txt and config.json into `out_dir`.
MetricsReport cmd_eval(const RunConfig& config, const fs::path& model,
                       const fs::path& data, const fs::path& out_dir,
                       std::ostream& log);

/// Run configuration stored in a model file, overlaid on defaults.
RunConfig config_from_model(const ModelFile& file);

struct AblationRun {
  bool use_lm = true;
  Normalization normalization = Normalization::kSigmoid;
  bool diag_only = true;
  Index num_inducing = 16;
  std::uint64_t seed = 0;
  MetricsReport metrics;
};

/// One training run per grid cell and seed (config.seed + i), evaluated on
/// `test`. Writes ablation.csv (mean and std per cell), ablation_runs.csv
/// and config.json into `out_dir`.
std::vector<AblationRun> cmd_ablate(const RunConfig& config, const fs::path& train,
                                    const fs::path& test, const fs::path& out_dir,
                                    std::ostream& log);

/// Per-instance CSV: bag_id, instance, attention_mean, attention_std,
/// attention_norm (per-bag min-max), instance_label, inducing_assignment.
/// Returns the number of rows written.
std::size_t cmd_export_attention(const RunConfig& config, const fs::path& model,
                                 const fs::path& data, const fs::path& out,
                                 std::ostream& log);

struct GradcheckRequest {
  std::uint64_t seed = 0;
  int n_seeds = 10;
  GradcheckOptions options;
};

/// Finite-difference check of the fixed small fixture (K=6, D=8, h=6, d'=3,
/// m=4, C=3, N_s=2) over `n_seeds` seeds in both normalization modes. Prints
/// one line per parameter block; returns false if any block fails.
bool cmd_gradcheck(const GradcheckRequest& request, std::ostream& log);

/// Fixture used by cmd_gradcheck.
struct GradcheckFixture {
  MilModel model;
  InstanceBag bag;
  TrainConfig config;
};
GradcheckFixture gradcheck_fixture(std::uint64_t seed, Normalization mode);

}  // namespace gpmil::cli
