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

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gpmil/data.hpp"
#include "gpmil/error.hpp"
#include "gpmil/mil_head.hpp"
#include "gpmil/rng.hpp"

namespace gpmil {

struct TrainConfig {
  int epochs = 20;
  double peak_lr = 6e-4;
  std::int64_t warmup_steps = 100;
  double weight_decay = 1e-2;
  Index n_samples = 4;      ///< Monte-Carlo samples per training step
  Index eval_samples = 32;  ///< samples used by validation passes
  Index hidden_dim = 256;
  Index proj_dim = 64;
  Index num_inducing = 16;
  Index gated_attention_dim = 64;  ///< hidden width of the gated baseline
  AttentionOptions attention;
  /// Multiplier on the KL term of every step; defaults to 1 / N_bags. Zero
  /// drops the KL term.
  std::optional<double> kl_scale;
  double grad_clip = 10.0;  ///< global-norm clip; <= 0 disables
  std::uint64_t seed = 0;
  /// Overrides the sampling stream derived from `seed`.
  std::optional<std::uint64_t> sampling_seed;
  /// Uses the posterior mean as every attention sample (variance ignored).
  bool zero_variance = false;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  [[nodiscard]] double resolved_kl_scale(std::size_t n_bags) const;
};

struct LossParts {
  double loss = 0.0;
  double ce = 0.0;
  double kl = 0.0;
};

/// Linear warmup from 0 to `peak` over `warmup_steps`, then cosine annealing
/// to 0 at `total_steps`.
struct LrSchedule {
  double peak = 6e-4;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
};

double lr_at(std::int64_t step, const LrSchedule& schedule);

/// Negative ELBO contribution of one bag:
///   ce = -(1/N_s) sum_s max(log p_s[y], -30),  loss = ce + kl_scale * KL.
/// kl_scale falls back to 1 when unset in `cfg`.
LossParts elbo_loss(const InstanceBag& bag, const MilModel& model,
                    const TrainConfig& cfg, Rng& rng);

struct Gradients {
  MilModel grad;  ///< same layout as the model, trainable blocks hold dL/dtheta
  LossParts loss;
  Index clamped_variances = 0;
};

/// Exact gradient of elbo_loss with the sampling noise drawn from `rng`
/// exactly as elbo_loss would draw it. Throws NonFinite naming the first
/// offending parameter block.
Gradients compute_gradients(const InstanceBag& bag, const MilModel& model,
                            const TrainConfig& cfg, Rng& rng);

/// Cross-entropy of the gated baseline on one bag and its gradient.
struct GatedGradients {
  GatedAttentionModel grad;
  double loss = 0.0;
};

double gated_loss(const InstanceBag& bag, const GatedAttentionModel& model);
GatedGradients compute_gated_gradients(const InstanceBag& bag,
                                       const GatedAttentionModel& model);

// ---------------------------------------------------------------------------
// Optimization

/// AdamW (beta1 0.9, beta2 0.999, eps 1e-8) with decoupled weight decay on
/// the blocks flagged as decayed by for_each_parameter.
class AdamW {
 public:
  explicit AdamW(double weight_decay) : weight_decay_(weight_decay) {}

  template <TrainableModel M>
  void step(M& model, const M& grad, double lr);

  [[nodiscard]] std::int64_t steps() const { return t_; }

 private:
  void update(std::size_t block, std::span<double> param,
              std::span<const double> grad, bool decay, double lr);

  double weight_decay_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

template <TrainableModel M>
void AdamW::step(M& model, const M& grad, double lr) {
  ++t_;
  std::vector<std::span<const double>> grads;
  for_each_parameter(grad, [&](std::string_view, std::span<const double> g,
                               bool) { grads.push_back(g); });
  std::size_t block = 0;
  for_each_parameter(model, [&](std::string_view, std::span<double> p,
                                bool decay) {
    update(block, p, grads[block], decay, lr);
    ++block;
  });
}

/// Sum of squares over every trainable coordinate, square-rooted.
template <TrainableModel M>
double global_norm(const M& grad) {
  double sq = 0.0;
  for_each_parameter(grad, [&](std::string_view, std::span<const double> g,
                               bool) {
    for (const double x : g) sq += x * x;
  });
  return std::sqrt(sq);
}

/// Scales every coordinate so the global norm is at most `max_norm`.
/// Returns the norm before clipping.
template <TrainableModel M>
double clip_global_norm(M& grad, double max_norm) {
  const double norm = global_norm(grad);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for_each_parameter(grad, [&](std::string_view, std::span<double> g, bool) {
      for (double& x : g) x *= s;
    });
  }
  return norm;
}

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  std::string bag_id;
  double loss = 0.0;
  double ce = 0.0;
  double kl = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_ce = 0.0;
  double kl_sum = 0.0;
  std::optional<double> val_balanced_acc;
  std::optional<double> val_auc;
  Index clamped_variances = 0;
  Index total_variances = 0;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::vector<std::string> warnings;
};

/// One JSON object per line: every step record, then every epoch record
/// (distinguished by a "type" field).
void write_history_jsonl(const TrainHistory& history, std::ostream& out);

/// Training stopped on a non-finite loss or gradient; carries the history up
/// to the failing step.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& message, TrainHistory history)
      : Error("training_aborted", message), history_(std::move(history)) {}
  [[nodiscard]] const TrainHistory& history() const { return history_; }

 private:
  TrainHistory history_;
};

struct TrainOptions {
  const Dataset* validation = nullptr;
  /// Receives each step record as it is produced.
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  MilModel model;
  TrainHistory history;
};

/// Initial model for `train`: seeded weights from the "init" stream, with
/// the inducing locations replaced by a random subset of projected training
/// instances drawn from the first bags of the epoch-0 order.
MilModel initialize_model(const Dataset& train, const TrainConfig& cfg);

/// One AdamW step per bag, bags in a fresh seeded order every epoch.
TrainResult train(const Dataset& train, const TrainConfig& cfg,
                  const TrainOptions& options = {});

struct GatedTrainResult {
  GatedAttentionModel model;
  TrainHistory history;
};

GatedAttentionModel initialize_gated_model(const Dataset& train,
                                           const TrainConfig& cfg);
/// Same loop and schedule as `train` for the deterministic baseline.
GatedTrainResult train_gated(const Dataset& train, const TrainConfig& cfg,
                             const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Finite-difference verification

struct BlockCheck {
  std::string name;
  std::size_t coords = 0;
  std::size_t failures = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  [[nodiscard]] bool passed() const { return failures == 0; }
};

struct GradcheckReport {
  std::vector<BlockCheck> blocks;
  [[nodiscard]] bool passed() const;
};

struct GradcheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-5;
  double abs_tol = 1e-8;
  /// Test hook: applied to the analytic gradient before comparison.
  std::function<void(MilModel&)> corrupt;
};

/// Central differences of elbo_loss (noise re-drawn from Rng(seed) for every
/// evaluation) against compute_gradients, coordinate by coordinate. A
/// coordinate passes when its relative or absolute error is under tolerance.
GradcheckReport gradient_check(const InstanceBag& bag, const MilModel& model,
                               const TrainConfig& cfg, std::uint64_t seed,
                               const GradcheckOptions& options = {});

GradcheckReport gated_gradient_check(const InstanceBag& bag,
                                     const GatedAttentionModel& model,
                                     const GradcheckOptions& options = {});

}  // namespace gpmil
