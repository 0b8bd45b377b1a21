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
#include <string>

#include <gpmil/data.hpp>
#include <gpmil/mil_head.hpp>
#include <gpmil/rng.hpp>
#include <gpmil/trainer.hpp>

namespace gpmil::testing {

/// Small model with every parameter block moved off its initial value.
inline MilModel small_model(std::uint64_t seed, Index d = 8, Index h = 6,
                            Index dp = 3, Index m = 4, int c = 3,
                            AttentionOptions opts = {}) {
  Rng rng(seed);
  MilModel model = MilModel::initial({d, h, dp, m, c}, opts, rng);
  auto& s = model.sgp;
  s.inducing_locations = MatrixXd::NullaryExpr(m, dp, [&] { return rng.uniform(-0.9, 0.9); });
  s.variational_mean = VectorXd::NullaryExpr(m, [&] { return 0.5 * rng.normal(); });
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j <= i; ++j) {
      s.raw_cov_factor(i, j) = i == j ? rng.uniform(-2.5, -1.0) : 0.1 * rng.normal();
    }
  }
  s.lm_weights = VectorXd::NullaryExpr(dp, [&] { return 0.5 * rng.normal(); });
  s.lm_bias = 0.3 * rng.normal();
  s.kernel.raw_outputscale = rng.uniform(-0.5, 0.5);
  s.kernel.raw_lengthscales = VectorXd::NullaryExpr(dp, [&] { return rng.uniform(-0.5, 1.0); });
  s.kernel.raw_offset = rng.uniform(-4.0, -2.0);
  model.projector.hidden.bias = VectorXd::NullaryExpr(h, [&] { return 0.1 * rng.normal(); });
  model.projector.output.bias = VectorXd::NullaryExpr(dp, [&] { return 0.1 * rng.normal(); });
  model.classifier.bias = VectorXd::NullaryExpr(c, [&] { return 0.1 * rng.normal(); });
  return model;
}

inline InstanceBag small_bag(std::uint64_t seed, Index k = 6, Index d = 8,
                             int label = 1) {
  Rng rng(seed ^ 0x5eedULL);
  InstanceBag bag;
  bag.id = "fixture_" + std::to_string(seed);
  bag.features = rng.normal_matrix(k, d);
  bag.label = label;
  return bag;
}

inline TrainConfig small_config() {
  TrainConfig cfg;
  cfg.n_samples = 2;
  cfg.kl_scale = 0.25;
  cfg.grad_clip = 0.0;
  return cfg;
}

}  // namespace gpmil::testing
