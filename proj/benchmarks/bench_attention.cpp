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

#include <benchmark/benchmark.h>

#include <gpmil/mil_head.hpp>
#include <gpmil/sgp_attention.hpp>
#include <gpmil/trainer.hpp>

using namespace gpmil;

namespace {

// Projected bag of K instances and a state with m inducing points in d' = 64.
struct Fixture {
  SgpAttentionState state;
  MatrixXd projected;

  Fixture(Index k, Index m, bool diag) {
    Rng rng(1);
    state = SgpAttentionState::initial(m, 64, rng);
    state.diag_only = diag;
    projected = MatrixXd::NullaryExpr(k, 64, [&] { return rng.uniform(-1.0, 1.0); });
  }
};

void BM_MarginalDiagonal(benchmark::State& st) {
  const Fixture f(st.range(0), st.range(1), true);
  for (auto _ : st) benchmark::DoNotOptimize(variational_marginal(f.projected, f.state));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_MarginalFull(benchmark::State& st) {
  const Fixture f(st.range(0), st.range(1), false);
  for (auto _ : st) benchmark::DoNotOptimize(variational_marginal(f.projected, f.state));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_GradientStep(benchmark::State& st) {
  Rng rng(2);
  TrainConfig cfg;
  cfg.num_inducing = st.range(1);
  MilModel model = MilModel::initial({16, cfg.hidden_dim, cfg.proj_dim, cfg.num_inducing, 2},
                                     cfg.attention, rng);
  InstanceBag bag;
  bag.id = "bench";
  bag.features = rng.normal_matrix(st.range(0), 16);
  bag.label = 1;
  for (auto _ : st) benchmark::DoNotOptimize(compute_gradients(bag, model, cfg, rng));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

}  // namespace

BENCHMARK(BM_MarginalDiagonal)->ArgsProduct({{32, 256, 1024}, {16, 80}});
BENCHMARK(BM_MarginalFull)->ArgsProduct({{32, 256, 1024}, {16, 80}});
BENCHMARK(BM_GradientStep)->ArgsProduct({{32, 256}, {16, 80}});
BENCHMARK_MAIN();
