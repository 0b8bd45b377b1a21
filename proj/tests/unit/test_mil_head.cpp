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

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include <gpmil/error.hpp>
#include <gpmil/mil_head.hpp>

#include "fixtures.hpp"

using namespace gpmil;
using gpmil::testing::small_bag;
using gpmil::testing::small_model;

TEST(Projector, ZeroWeightsGiveZero) {
  Rng rng(0);
  Projector p = Projector::initial(4, 5, 2, rng);
  p.hidden.weight.setZero();
  p.output.weight.setZero();
  EXPECT_EQ(project_instances(rng.normal_matrix(3, 4), p), MatrixXd::Zero(3, 2));
}

TEST(Projector, ScalarLayers) {
  Projector p;
  p.hidden = {MatrixXd::Ones(1, 1), VectorXd::Zero(1)};
  p.output = {MatrixXd::Ones(1, 1), VectorXd::Zero(1)};
  for (const double x : {-2.0, -0.1, 0.0, 0.7, 3.0}) {
    EXPECT_DOUBLE_EQ(project_instances(MatrixXd::Constant(1, 1, x), p)(0, 0),
                     std::tanh(std::max(0.0, x)));
  }
}

TEST(Projector, MatchesLoopOracle) {
  Rng rng(31);
  Projector p = Projector::initial(8, 6, 3, rng);
  p.hidden.bias = rng.normal_matrix(6, 1);
  p.output.bias = rng.normal_matrix(3, 1);
  const MatrixXd x = rng.normal_matrix(5, 8);
  const MatrixXd out = project_instances(x, p);
  for (Index k = 0; k < 5; ++k) {
    VectorXd hid(6);
    for (Index i = 0; i < 6; ++i) {
      double acc = p.hidden.bias(i);
      for (Index j = 0; j < 8; ++j) acc += p.hidden.weight(i, j) * x(k, j);
      hid(i) = std::max(0.0, acc);
    }
    for (Index o = 0; o < 3; ++o) {
      double acc = p.output.bias(o);
      for (Index i = 0; i < 6; ++i) acc += p.output.weight(o, i) * hid(i);
      EXPECT_NEAR(out(k, o), std::tanh(acc), 1e-12);
    }
  }
  EXPECT_THROW(project_instances(MatrixXd::Zero(2, 7), p), InvalidArgument);
}

TEST(Aggregate, OneHotUniformAndLoop) {
  Rng rng(2);
  const MatrixXd h = rng.normal_matrix(4, 2);
  MatrixXd onehot = MatrixXd::Zero(1, 4);
  onehot(0, 2) = 1.0;
  EXPECT_EQ(aggregate_bag(h, onehot), h.row(2));
  const MatrixXd uniform = MatrixXd::Constant(1, 4, 0.25);
  EXPECT_LT((aggregate_bag(h, uniform) - h.colwise().mean()).cwiseAbs().maxCoeff(), 1e-15);

  const MatrixXd a = rng.normal_matrix(3, 4);
  const MatrixXd r = aggregate_bag(h, a);
  for (Index s = 0; s < 3; ++s) {
    for (Index d = 0; d < 2; ++d) {
      double acc = 0.0;
      for (Index k = 0; k < 4; ++k) acc += a(s, k) * h(k, d);
      EXPECT_NEAR(r(s, d), acc, 1e-14);
    }
  }
  EXPECT_THROW(aggregate_bag(h, MatrixXd::Zero(1, 3)), InvalidArgument);
}

TEST(Classify, UniformSaturatedAndOracle) {
  Affine zero{MatrixXd::Zero(3, 2), VectorXd::Zero(3)};
  const MatrixXd p = classify(MatrixXd::Ones(2, 2), zero);
  EXPECT_LT((p.array() - 1.0 / 3.0).abs().maxCoeff(), 1e-15);

  Affine sharp{(MatrixXd(2, 1) << 1.0, -1.0).finished(), VectorXd::Zero(2)};
  EXPECT_GT(classify(MatrixXd::Constant(1, 1, 10.0), sharp)(0, 0), 0.9999);

  Rng rng(3);
  Affine c{rng.normal_matrix(4, 3), rng.normal_matrix(4, 1)};
  const MatrixXd reps = rng.normal_matrix(5, 3);
  const MatrixXd out = classify(reps, c);
  for (Index s = 0; s < 5; ++s) {
    const VectorXd logits = c.weight * reps.row(s).transpose() + c.bias;
    const VectorXd e = logits.array().exp();
    for (Index j = 0; j < 4; ++j) EXPECT_NEAR(out(s, j), e(j) / e.sum(), 1e-12);
    EXPECT_NEAR(out.row(s).sum(), 1.0, 1e-12);
  }
}

TEST(ForwardBag, SingleInstanceSoftmaxWeightIsOne) {
  AttentionOptions o;
  o.normalization = Normalization::kSoftmax;
  const MilModel m = small_model(1, 8, 6, 3, 4, 3, o);
  Rng rng(0);
  const auto f = forward_bag(small_bag(1, 1, 8), m, 5, rng);
  for (Index s = 0; s < 5; ++s) EXPECT_DOUBLE_EQ(f.attention_samples(s, 0), 1.0);
}

TEST(ForwardBag, ComposesTheStagesInOrder) {
  for (const auto mode : {Normalization::kSigmoid, Normalization::kSoftmax}) {
    AttentionOptions o;
    o.normalization = mode;
    const MilModel m = small_model(9, 8, 6, 3, 4, 3, o);
    const InstanceBag bag = small_bag(9, 6, 8);
    Rng rng(77);
    const BagForward f = forward_bag(bag, m, 2, rng);

    Rng noise_rng(77);
    const MatrixXd h = project_instances(bag.features, m);
    const auto post = variational_marginal(h, m.sgp);
    const MatrixXd eps = noise_rng.normal_matrix(2, 6);
    MatrixXd raw(2, 6);
    for (Index s = 0; s < 2; ++s) {
      for (Index k = 0; k < 6; ++k) raw(s, k) = post.mean(k) + std::sqrt(post.variance(k)) * eps(s, k);
    }
    const MatrixXd att = normalize_attention(raw, mode);
    const MatrixXd probs = classify(aggregate_bag(h, att), m);
    EXPECT_LT((f.attention_samples - att).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((f.prob_samples - probs).cwiseAbs().maxCoeff(), 1e-12);
    for (Index s = 0; s < 2; ++s) EXPECT_NEAR(f.prob_samples.row(s).sum(), 1.0, 1e-12);
  }
}

TEST(ForwardBag, ZeroVarianceGivesIdenticalRows) {
  MilModel m = small_model(2);
  // A vanishing outputscale and offset leave no marginal variance.
  m.sgp.kernel.raw_outputscale = -745.0;
  m.sgp.kernel.raw_offset = -745.0;
  Rng rng(1);
  const auto f = forward_bag(small_bag(2), m, 4, rng);
  for (Index s = 1; s < 4; ++s) {
    EXPECT_LT((f.prob_samples.row(s) - f.prob_samples.row(0)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ForwardBag, DeterministicGivenSeed) {
  const MilModel m = small_model(4);
  const InstanceBag bag = small_bag(4);
  Rng a(5);
  Rng b(5);
  EXPECT_EQ(forward_bag(bag, m, 3, a).prob_samples, forward_bag(bag, m, 3, b).prob_samples);
}

TEST(ForwardBag, DuplicateInstancesShareMarginals) {
  const MilModel m = small_model(6);
  InstanceBag bag = small_bag(6, 5, 8);
  bag.features.row(3) = bag.features.row(1);
  Rng rng(0);
  const auto f = forward_bag(bag, m, 2, rng);
  EXPECT_NEAR(f.posterior.mean(3), f.posterior.mean(1), 1e-9);
  EXPECT_NEAR(f.posterior.variance(3), f.posterior.variance(1), 1e-9);
}

TEST(Gated, SingleAndIdenticalInstances) {
  Rng rng(7);
  const auto g = GatedAttentionModel::initial({8, 6, 3, 4, 2}, 5, rng);
  EXPECT_NEAR(gated_attention_baseline(rng.normal_matrix(1, 8), g)(0), 1.0, 1e-15);
  const MatrixXd same = MatrixXd::Ones(4, 1) * rng.normal_matrix(1, 8);
  const VectorXd a = gated_attention_baseline(same, g);
  for (Index k = 0; k < 4; ++k) EXPECT_NEAR(a(k), 0.25, 1e-15);
}

TEST(Gated, MatchesFormulaOracle) {
  Rng rng(8);
  auto g = GatedAttentionModel::initial({8, 6, 3, 4, 2}, 5, rng);
  g.attention_v.bias = rng.normal_matrix(5, 1);
  g.attention_u.bias = rng.normal_matrix(5, 1);
  const MatrixXd x = rng.normal_matrix(4, 8);
  const MatrixXd h = project_instances(x, g.projector);
  VectorXd logits(4);
  for (Index k = 0; k < 4; ++k) {
    double acc = 0.0;
    for (Index l = 0; l < 5; ++l) {
      const double v = std::tanh(g.attention_v.weight.row(l).dot(h.row(k)) + g.attention_v.bias(l));
      const double u = 1.0 / (1.0 + std::exp(-(g.attention_u.weight.row(l).dot(h.row(k)) +
                                               g.attention_u.bias(l))));
      acc += g.attention_w(l) * v * u;
    }
    logits(k) = acc;
  }
  const VectorXd e = logits.array().exp();
  const VectorXd a = gated_attention_baseline(x, g);
  for (Index k = 0; k < 4; ++k) EXPECT_NEAR(a(k), e(k) / e.sum(), 1e-12);
}

TEST(Parameters, TraversalCoversEveryBlock) {
  const MilModel m = small_model(0);
  std::vector<std::string> names;
  for_each_parameter(m, [&](std::string_view n, std::span<const double>, bool) {
    names.emplace_back(n);
  });
  EXPECT_EQ(names.size(), 14u);
  EXPECT_EQ(parameter_count(m), 48u + 6 + 18 + 3 + 12 + 4 + 16 + 3 + 1 + 1 + 3 + 1 + 9 + 3);
  const MilModel z = zeros_like(m);
  for_each_parameter(z, [](std::string_view, std::span<const double> v, bool) {
    for (const double x : v) EXPECT_EQ(x, 0.0);
  });
}
