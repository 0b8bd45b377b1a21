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

#include "gpmil/mil_head.hpp"

#include <cmath>
#include <string>

#include "gpmil/error.hpp"

namespace gpmil {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw InvalidArgument(message);
}

}  // namespace

Affine Affine::initial(Index out, Index in, Rng& rng) {
  require(out >= 1 && in >= 1, "Affine: dimensions must be positive");
  Affine a;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  a.weight.resize(out, in);
  for (Index r = 0; r < out; ++r) {
    for (Index c = 0; c < in; ++c) a.weight(r, c) = rng.uniform(-bound, bound);
  }
  a.bias = VectorXd::Zero(out);
  return a;
}

MatrixXd Affine::apply(const Eigen::Ref<const MatrixXd>& rows) const {
  require(rows.cols() == in_dim(),
          "Affine: input width " + std::to_string(rows.cols()) +
              " does not match " + std::to_string(in_dim()));
  MatrixXd out = rows * weight.transpose();
  out.rowwise() += bias.transpose();
  return out;
}

Projector Projector::initial(Index input_dim, Index hidden_dim, Index proj_dim,
                             Rng& rng) {
  Projector p;
  p.hidden = Affine::initial(hidden_dim, input_dim, rng);
  p.output = Affine::initial(proj_dim, hidden_dim, rng);
  return p;
}

MilModel MilModel::initial(const ModelShape& shape,
                           const AttentionOptions& options, Rng& rng) {
  require(shape.num_classes >= 2, "MilModel: need at least two classes");
  MilModel m;
  m.projector = Projector::initial(shape.input_dim, shape.hidden_dim,
                                   shape.proj_dim, rng);
  m.sgp = SgpAttentionState::initial(shape.num_inducing, shape.proj_dim, rng);
  m.sgp.use_lm = options.use_lm;
  m.sgp.diag_only = options.diag_only;
  m.classifier = Affine::initial(shape.num_classes, shape.proj_dim, rng);
  m.normalization = options.normalization;
  return m;
}

ModelShape MilModel::shape() const {
  return {projector.input_dim(), projector.hidden.out_dim(),
          projector.proj_dim(), sgp.num_inducing(), num_classes()};
}

void MilModel::validate() const {
  require(projector.output.in_dim() == projector.hidden.out_dim(),
          "MilModel: projector layers disagree");
  require(projector.proj_dim() == sgp.dim(),
          "MilModel: projector output does not match SGP dimension");
  require(classifier.in_dim() == sgp.dim(),
          "MilModel: classifier input does not match SGP dimension");
  sgp.validate();
}

MatrixXd softmax_rows(const Eigen::Ref<const MatrixXd>& logits) {
  return normalize_attention(logits, Normalization::kSoftmax);
}

MatrixXd project_instances(const Eigen::Ref<const MatrixXd>& features,
                           const Projector& projector) {
  require(features.cols() == projector.input_dim(),
          "project_instances: feature width " + std::to_string(features.cols()) +
              " does not match projector input " +
              std::to_string(projector.input_dim()));
  const MatrixXd hidden = projector.hidden.apply(features).cwiseMax(0.0);
  return projector.output.apply(hidden).array().tanh().matrix();
}

MatrixXd project_instances(const Eigen::Ref<const MatrixXd>& features,
                           const MilModel& model) {
  return project_instances(features, model.projector);
}

MatrixXd aggregate_bag(const Eigen::Ref<const MatrixXd>& projected,
                       const Eigen::Ref<const MatrixXd>& attention_samples) {
  require(attention_samples.cols() == projected.rows(),
          "aggregate_bag: attention has " +
              std::to_string(attention_samples.cols()) + " columns for " +
              std::to_string(projected.rows()) + " instances");
  return attention_samples * projected;
}

MatrixXd classify(const Eigen::Ref<const MatrixXd>& bag_reps,
                  const Affine& classifier) {
  return softmax_rows(classifier.apply(bag_reps));
}

MatrixXd classify(const Eigen::Ref<const MatrixXd>& bag_reps,
                  const MilModel& model) {
  return classify(bag_reps, model.classifier);
}

BagForward forward_bag(const InstanceBag& bag, const MilModel& model,
                       Index n_samples, Rng& rng) {
  require(bag.size() >= 1, "forward_bag: empty bag '" + bag.id + "'");
  BagForward f;
  f.projected = project_instances(bag.features, model);
  f.posterior = variational_marginal(f.projected, model.sgp);
  const MatrixXd raw = sample_attention(f.posterior, n_samples, rng);
  f.attention_samples = normalize_attention(raw, model.normalization);
  f.bag_reps = aggregate_bag(f.projected, f.attention_samples);
  f.prob_samples = classify(f.bag_reps, model);
  return f;
}

GatedAttentionModel GatedAttentionModel::initial(const ModelShape& shape,
                                                 Index attention_dim,
                                                 Rng& rng) {
  require(shape.num_classes >= 2, "GatedAttentionModel: need two classes");
  GatedAttentionModel m;
  m.projector = Projector::initial(shape.input_dim, shape.hidden_dim,
                                   shape.proj_dim, rng);
  m.attention_v = Affine::initial(attention_dim, shape.proj_dim, rng);
  m.attention_u = Affine::initial(attention_dim, shape.proj_dim, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(attention_dim));
  m.attention_w.resize(attention_dim);
  for (Index i = 0; i < attention_dim; ++i) {
    m.attention_w(i) = rng.uniform(-bound, bound);
  }
  m.classifier = Affine::initial(shape.num_classes, shape.proj_dim, rng);
  return m;
}

void GatedAttentionModel::validate() const {
  const Index d = projector.proj_dim();
  require(attention_v.in_dim() == d && attention_u.in_dim() == d,
          "GatedAttentionModel: attention input width mismatch");
  require(attention_v.out_dim() == attention_u.out_dim() &&
              attention_w.size() == attention_v.out_dim(),
          "GatedAttentionModel: attention hidden width mismatch");
  require(classifier.in_dim() == d,
          "GatedAttentionModel: classifier input width mismatch");
}

VectorXd gated_attention(const Eigen::Ref<const MatrixXd>& projected,
                         const GatedAttentionModel& model) {
  const MatrixXd tanh_branch = model.attention_v.apply(projected).array().tanh();
  const MatrixXd gate = model.attention_u.apply(projected).unaryExpr(&sigmoid);
  const VectorXd scores = tanh_branch.cwiseProduct(gate) * model.attention_w;
  return softmax_rows(scores.transpose()).transpose();
}

VectorXd gated_attention_baseline(const Eigen::Ref<const MatrixXd>& features,
                                  const GatedAttentionModel& model) {
  return gated_attention(project_instances(features, model.projector), model);
}

GatedForward forward_gated(const InstanceBag& bag,
                           const GatedAttentionModel& model) {
  require(bag.size() >= 1, "forward_gated: empty bag '" + bag.id + "'");
  GatedForward f;
  f.projected = project_instances(bag.features, model.projector);
  f.attention = gated_attention(f.projected, model);
  f.bag_rep = f.projected.transpose() * f.attention;
  f.probs = classify(f.bag_rep.transpose(), model.classifier).transpose();
  return f;
}

}  // namespace gpmil
