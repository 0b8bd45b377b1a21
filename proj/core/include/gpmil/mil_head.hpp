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

#include <concepts>
#include <span>
#include <string_view>
#include <type_traits>

#include <Eigen/Dense>

#include "gpmil/data.hpp"
#include "gpmil/rng.hpp"
#include "gpmil/sgp_attention.hpp"

namespace gpmil {

/// y = W x + b applied to every row of the input.
struct Affine {
  MatrixXd weight;  ///< out x in
  VectorXd bias;    ///< out

  /// Weights uniform in +-1/sqrt(in), zero bias.
  static Affine initial(Index out, Index in, Rng& rng);

  [[nodiscard]] Index in_dim() const { return weight.cols(); }
  [[nodiscard]] Index out_dim() const { return weight.rows(); }
  [[nodiscard]] MatrixXd apply(const Eigen::Ref<const MatrixXd>& rows) const;
};

/// D -> h (ReLU) -> d' (tanh).
struct Projector {
  Affine hidden;
  Affine output;

  static Projector initial(Index input_dim, Index hidden_dim, Index proj_dim,
                           Rng& rng);
  [[nodiscard]] Index input_dim() const { return hidden.in_dim(); }
  [[nodiscard]] Index proj_dim() const { return output.out_dim(); }
};

struct ModelShape {
  Index input_dim = 16;
  Index hidden_dim = 256;
  Index proj_dim = 64;
  Index num_inducing = 16;
  int num_classes = 2;
};

struct AttentionOptions {
  Normalization normalization = Normalization::kSigmoid;
  bool use_lm = true;
  bool diag_only = true;
};

struct MilModel {
  Projector projector;
  SgpAttentionState sgp;
  Affine classifier;  ///< d' -> C, followed by softmax
  Normalization normalization = Normalization::kSigmoid;

  static MilModel initial(const ModelShape& shape,
                          const AttentionOptions& options, Rng& rng);

  [[nodiscard]] int num_classes() const {
    return static_cast<int>(classifier.out_dim());
  }
  [[nodiscard]] ModelShape shape() const;
  /// Throws InvalidArgument if block shapes disagree.
  void validate() const;
};

/// Intermediates of one stochastic forward pass over a bag.
struct BagForward {
  MatrixXd projected;          ///< K x d'
  AttentionPosterior posterior;
  MatrixXd attention_samples;  ///< N_s x K, after normalization
  MatrixXd bag_reps;           ///< N_s x d'
  MatrixXd prob_samples;       ///< N_s x C
};

MatrixXd project_instances(const Eigen::Ref<const MatrixXd>& features,
                           const Projector& projector);
MatrixXd project_instances(const Eigen::Ref<const MatrixXd>& features,
                           const MilModel& model);

/// Row s is sum_k attention(s, k) * projected(k, :).
MatrixXd aggregate_bag(const Eigen::Ref<const MatrixXd>& projected,
                       const Eigen::Ref<const MatrixXd>& attention_samples);

MatrixXd classify(const Eigen::Ref<const MatrixXd>& bag_reps,
                  const Affine& classifier);
MatrixXd classify(const Eigen::Ref<const MatrixXd>& bag_reps,
                  const MilModel& model);

/// project -> marginal -> sample -> normalize -> aggregate -> classify.
/// Noise is drawn from `rng` as a row-major N_s x K block.
BagForward forward_bag(const InstanceBag& bag, const MilModel& model,
                       Index n_samples, Rng& rng);

/// Deterministic gated-attention MIL baseline. Attention logits are
/// w^T (tanh(V h + b_V) .* sigmoid(U h + b_U)) on projected embeddings h,
/// normalized by softmax over the bag.
struct GatedAttentionModel {
  Projector projector;
  Affine attention_v;  ///< L x d'
  Affine attention_u;  ///< L x d'
  VectorXd attention_w;
  Affine classifier;

  static GatedAttentionModel initial(const ModelShape& shape,
                                     Index attention_dim, Rng& rng);
  [[nodiscard]] int num_classes() const {
    return static_cast<int>(classifier.out_dim());
  }
  void validate() const;
};

struct GatedForward {
  MatrixXd projected;
  VectorXd attention;  ///< K, sums to 1
  VectorXd bag_rep;
  VectorXd probs;
};

/// Gated attention weights over already-projected embeddings.
VectorXd gated_attention(const Eigen::Ref<const MatrixXd>& projected,
                         const GatedAttentionModel& model);
/// Gated attention weights for raw instance features (projects first).
VectorXd gated_attention_baseline(const Eigen::Ref<const MatrixXd>& features,
                                  const GatedAttentionModel& model);
GatedForward forward_gated(const InstanceBag& bag,
                           const GatedAttentionModel& model);

/// Row-wise max-subtracted softmax.
MatrixXd softmax_rows(const Eigen::Ref<const MatrixXd>& logits);

// ---------------------------------------------------------------------------
// Parameter traversal. Visits every trainable block as a flat span of doubles
// together with whether AdamW weight decay applies to it.

template <typename M>
concept TrainableModel = std::same_as<std::remove_const_t<M>, MilModel> ||
                         std::same_as<std::remove_const_t<M>, GatedAttentionModel>;

namespace detail {

template <typename E>
auto flat(E& e) {
  using T = std::conditional_t<std::is_const_v<E>, const double, double>;
  return std::span<T>(e.data(), static_cast<std::size_t>(e.size()));
}

template <typename T>
auto flat_scalar(T& x) {
  using V = std::conditional_t<std::is_const_v<T>, const double, double>;
  return std::span<V>(&x, 1);
}

template <typename A, typename F>
void visit_affine(A& affine, std::string_view weight_name,
                  std::string_view bias_name, F& f) {
  f(weight_name, flat(affine.weight), true);
  f(bias_name, flat(affine.bias), false);
}

}  // namespace detail

template <typename M, typename F>
  requires std::same_as<std::remove_const_t<M>, MilModel>
void for_each_parameter(M& model, F&& f) {
  detail::visit_affine(model.projector.hidden, "projector.hidden.weight",
                       "projector.hidden.bias", f);
  detail::visit_affine(model.projector.output, "projector.output.weight",
                       "projector.output.bias", f);
  auto& sgp = model.sgp;
  f("sgp.inducing_locations", detail::flat(sgp.inducing_locations), false);
  f("sgp.variational_mean", detail::flat(sgp.variational_mean), false);
  f("sgp.cov_factor", detail::flat(sgp.raw_cov_factor), false);
  f("sgp.lm_weights", detail::flat(sgp.lm_weights), false);
  f("sgp.lm_bias", detail::flat_scalar(sgp.lm_bias), false);
  f("sgp.kernel.outputscale", detail::flat_scalar(sgp.kernel.raw_outputscale),
    false);
  f("sgp.kernel.lengthscales", detail::flat(sgp.kernel.raw_lengthscales),
    false);
  f("sgp.kernel.offset", detail::flat_scalar(sgp.kernel.raw_offset), false);
  detail::visit_affine(model.classifier, "classifier.weight", "classifier.bias",
                       f);
}

template <typename M, typename F>
  requires std::same_as<std::remove_const_t<M>, GatedAttentionModel>
void for_each_parameter(M& model, F&& f) {
  detail::visit_affine(model.projector.hidden, "projector.hidden.weight",
                       "projector.hidden.bias", f);
  detail::visit_affine(model.projector.output, "projector.output.weight",
                       "projector.output.bias", f);
  detail::visit_affine(model.attention_v, "attention.v.weight",
                       "attention.v.bias", f);
  detail::visit_affine(model.attention_u, "attention.u.weight",
                       "attention.u.bias", f);
  f("attention.w", detail::flat(model.attention_w), true);
  detail::visit_affine(model.classifier, "classifier.weight", "classifier.bias",
                       f);
}

/// Copy of `model` with every trainable coordinate set to zero; used as the
/// gradient container.
template <TrainableModel M>
M zeros_like(const M& model) {
  M out = model;
  for_each_parameter(out, [](std::string_view, std::span<double> v, bool) {
    std::fill(v.begin(), v.end(), 0.0);
  });
  return out;
}

template <TrainableModel M>
std::size_t parameter_count(const M& model) {
  std::size_t n = 0;
  for_each_parameter(model, [&](std::string_view, std::span<const double> v,
                                bool) { n += v.size(); });
  return n;
}

}  // namespace gpmil
