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

#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "gpmil/kernel.hpp"
#include "gpmil/rng.hpp"

namespace gpmil {

enum class Normalization { kSoftmax, kSigmoid };

std::string_view to_string(Normalization mode);
/// Accepts "softmax" or "sigmoid"; throws ConfigError otherwise.
Normalization parse_normalization(std::string_view text);

/// Learnable quantities of the sparse GP attention layer.
///
/// The variational distribution over inducing values is
/// q(U) = N(variational_mean, S) with S = L L^T, where L is the lower triangle
/// of `raw_cov_factor` with its diagonal passed through softplus. The prior
/// is p(U) = N(prior_mean, K_ZZ).
struct SgpAttentionState {
  MatrixXd inducing_locations;  ///< m x d'
  VectorXd variational_mean;    ///< m
  MatrixXd raw_cov_factor;      ///< m x m, strict upper triangle unused
  VectorXd prior_mean;          ///< m, fixed at zero
  VectorXd lm_weights;          ///< d'
  double lm_bias = 0.0;
  KernelParams kernel;
  bool use_lm = true;
  bool diag_only = true;

  /// Z ~ N(0, 0.5^2), m_U = 0, L = 0.1 I, LM weights uniform in
  /// +-1/sqrt(d'), zero bias, kernel at KernelParams::initial.
  static SgpAttentionState initial(Index num_inducing, Index dim, Rng& rng);

  [[nodiscard]] Index num_inducing() const { return inducing_locations.rows(); }
  [[nodiscard]] Index dim() const { return inducing_locations.cols(); }

  [[nodiscard]] MatrixXd cov_factor() const;
  [[nodiscard]] MatrixXd variational_cov() const;
  /// Sets the raw factor so that cov_factor() == lower. The diagonal of
  /// `lower` must be strictly positive.
  void set_cov_factor(const MatrixXd& lower);

  /// Throws InvalidArgument if the blocks have inconsistent shapes.
  void validate() const;
};

/// Per-bag marginal q(A). `variance` always holds the diagonal of the
/// covariance; `covariance` is only populated by the full path.
struct AttentionPosterior {
  VectorXd mean;
  VectorXd variance;
  std::optional<MatrixXd> covariance;
  bool diag_only = true;
  /// Number of variance entries that came out negative from round-off and
  /// were clamped to zero.
  Index clamped = 0;

  [[nodiscard]] Index size() const { return mean.size(); }
};

/// Every intermediate of the marginal computation. The gradient code reuses
/// these instead of recomputing the factorizations.
struct MarginalTerms {
  AttentionPosterior posterior;
  MatrixXd k_xz;          ///< K x m
  CholeskyResult k_zz;    ///< factor of K_ZZ + jitter
  MatrixXd cov_lower;     ///< L, factor of S
  VectorXd alpha;         ///< K_ZZ^{-1} (m_U - mu_U)
  MatrixXd projection;    ///< K_ZZ^{-1} K_ZX, m x K
  VectorXd raw_variance;  ///< diagonal before clamping
};

/// Closed-form marginal
///
///   mean = mu_X + K_XZ K_ZZ^{-1} (m_U - mu_U)
///   cov  = K_XX - K_XZ K_ZZ^{-1} (K_ZZ - S) K_ZZ^{-1} K_ZX
///
/// with mu_X = H w + b when the linear mean is enabled and mu_X = b
/// otherwise. In diagonal mode only the K variances are formed.
AttentionPosterior variational_marginal(const Eigen::Ref<const MatrixXd>& projected,
                                        const SgpAttentionState& state);

MarginalTerms marginal_terms(const Eigen::Ref<const MatrixXd>& projected,
                             const SgpAttentionState& state);

/// Local reparameterization: row s is mean + sqrt(variance) .* eps_s with
/// eps drawn row-major from `rng`. Only the diagonal is used even when a full
/// covariance is present.
MatrixXd sample_attention(const AttentionPosterior& posterior, Index n_samples,
                          Rng& rng);

/// Same as sample_attention with the noise supplied by the caller.
MatrixXd reparameterize(const AttentionPosterior& posterior,
                        const Eigen::Ref<const MatrixXd>& noise);

/// KL(q(U) || p(U)) computed from Cholesky factors.
double kl_inducing(const SgpAttentionState& state);

/// Row-wise max-subtracted softmax, or element-wise logistic.
MatrixXd normalize_attention(const Eigen::Ref<const MatrixXd>& raw,
                             Normalization mode);

}  // namespace gpmil
