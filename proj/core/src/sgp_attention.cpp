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

#include "gpmil/sgp_attention.hpp"

#include <cmath>
#include <sstream>

#include "gpmil/error.hpp"

namespace gpmil {

std::string_view to_string(Normalization mode) {
  return mode == Normalization::kSoftmax ? "softmax" : "sigmoid";
}

Normalization parse_normalization(std::string_view text) {
  if (text == "softmax") return Normalization::kSoftmax;
  if (text == "sigmoid") return Normalization::kSigmoid;
  throw ConfigError("unknown normalization mode '" + std::string(text) +
                    "' (expected softmax or sigmoid)");
}

SgpAttentionState SgpAttentionState::initial(Index num_inducing, Index dim,
                                             Rng& rng) {
  if (num_inducing < 1 || dim < 1) {
    throw InvalidArgument("SgpAttentionState: need m >= 1 and d' >= 1");
  }
  SgpAttentionState s;
  s.inducing_locations = 0.5 * rng.normal_matrix(num_inducing, dim);
  s.variational_mean = VectorXd::Zero(num_inducing);
  s.prior_mean = VectorXd::Zero(num_inducing);
  s.set_cov_factor(0.1 * MatrixXd::Identity(num_inducing, num_inducing));
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  s.lm_weights.resize(dim);
  for (Index i = 0; i < dim; ++i) s.lm_weights(i) = rng.uniform(-bound, bound);
  s.lm_bias = 0.0;
  s.kernel = KernelParams::initial(dim);
  return s;
}

MatrixXd SgpAttentionState::cov_factor() const {
  MatrixXd lower = raw_cov_factor.triangularView<Eigen::StrictlyLower>();
  for (Index i = 0; i < lower.rows(); ++i) {
    lower(i, i) = softplus(raw_cov_factor(i, i));
  }
  return lower;
}

MatrixXd SgpAttentionState::variational_cov() const {
  const MatrixXd lower = cov_factor();
  return lower * lower.transpose();
}

void SgpAttentionState::set_cov_factor(const MatrixXd& lower) {
  if (lower.rows() != lower.cols()) {
    throw InvalidArgument("set_cov_factor: factor must be square");
  }
  raw_cov_factor = lower.triangularView<Eigen::StrictlyLower>();
  for (Index i = 0; i < lower.rows(); ++i) {
    if (!(lower(i, i) > 0.0)) {
      throw InvalidArgument("set_cov_factor: diagonal must be positive");
    }
    raw_cov_factor(i, i) = softplus_inverse(lower(i, i));
  }
}

void SgpAttentionState::validate() const {
  const Index m = num_inducing();
  const Index d = dim();
  std::ostringstream os;
  if (m < 1) os << "no inducing points; ";
  if (variational_mean.size() != m) os << "variational_mean size; ";
  if (prior_mean.size() != m) os << "prior_mean size; ";
  if (raw_cov_factor.rows() != m || raw_cov_factor.cols() != m) {
    os << "cov factor shape; ";
  }
  if (lm_weights.size() != d) os << "lm_weights size; ";
  if (kernel.dim() != d) os << "kernel dimension; ";
  if (!os.str().empty()) {
    throw InvalidArgument("SgpAttentionState inconsistent: " + os.str());
  }
}

MarginalTerms marginal_terms(const Eigen::Ref<const MatrixXd>& projected,
                             const SgpAttentionState& state) {
  state.validate();
  if (projected.cols() != state.dim()) {
    throw InvalidArgument("variational_marginal: projected width " +
                          std::to_string(projected.cols()) +
                          " does not match d' = " + std::to_string(state.dim()));
  }
  const Index n = projected.rows();
  const auto& z = state.inducing_locations;

  MarginalTerms t;
  t.k_xz = kernel_matrix(projected, z, state.kernel);
  t.k_zz = cholesky_psd(kernel_matrix(z, z, state.kernel),
                        state.kernel.jitter_base);
  t.cov_lower = state.cov_factor();
  t.alpha = cholesky_solve(t.k_zz.lower,
                           state.variational_mean - state.prior_mean);

  VectorXd mean = VectorXd::Constant(n, state.lm_bias);
  if (state.use_lm) mean += projected * state.lm_weights;
  mean += t.k_xz * t.alpha;

  // whitened = L_zz^{-1} K_ZX, projection = K_ZZ^{-1} K_ZX
  const MatrixXd whitened = tri_solve(t.k_zz.lower, t.k_xz.transpose(), false);
  t.projection = tri_solve(t.k_zz.lower, whitened, true);
  const MatrixXd scaled = t.cov_lower.transpose() * t.projection;
  const double prior_var = state.kernel.outputscale() + state.kernel.offset();

  AttentionPosterior& post = t.posterior;
  post.diag_only = state.diag_only;
  if (state.diag_only) {
    t.raw_variance = VectorXd::Constant(n, prior_var) -
                     whitened.colwise().squaredNorm().transpose() +
                     scaled.colwise().squaredNorm().transpose();
  } else {
    MatrixXd cov = kernel_matrix(projected, projected, state.kernel);
    cov.noalias() -= whitened.transpose() * whitened;
    cov.noalias() += scaled.transpose() * scaled;
    t.raw_variance = cov.diagonal();
    post.covariance = std::move(cov);
  }

  post.mean = std::move(mean);
  post.variance = t.raw_variance;
  for (Index k = 0; k < n; ++k) {
    if (post.variance(k) < 0.0) {
      post.variance(k) = 0.0;
      ++post.clamped;
    }
  }
  if (post.covariance) post.covariance->diagonal() = post.variance;
  return t;
}

AttentionPosterior variational_marginal(const Eigen::Ref<const MatrixXd>& projected,
                                        const SgpAttentionState& state) {
  return marginal_terms(projected, state).posterior;
}

MatrixXd reparameterize(const AttentionPosterior& posterior,
                        const Eigen::Ref<const MatrixXd>& noise) {
  if (noise.cols() != posterior.size()) {
    throw InvalidArgument("reparameterize: noise width mismatch");
  }
  if ((posterior.variance.array() < 0.0).any()) {
    throw InvalidArgument("reparameterize: negative variance");
  }
  const Eigen::RowVectorXd stddev = posterior.variance.cwiseSqrt().transpose();
  MatrixXd out = noise.array().rowwise() * stddev.array();
  out.rowwise() += posterior.mean.transpose();
  return out;
}

MatrixXd sample_attention(const AttentionPosterior& posterior, Index n_samples,
                          Rng& rng) {
  if (n_samples < 1) {
    throw InvalidArgument("sample_attention: n_samples must be positive");
  }
  return reparameterize(posterior, rng.normal_matrix(n_samples, posterior.size()));
}

double kl_inducing(const SgpAttentionState& state) {
  state.validate();
  const auto& z = state.inducing_locations;
  const CholeskyResult k_zz =
      cholesky_psd(kernel_matrix(z, z, state.kernel), state.kernel.jitter_base);
  const MatrixXd cov_lower = state.cov_factor();
  const VectorXd diff = state.prior_mean - state.variational_mean;

  const double trace = tri_solve(k_zz.lower, cov_lower, false).squaredNorm();
  const double quad = tri_solve(k_zz.lower, diff, false).squaredNorm();
  const double logdet_prior =
      2.0 * k_zz.lower.diagonal().array().log().sum();
  const double logdet_q = 2.0 * cov_lower.diagonal().array().log().sum();
  const auto m = static_cast<double>(state.num_inducing());
  return 0.5 * (trace + quad - m + logdet_prior - logdet_q);
}

MatrixXd normalize_attention(const Eigen::Ref<const MatrixXd>& raw,
                             Normalization mode) {
  if (raw.hasNaN()) throw InvalidArgument("normalize_attention: NaN input");
  if (mode == Normalization::kSigmoid) return raw.unaryExpr(&sigmoid);
  MatrixXd out(raw.rows(), raw.cols());
  for (Index s = 0; s < raw.rows(); ++s) {
    const double top = raw.row(s).maxCoeff();
    out.row(s) = (raw.row(s).array() - top).exp();
    out.row(s) /= out.row(s).sum();
  }
  return out;
}

}  // namespace gpmil
