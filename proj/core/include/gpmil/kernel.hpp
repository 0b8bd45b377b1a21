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

#include <Eigen/Dense>

namespace gpmil {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double softplus(double x);
/// Inverse of softplus; requires y > 0.
double softplus_inverse(double y);
/// Derivative of softplus, i.e. the logistic function.
double sigmoid(double x);

/// Scaled ARD RBF kernel
///
///   k(x, y) = A * exp(-sum_l (x_l - y_l)^2 / theta_l) + C
///
/// with outputscale A, one lengthscale theta_l per input dimension and a
/// constant offset C. All three are stored unconstrained and mapped through
/// softplus so optimizer steps cannot leave the valid region.
struct KernelParams {
  double raw_outputscale = 0.0;
  VectorXd raw_lengthscales;
  double raw_offset = 0.0;
  double jitter_base = 1e-6;

  /// A = 1, theta_l = sqrt(dim), C = 0.01.
  static KernelParams initial(Index dim);
  static KernelParams from_constrained(double outputscale,
                                       const VectorXd& lengthscales,
                                       double offset,
                                       double jitter_base = 1e-6);

  [[nodiscard]] double outputscale() const { return softplus(raw_outputscale); }
  [[nodiscard]] VectorXd lengthscales() const;
  [[nodiscard]] double offset() const { return softplus(raw_offset); }
  [[nodiscard]] Index dim() const { return raw_lengthscales.size(); }
};

double kernel_eval(const Eigen::Ref<const VectorXd>& x,
                   const Eigen::Ref<const VectorXd>& y,
                   const KernelParams& params);

/// Gram matrix between the rows of `a` (n x d) and the rows of `b` (m x d).
MatrixXd kernel_matrix(const Eigen::Ref<const MatrixXd>& a,
                       const Eigen::Ref<const MatrixXd>& b,
                       const KernelParams& params);

/// Gradients of sum_ij weights(i, j) * k(a_i, b_j) with respect to the rows
/// of `a`, the rows of `b` and the raw (pre-softplus) kernel parameters.
/// Results are accumulated into the output arguments.
struct KernelGrad {
  double raw_outputscale = 0.0;
  VectorXd raw_lengthscales;
  double raw_offset = 0.0;

  explicit KernelGrad(Index dim = 0) : raw_lengthscales(VectorXd::Zero(dim)) {}
};

void kernel_matrix_backward(const Eigen::Ref<const MatrixXd>& a,
                            const Eigen::Ref<const MatrixXd>& b,
                            const KernelParams& params,
                            const Eigen::Ref<const MatrixXd>& weights,
                            Eigen::Ref<MatrixXd> grad_a,
                            Eigen::Ref<MatrixXd> grad_b,
                            KernelGrad& grad_params);

struct CholeskyResult {
  MatrixXd lower;
  double jitter = 0.0;  ///< lambda actually added to the diagonal
};

/// Lower Cholesky factor of m + lambda * I where lambda is the first value of
/// {0, base, 10 base, ..., 1e5 base} for which the factorization succeeds.
/// Throws NotPositiveDefinite listing the ladder on failure and
/// InvalidArgument if `m` is not square or not symmetric.
CholeskyResult cholesky_psd(const Eigen::Ref<const MatrixXd>& m,
                            double jitter_base);

/// Solves L X = B, or L^T X = B when `transpose` is set, for lower-triangular
/// L. Throws SingularMatrix on a zero diagonal entry.
MatrixXd tri_solve(const Eigen::Ref<const MatrixXd>& lower,
                   const Eigen::Ref<const MatrixXd>& rhs, bool transpose);

/// (L L^T)^{-1} B via two triangular solves.
MatrixXd cholesky_solve(const Eigen::Ref<const MatrixXd>& lower,
                        const Eigen::Ref<const MatrixXd>& rhs);

}  // namespace gpmil
