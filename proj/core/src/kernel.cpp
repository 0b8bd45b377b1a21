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

#include "gpmil/kernel.hpp"

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "gpmil/error.hpp"

namespace gpmil {

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw InvalidArgument("softplus_inverse requires y > 0");
  return y + std::log(-std::expm1(-y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

KernelParams KernelParams::initial(Index dim) {
  return from_constrained(1.0,
                          VectorXd::Constant(dim, std::sqrt(double(dim))),
                          0.01);
}

KernelParams KernelParams::from_constrained(double outputscale,
                                            const VectorXd& lengthscales,
                                            double offset, double jitter_base) {
  KernelParams p;
  p.raw_outputscale = softplus_inverse(outputscale);
  p.raw_lengthscales = lengthscales.unaryExpr(&softplus_inverse);
  // An offset of exactly zero is the limit of the softplus map.
  p.raw_offset = offset > 0.0 ? softplus_inverse(offset) : -745.0;
  p.jitter_base = jitter_base;
  return p;
}

VectorXd KernelParams::lengthscales() const {
  return raw_lengthscales.unaryExpr(&softplus);
}

namespace {

void check_dims(Index got, Index want, const char* what) {
  if (got != want) {
    std::ostringstream os;
    os << what << ": dimension " << got << " does not match kernel dimension "
       << want;
    throw InvalidArgument(os.str());
  }
}

}  // namespace

double kernel_eval(const Eigen::Ref<const VectorXd>& x,
                   const Eigen::Ref<const VectorXd>& y,
                   const KernelParams& params) {
  check_dims(x.size(), params.dim(), "kernel_eval(x)");
  check_dims(y.size(), params.dim(), "kernel_eval(y)");
  const VectorXd theta = params.lengthscales();
  double q = 0.0;
  for (Index l = 0; l < x.size(); ++l) {
    const double diff = x(l) - y(l);
    q += diff * diff / theta(l);
  }
  return params.outputscale() * std::exp(-q) + params.offset();
}

MatrixXd kernel_matrix(const Eigen::Ref<const MatrixXd>& a,
                       const Eigen::Ref<const MatrixXd>& b,
                       const KernelParams& params) {
  check_dims(a.cols(), params.dim(), "kernel_matrix(a)");
  check_dims(b.cols(), params.dim(), "kernel_matrix(b)");
  const VectorXd inv_theta = params.lengthscales().cwiseInverse();
  const double amp = params.outputscale();
  const double off = params.offset();
  MatrixXd out(a.rows(), b.rows());
  for (Index j = 0; j < b.rows(); ++j) {
    for (Index i = 0; i < a.rows(); ++i) {
      double q = 0.0;
      for (Index l = 0; l < a.cols(); ++l) {
        const double diff = a(i, l) - b(j, l);
        q += diff * diff * inv_theta(l);
      }
      out(i, j) = amp * std::exp(-q) + off;
    }
  }
  return out;
}

void kernel_matrix_backward(const Eigen::Ref<const MatrixXd>& a,
                            const Eigen::Ref<const MatrixXd>& b,
                            const KernelParams& params,
                            const Eigen::Ref<const MatrixXd>& weights,
                            Eigen::Ref<MatrixXd> grad_a,
                            Eigen::Ref<MatrixXd> grad_b,
                            KernelGrad& grad_params) {
  const Index dim = params.dim();
  const VectorXd theta = params.lengthscales();
  const VectorXd inv_theta = theta.cwiseInverse();
  const double amp = params.outputscale();

  double d_amp = 0.0;
  double d_off = 0.0;
  VectorXd d_theta = VectorXd::Zero(dim);
  for (Index j = 0; j < b.rows(); ++j) {
    for (Index i = 0; i < a.rows(); ++i) {
      const double w = weights(i, j);
      if (w == 0.0) continue;
      double q = 0.0;
      for (Index l = 0; l < dim; ++l) {
        const double diff = a(i, l) - b(j, l);
        q += diff * diff * inv_theta(l);
      }
      const double e = std::exp(-q);
      d_amp += w * e;
      d_off += w;
      const double ae = w * amp * e;
      for (Index l = 0; l < dim; ++l) {
        const double diff = a(i, l) - b(j, l);
        d_theta(l) += ae * diff * diff * inv_theta(l) * inv_theta(l);
        const double g = -2.0 * ae * diff * inv_theta(l);
        grad_a(i, l) += g;
        grad_b(j, l) -= g;
      }
    }
  }
  grad_params.raw_outputscale += d_amp * sigmoid(params.raw_outputscale);
  grad_params.raw_offset += d_off * sigmoid(params.raw_offset);
  for (Index l = 0; l < dim; ++l) {
    grad_params.raw_lengthscales(l) +=
        d_theta(l) * sigmoid(params.raw_lengthscales(l));
  }
}

CholeskyResult cholesky_psd(const Eigen::Ref<const MatrixXd>& m,
                            double jitter_base) {
  if (m.rows() != m.cols()) {
    throw InvalidArgument("cholesky_psd: matrix is not square");
  }
  if (!(jitter_base > 0.0)) {
    throw InvalidArgument("cholesky_psd: jitter_base must be positive");
  }
  if (!m.allFinite()) throw NonFinite("cholesky_psd: non-finite entry");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw InvalidArgument("cholesky_psd: matrix is not symmetric");
  }

  std::vector<double> ladder{0.0};
  for (int p = 0; p <= 5; ++p) ladder.push_back(jitter_base * std::pow(10.0, p));

  const Index n = m.rows();
  for (const double lambda : ladder) {
    MatrixXd shifted = m;
    shifted.diagonal().array() += lambda;
    Eigen::LLT<MatrixXd> llt(shifted);
    if (llt.info() != Eigen::Success) continue;
    MatrixXd lower = llt.matrixL();
    return {std::move(lower), lambda};
  }
  std::ostringstream os;
  os << "cholesky_psd: matrix of size " << n
     << " is not positive definite; tried jitter";
  for (const double lambda : ladder) os << ' ' << lambda;
  throw NotPositiveDefinite(os.str(), ladder);
}

MatrixXd tri_solve(const Eigen::Ref<const MatrixXd>& lower,
                   const Eigen::Ref<const MatrixXd>& rhs, bool transpose) {
  if (lower.rows() != lower.cols() || lower.rows() != rhs.rows()) {
    throw InvalidArgument("tri_solve: shape mismatch");
  }
  for (Index i = 0; i < lower.rows(); ++i) {
    if (lower(i, i) == 0.0) {
      throw SingularMatrix("tri_solve: zero diagonal at row " +
                           std::to_string(i));
    }
  }
  if (transpose) {
    return lower.triangularView<Eigen::Lower>().transpose().solve(rhs);
  }
  return lower.triangularView<Eigen::Lower>().solve(rhs);
}

MatrixXd cholesky_solve(const Eigen::Ref<const MatrixXd>& lower,
                        const Eigen::Ref<const MatrixXd>& rhs) {
  return tri_solve(lower, tri_solve(lower, rhs, false), true);
}

}  // namespace gpmil
