// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include "mmguide/random.hpp"

namespace mmguide {

using Vector5d = Eigen::Matrix<double, 5, 1>;
using Vector6d = Eigen::Matrix<double, 6, 1>;
using Vector14d = Eigen::Matrix<double, 14, 1>;

inline constexpr int kGazeHeadSize = 5;
inline constexpr int kProbeHeadSize = 14;

inline constexpr double kSigmaMin = 1e-5;
inline constexpr double kSigmaMax = 1e3;
inline constexpr double kRhoMargin = 0.99;

/// Gaze-shift distribution in normalized screen units.
struct BivariateGaussian {
  Eigen::Vector2d mu = Eigen::Vector2d::Zero();
  Eigen::Vector2d sigma = Eigen::Vector2d::Ones();
  double rho = 0.0;

  bool valid() const;
  Eigen::Matrix2d covariance() const;
};

/// Relative-rotation distribution over raw quaternion components.
///
/// `rho` is the strict lower triangle of the correlation matrix in row-major
/// order: (1,0), (2,0), (2,1), (3,0), (3,1), (3,2).
struct MultivariateGaussian4 {
  Eigen::Vector4d mu = Eigen::Vector4d::Zero();
  Eigen::Vector4d sigma = Eigen::Vector4d::Ones();
  Vector6d rho = Vector6d::Zero();

  Eigen::Matrix4d correlation() const;
  Eigen::Matrix4d covariance() const;
};

/// Index of correlation pair (i, j), i > j, in MultivariateGaussian4::rho.
constexpr int rho_index(int i, int j) { return i * (i - 1) / 2 + j; }

struct CholeskyResult {
  Eigen::Matrix4d lower;
  int jitter_retries = 0; ///< 0 when the plain factorization succeeded
};

/// Cholesky factor of the covariance. On failure adds
/// 1e-6 * trace/4 * I and retries, scaling the jitter by 10 up to three
/// times; throws DegenerateCovariance if all retries fail.
CholeskyResult covariance_cholesky(const MultivariateGaussian4 &d);

/// mu = sigmoid(raw[0:2]) - 0.5, sigma = clamp(exp(raw[2:4])),
/// rho = 0.99 * tanh(raw[4]).
BivariateGaussian decode_gaze_head(const Vector5d &raw);

/// mu = raw[0:4], sigma = clamp(exp(raw[4:8])).
///
/// raw[8:14] are mapped through 0.99 * tanh to partial correlations of a
/// canonical vine, which always produces a positive definite correlation
/// matrix; `rho` of the result holds the implied pairwise correlations.
MultivariateGaussian4 decode_probe_head(const Vector14d &raw);

double nll_bivariate(const BivariateGaussian &d, const Eigen::Vector2d &obs);
double nll_mvn4(const MultivariateGaussian4 &d, const Eigen::Vector4d &obs);

Eigen::Vector2d sample_bivariate(const BivariateGaussian &d, Rng &rng);
Eigen::Vector4d sample_mvn4(const MultivariateGaussian4 &d, Rng &rng);

/// Negative log-likelihood of `obs` under the decoded head together with
/// its gradient with respect to the raw head output.
template <int N> struct HeadLoss {
  double value = 0.0;
  Eigen::Matrix<double, N, 1> grad_raw;
};

HeadLoss<kGazeHeadSize> gaze_head_nll(const Vector5d &raw,
                                      const Eigen::Vector2d &obs);
HeadLoss<kProbeHeadSize> probe_head_nll(const Vector14d &raw,
                                        const Eigen::Vector4d &obs);

/// eta * (1 - |mu|^2)^2 and its gradient with respect to mu.
struct PriorTerm {
  double value = 0.0;
  Eigen::Vector4d grad_mu = Eigen::Vector4d::Zero();
};
PriorTerm quaternion_prior(const Eigen::Vector4d &mu, double eta);

} // namespace mmguide
