// SPDX-License-Identifier: Apache-2.0
#include "mmguide/gaussian.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>

#include "mmguide/errors.hpp"

namespace mmguide {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr int kJitterRetries = 3;

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct SigmaLink {
  double value;
  double slope; // d value / d raw, zero when clamped
};

SigmaLink sigma_link(double raw) {
  const double e = std::exp(raw);
  if (e < kSigmaMin)
    return {kSigmaMin, 0.0};
  if (e > kSigmaMax)
    return {kSigmaMax, 0.0};
  return {e, e};
}

// Canonical-vine construction: partial correlations z (row-major strict lower
// order) to the lower Cholesky factor of a correlation matrix.
Eigen::Matrix4d vine_cholesky(const Vector6d &z) {
  Eigen::Matrix4d lc = Eigen::Matrix4d::Zero();
  lc(0, 0) = 1.0;
  for (int i = 1; i < 4; ++i) {
    double used = 0.0;
    for (int j = 0; j < i; ++j) {
      const double v = z[rho_index(i, j)] * std::sqrt(1.0 - used);
      lc(i, j) = v;
      used += v * v;
    }
    lc(i, i) = std::sqrt(1.0 - used);
  }
  return lc;
}

// Adjoint of vine_cholesky: accumulates d/dz given d/dLc (lower triangle).
Vector6d vine_cholesky_backward(const Vector6d &z, const Eigen::Matrix4d &lc,
                                const Eigen::Matrix4d &grad_lc) {
  Vector6d grad_z = Vector6d::Zero();
  for (int i = 1; i < 4; ++i) {
    // Recompute the running sums of squares for row i.
    double used[4] = {0.0, 0.0, 0.0, 0.0};
    for (int j = 0; j < i; ++j)
      used[j + 1] = used[j] + lc(i, j) * lc(i, j);
    double grad_used = -grad_lc(i, i) / (2.0 * lc(i, i));
    for (int j = i - 1; j >= 0; --j) {
      const double g = grad_lc(i, j) + grad_used * 2.0 * lc(i, j);
      const double rem = 1.0 - used[j];
      const double root = std::sqrt(rem);
      grad_z[rho_index(i, j)] += g * root;
      // used_{j+1} = used_j + v^2 with v = z * sqrt(1 - used_j)
      const double grad_rem = j == 0 ? 0.0 : g * z[rho_index(i, j)] / (2.0 * root);
      grad_used = grad_used - grad_rem;
    }
  }
  return grad_z;
}

Vector6d correlations_from_factor(const Eigen::Matrix4d &lc) {
  const Eigen::Matrix4d c = lc * lc.transpose();
  Vector6d rho;
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < i; ++j)
      rho[rho_index(i, j)] = c(i, j);
  return rho;
}

} // namespace

bool BivariateGaussian::valid() const {
  return mu.allFinite() && sigma.allFinite() && (sigma.array() > 0.0).all() &&
         std::isfinite(rho) && std::abs(rho) < 1.0;
}

Eigen::Matrix2d BivariateGaussian::covariance() const {
  Eigen::Matrix2d s;
  s << sigma[0] * sigma[0], rho * sigma[0] * sigma[1],
      rho * sigma[0] * sigma[1], sigma[1] * sigma[1];
  return s;
}

Eigen::Matrix4d MultivariateGaussian4::correlation() const {
  Eigen::Matrix4d c = Eigen::Matrix4d::Identity();
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < i; ++j)
      c(i, j) = c(j, i) = rho[rho_index(i, j)];
  return c;
}

Eigen::Matrix4d MultivariateGaussian4::covariance() const {
  return sigma.asDiagonal() * correlation() * sigma.asDiagonal();
}

CholeskyResult covariance_cholesky(const MultivariateGaussian4 &d) {
  const Eigen::Matrix4d cov = d.covariance();
  if (!cov.allFinite())
    throw DegenerateCovariance("covariance has non-finite entries");
  const double base = 1e-6 * cov.trace() / 4.0;
  double jitter = 0.0;
  for (int attempt = 0; attempt <= kJitterRetries; ++attempt) {
    if (attempt > 0)
      jitter = attempt == 1 ? base : jitter * 10.0;
    Eigen::LLT<Eigen::Matrix4d> llt(cov +
                                    jitter * Eigen::Matrix4d::Identity());
    if (llt.info() == Eigen::Success) {
      Eigen::Matrix4d l = llt.matrixL();
      if (l.allFinite() && (l.diagonal().array() > 0.0).all())
        return {l, attempt};
    }
  }
  throw DegenerateCovariance("covariance is not positive definite after "
                             "jitter retries");
}

BivariateGaussian decode_gaze_head(const Vector5d &raw) {
  BivariateGaussian d;
  d.mu << sigmoid(raw[0]) - 0.5, sigmoid(raw[1]) - 0.5;
  d.sigma << sigma_link(raw[2]).value, sigma_link(raw[3]).value;
  d.rho = kRhoMargin * std::tanh(raw[4]);
  return d;
}

MultivariateGaussian4 decode_probe_head(const Vector14d &raw) {
  MultivariateGaussian4 d;
  d.mu = raw.head<4>();
  for (int i = 0; i < 4; ++i)
    d.sigma[i] = sigma_link(raw[4 + i]).value;
  Vector6d z;
  for (int k = 0; k < 6; ++k)
    z[k] = kRhoMargin * std::tanh(raw[8 + k]);
  d.rho = correlations_from_factor(vine_cholesky(z));
  return d;
}

double nll_bivariate(const BivariateGaussian &d, const Eigen::Vector2d &obs) {
  const double dx = (obs[0] - d.mu[0]) / d.sigma[0];
  const double dy = (obs[1] - d.mu[1]) / d.sigma[1];
  const double omega = 1.0 - d.rho * d.rho;
  const double q = dx * dx - 2.0 * d.rho * dx * dy + dy * dy;
  return kLog2Pi + std::log(d.sigma[0]) + std::log(d.sigma[1]) +
         0.5 * std::log(omega) + q / (2.0 * omega);
}

double nll_mvn4(const MultivariateGaussian4 &d, const Eigen::Vector4d &obs) {
  const Eigen::Matrix4d l = covariance_cholesky(d).lower;
  const Eigen::Vector4d y =
      l.triangularView<Eigen::Lower>().solve(Eigen::Vector4d(obs - d.mu));
  return 0.5 * (4.0 * kLog2Pi + y.squaredNorm()) +
         l.diagonal().array().log().sum();
}

Eigen::Vector2d sample_bivariate(const BivariateGaussian &d, Rng &rng) {
  const double e1 = standard_normal(rng);
  const double e2 = standard_normal(rng);
  return {d.mu[0] + d.sigma[0] * e1,
          d.mu[1] + d.sigma[1] *
                        (d.rho * e1 + std::sqrt(1.0 - d.rho * d.rho) * e2)};
}

Eigen::Vector4d sample_mvn4(const MultivariateGaussian4 &d, Rng &rng) {
  const Eigen::Matrix4d l = covariance_cholesky(d).lower;
  Eigen::Vector4d eps;
  for (int i = 0; i < 4; ++i)
    eps[i] = standard_normal(rng);
  return d.mu + l * eps;
}

HeadLoss<kGazeHeadSize> gaze_head_nll(const Vector5d &raw,
                                      const Eigen::Vector2d &obs) {
  HeadLoss<kGazeHeadSize> out;
  const double sx = sigmoid(raw[0]), sy = sigmoid(raw[1]);
  const SigmaLink lx = sigma_link(raw[2]), ly = sigma_link(raw[3]);
  const double th = std::tanh(raw[4]);
  const double rho = kRhoMargin * th;

  const double dx = (obs[0] - (sx - 0.5)) / lx.value;
  const double dy = (obs[1] - (sy - 0.5)) / ly.value;
  const double omega = 1.0 - rho * rho;
  const double q = dx * dx - 2.0 * rho * dx * dy + dy * dy;
  out.value = kLog2Pi + std::log(lx.value) + std::log(ly.value) +
              0.5 * std::log(omega) + q / (2.0 * omega);

  const double g_dx = (dx - rho * dy) / omega;
  const double g_dy = (dy - rho * dx) / omega;
  const double g_mux = -g_dx / lx.value;
  const double g_muy = -g_dy / ly.value;
  const double g_sx = 1.0 / lx.value - g_dx * dx / lx.value;
  const double g_sy = 1.0 / ly.value - g_dy * dy / ly.value;
  const double g_rho = -rho / omega - dx * dy / omega + q * rho / (omega * omega);

  out.grad_raw << g_mux * sx * (1.0 - sx), g_muy * sy * (1.0 - sy),
      g_sx * lx.slope, g_sy * ly.slope, g_rho * kRhoMargin * (1.0 - th * th);
  return out;
}

HeadLoss<kProbeHeadSize> probe_head_nll(const Vector14d &raw,
                                        const Eigen::Vector4d &obs) {
  HeadLoss<kProbeHeadSize> out;
  SigmaLink links[4];
  Eigen::Vector4d sigma;
  for (int i = 0; i < 4; ++i) {
    links[i] = sigma_link(raw[4 + i]);
    sigma[i] = links[i].value;
  }
  Vector6d th, z;
  for (int k = 0; k < 6; ++k) {
    th[k] = std::tanh(raw[8 + k]);
    z[k] = kRhoMargin * th[k];
  }
  const Eigen::Matrix4d lc = vine_cholesky(z);
  const Eigen::Matrix4d l = sigma.asDiagonal() * lc;

  const Eigen::Vector4d diff = obs - raw.head<4>();
  const Eigen::Vector4d y = l.triangularView<Eigen::Lower>().solve(diff);
  out.value = 0.5 * (4.0 * kLog2Pi + y.squaredNorm()) +
              l.diagonal().array().log().sum();

  // f = 0.5 |L^-1 d|^2 + sum log L_ii
  const Eigen::Vector4d grad_diff =
      l.transpose().triangularView<Eigen::Upper>().solve(y);
  Eigen::Matrix4d grad_l = -(grad_diff * y.transpose());
  for (int i = 0; i < 4; ++i)
    grad_l(i, i) += 1.0 / l(i, i);

  Eigen::Matrix4d grad_lc = Eigen::Matrix4d::Zero();
  Eigen::Vector4d grad_sigma = Eigen::Vector4d::Zero();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j <= i; ++j) {
      grad_sigma[i] += grad_l(i, j) * lc(i, j);
      grad_lc(i, j) = sigma[i] * grad_l(i, j);
    }
  const Vector6d grad_z = vine_cholesky_backward(z, lc, grad_lc);

  out.grad_raw.head<4>() = -grad_diff;
  for (int i = 0; i < 4; ++i)
    out.grad_raw[4 + i] = grad_sigma[i] * links[i].slope;
  for (int k = 0; k < 6; ++k)
    out.grad_raw[8 + k] = grad_z[k] * kRhoMargin * (1.0 - th[k] * th[k]);
  return out;
}

PriorTerm quaternion_prior(const Eigen::Vector4d &mu, double eta) {
  const double gap = 1.0 - mu.squaredNorm();
  return {eta * gap * gap, -4.0 * eta * gap * mu};
}

} // namespace mmguide
