#ifndef JDAM_GAUSSIAN_ORACLE_HPP
#define JDAM_GAUSSIAN_ORACLE_HPP

#include <Eigen/Cholesky>

#include "jdam/common.hpp"
#include "jdam/sde.hpp"

namespace jdam {

/// Closed-form Gaussian toy distribution used to validate training and
/// sampling without a learned network.
struct GaussianSpec {
  Vec<double> mean;
  Mat<double> cov;

  GaussianSpec(Vec<double> mu, Mat<double> sigma)
      : mean(std::move(mu)), cov(std::move(sigma)) {
    if (cov.rows() != cov.cols() || cov.rows() != mean.size())
      throw ConfigError("GaussianSpec: covariance/mean dimension mismatch");
    if (!cov.isApprox(cov.transpose(), 1e-12))
      throw ConfigError("GaussianSpec: covariance must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat<double>> es(cov);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw ConfigError("GaussianSpec: covariance must be positive definite");
  }

  Eigen::Index dim() const { return mean.size(); }
};

/// Score of the perturbed marginal: the data Gaussian convolved with the
/// VE kernel at level sigma(t) is N(mu, Sigma + sigma^2 I), whose score
/// at x is -(Sigma + sigma^2 I)^{-1} (x - mu).
inline Vec<double> marginal_score(const GaussianSpec& spec,
                                  const Vec<double>& x, double t,
                                  const NoiseSchedule& s) {
  if (x.size() != spec.dim())
    throw DimensionError("marginal_score: x dimension mismatch");
  const double sig = sigma_at(s, t);
  Mat<double> cov_t = spec.cov;
  cov_t.diagonal().array() += sig * sig;
  return cov_t.llt().solve(-(x - spec.mean));
}

/// x-block of the joint score when only the x-block is diffused and y
/// stays clean: sigma(t)^2 is added to the x-block of the covariance
/// only. This is the conditional score by the identity
/// grad_x log p(x|y) = grad_x log p(x, y).
inline Vec<double> joint_score_x(const GaussianSpec& spec,
                                 const Vec<double>& x, const Vec<double>& y,
                                 double t, const NoiseSchedule& s) {
  const Eigen::Index dx = x.size();
  const Eigen::Index dy = y.size();
  if (dx + dy != spec.dim())
    throw DimensionError("joint_score_x: (x,y) dims must partition d");
  const double sig = sigma_at(s, t);
  Mat<double> cov_t = spec.cov;
  cov_t.topLeftCorner(dx, dx).diagonal().array() += sig * sig;
  Vec<double> xy(dx + dy);
  xy << x, y;
  Vec<double> full = cov_t.llt().solve(-(xy - spec.mean));
  return full.head(dx);
}

}  // namespace jdam

#endif  // JDAM_GAUSSIAN_ORACLE_HPP
