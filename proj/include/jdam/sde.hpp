#ifndef JDAM_SDE_HPP
#define JDAM_SDE_HPP

#include <cmath>
#include <vector>

#include "jdam/common.hpp"

namespace jdam {

/// Variance-exploding noise schedule. The continuous noise level is
/// sigma(t) = sigma_min * (sigma_max/sigma_min)^t on t in [0,1]; the
/// discrete levels sigma_i = sigma((i-1)/(N-1)) form a geometric
/// sequence from sigma_min to sigma_max. The VE drift is zero; this
/// struct is the whole SDE.
struct NoiseSchedule {
  double sigma_min = 0.01;
  double sigma_max = 50.0;
  int num_steps = 1000;

  NoiseSchedule() = default;
  NoiseSchedule(double smin, double smax, int n)
      : sigma_min(smin), sigma_max(smax), num_steps(n) {
    validate();
  }

  void validate() const {
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
      throw ConfigError("NoiseSchedule: requires 0 < sigma_min < sigma_max");
    if (num_steps < 2)
      throw ConfigError("NoiseSchedule: num_steps must be >= 2");
  }

  /// Continuous t for the 1-based discrete index i in [1, N].
  double t_of_index(int i) const {
    return static_cast<double>(i - 1) / static_cast<double>(num_steps - 1);
  }
};

inline double sigma_at(const NoiseSchedule& s, double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw DomainError("sigma_at: t must lie in [0,1]");
  return s.sigma_min * std::pow(s.sigma_max / s.sigma_min, t);
}

inline std::vector<double> discrete_sigmas(const NoiseSchedule& s) {
  s.validate();
  std::vector<double> out(static_cast<std::size_t>(s.num_steps));
  for (int i = 1; i <= s.num_steps; ++i)
    out[static_cast<std::size_t>(i - 1)] = sigma_at(s, s.t_of_index(i));
  return out;
}

/// x_t = x_0 + sigma(t) * z with z ~ N(0, I) supplied by the caller.
template <typename DerivedX, typename DerivedZ>
auto perturb(const Eigen::ArrayBase<DerivedX>& x0, double t,
             const Eigen::ArrayBase<DerivedZ>& z, const NoiseSchedule& s) {
  require_same_shape(x0, z, "perturb");
  using S = typename DerivedX::Scalar;
  const S sig = static_cast<S>(sigma_at(s, t));
  return (x0 + sig * z).eval();
}

/// Score of the perturbation kernel, -(x_t - x_0)/sigma(t)^2; the
/// regression target of denoising score matching.
template <typename DerivedA, typename DerivedB>
auto kernel_score(const Eigen::ArrayBase<DerivedA>& x_t,
                  const Eigen::ArrayBase<DerivedB>& x0, double t,
                  const NoiseSchedule& s) {
  require_same_shape(x_t, x0, "kernel_score");
  using S = typename DerivedA::Scalar;
  const S sig = static_cast<S>(sigma_at(s, t));
  return (-(x_t - x0) / (sig * sig)).eval();
}

}  // namespace jdam

#endif  // JDAM_SDE_HPP
