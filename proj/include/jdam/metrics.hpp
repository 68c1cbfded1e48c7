#ifndef JDAM_METRICS_HPP
#define JDAM_METRICS_HPP

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "jdam/common.hpp"

namespace jdam {

template <typename DerivedA, typename DerivedB>
double mse(const Eigen::ArrayBase<DerivedA>& a,
           const Eigen::ArrayBase<DerivedB>& b) {
  require_same_shape(a, b, "mse");
  return (a.template cast<double>() - b.template cast<double>())
      .square()
      .mean();
}

/// 10*log10(range^2 / MSE); identical images return +infinity.
template <typename DerivedA, typename DerivedB>
double psnr(const Eigen::ArrayBase<DerivedA>& a,
            const Eigen::ArrayBase<DerivedB>& b, double data_range = 1.0) {
  if (!(data_range > 0.0)) throw DomainError("psnr: data_range must be > 0");
  const double err = mse(a, b);
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / err);
}

namespace detail {

inline const Mat<double>& ssim_window() {
  // 11x11 Gaussian, sigma 1.5, normalized to unit sum (Wang et al. choice).
  static const Mat<double> w = [] {
    const int n = 11;
    const double sigma = 1.5;
    Vec<double> g(n);
    for (int i = 0; i < n; ++i) {
      const double d = i - (n - 1) / 2.0;
      g(i) = std::exp(-d * d / (2.0 * sigma * sigma));
    }
    Mat<double> m = g * g.transpose();
    m /= m.sum();
    return m;
  }();
  return w;
}

}  // namespace detail

/// Mean local SSIM over all fully-valid 11x11 window positions, Gaussian
/// weighting, C1 = (0.01*range)^2, C2 = (0.03*range)^2.
template <typename DerivedA, typename DerivedB>
double ssim(const Eigen::ArrayBase<DerivedA>& a,
            const Eigen::ArrayBase<DerivedB>& b, double data_range = 1.0) {
  require_same_shape(a, b, "ssim");
  if (!(data_range > 0.0)) throw DomainError("ssim: data_range must be > 0");
  const Mat<double>& w = detail::ssim_window();
  const Eigen::Index win = w.rows();
  if (a.rows() < win || a.cols() < win)
    throw DomainError("ssim: image smaller than the 11x11 window");

  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);

  Array2<double> ad = a.template cast<double>();
  Array2<double> bd = b.template cast<double>();
  const Array2<double> wa = w.array();

  double acc = 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i + win <= ad.rows(); ++i) {
    for (Eigen::Index j = 0; j + win <= ad.cols(); ++j) {
      const auto pa = ad.block(i, j, win, win);
      const auto pb = bd.block(i, j, win, win);
      const double mu_a = (wa * pa).sum();
      const double mu_b = (wa * pb).sum();
      const double saa = (wa * pa * pa).sum() - mu_a * mu_a;
      const double sbb = (wa * pb * pb).sum() - mu_b * mu_b;
      const double sab = (wa * pa * pb).sum() - mu_a * mu_b;
      const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * sab + c2);
      const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2);
      acc += num / den;
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

/// Signed (or absolute) elementwise difference a - b.
template <typename DerivedA, typename DerivedB>
Array2<double> error_map(const Eigen::ArrayBase<DerivedA>& a,
                         const Eigen::ArrayBase<DerivedB>& b,
                         bool absolute = false) {
  require_same_shape(a, b, "error_map");
  Array2<double> d = a.template cast<double>() - b.template cast<double>();
  if (absolute) d = d.abs();
  return d;
}

struct SampleMetrics {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricsReport {
  std::vector<SampleMetrics> per_sample;
  double psnr_mean = 0.0, psnr_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;
  double data_range = 1.0;

  std::size_t n() const { return per_sample.size(); }

  void aggregate() {
    const double cnt = static_cast<double>(per_sample.size());
    if (cnt == 0) return;
    double ps = 0, ss = 0;
    for (const auto& m : per_sample) {
      ps += m.psnr_db;
      ss += m.ssim;
    }
    psnr_mean = ps / cnt;
    ssim_mean = ss / cnt;
    double pv = 0, sv = 0;
    for (const auto& m : per_sample) {
      pv += (m.psnr_db - psnr_mean) * (m.psnr_db - psnr_mean);
      sv += (m.ssim - ssim_mean) * (m.ssim - ssim_mean);
    }
    psnr_std = std::sqrt(pv / cnt);
    ssim_std = std::sqrt(sv / cnt);
  }
};

}  // namespace jdam

#endif  // JDAM_METRICS_HPP
