#include "jdam/selfcheck.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "jdam/gaussian_oracle.hpp"
#include "jdam/sampler.hpp"
#include "jdam/training.hpp"

namespace jdam {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

/// Elementwise oracle score for scalar data N(mu, var): each array entry
/// is one independent chain.
ScoreFn<double> scalar_marginal_score(double mu, double var,
                                      const NoiseSchedule& schedule) {
  GaussianSpec spec(Vec<double>::Constant(1, mu), Mat<double>::Constant(1, 1, var));
  return [spec, schedule](const Array2d& x, const Array2d&, double t) {
    Vec<double> probe(1);
    probe(0) = spec.mean(0) + 1.0;
    const double coef = marginal_score(spec, probe, t, schedule)(0);  // -1/(var+sig^2)
    return (coef * (x - spec.mean(0))).eval();
  };
}

// Criterion: PC sampling with the exact marginal score of N(0.5, 0.1^2)
// over 4096 chains recovers mean in [0.49, 0.51] and std in [0.09, 0.11].
CheckResult check_unconditional_recovery(const SelfCheckOptions& opt) {
  CheckResult res{"unconditional_gaussian_recovery", false, ""};
  const NoiseSchedule schedule(0.01, 1.0, 500);
  SamplerConfig cfg;
  cfg.num_steps = 500;
  cfg.corrector_steps = 1;
  cfg.snr = opt.snr;
  cfg.seed = 20240601;
  cfg.conditional = false;
  cfg.clip_output = false;

  auto score = scalar_marginal_score(0.5, 0.01, schedule);
  Array2d x = sample_unconditional<double>(score, schedule, cfg, 64, 64);
  const double mean = x.mean();
  const double stdev = std::sqrt((x - mean).square().mean());
  res.pass = mean >= 0.49 && mean <= 0.51 && stdev >= 0.09 && stdev <= 0.11;
  res.detail = "mean=" + fmt(mean) + " (target [0.49,0.51]), std=" + fmt(stdev) +
               " (target [0.09,0.11])";
  return res;
}

// Criterion: with the joint score of a bivariate normal (rho=0.8, unit
// variances) and conditioning y=1, conditional sampling recovers mean
// 0.8 +- 0.03 and variance 0.36 +- 15%.
CheckResult check_conditional_identity(const SelfCheckOptions& opt) {
  CheckResult res{"conditional_gaussian_identity", false, ""};
  const NoiseSchedule schedule(0.01, 10.0, 500);
  SamplerConfig cfg;
  cfg.num_steps = 500;
  cfg.corrector_steps = 1;
  cfg.snr = opt.snr;
  cfg.seed = 20240602;
  cfg.clip_output = false;

  Mat<double> cov(2, 2);
  cov << 1.0, 0.8, 0.8, 1.0;
  GaussianSpec spec(Vec<double>::Zero(2), cov);
  const double y_val = 1.0;

  ScoreFn<double> score = [&spec, schedule](const Array2d& x, const Array2d& y,
                                            double t) {
    // joint score is affine in x for fixed y; evaluate slope and offset once
    Vec<double> y1 = Vec<double>::Constant(1, y(0, 0));
    Vec<double> x0 = Vec<double>::Zero(1), x1 = Vec<double>::Ones(1);
    const double b = joint_score_x(spec, x0, y1, t, schedule)(0);
    const double a = joint_score_x(spec, x1, y1, t, schedule)(0) - b;
    return (a * x + b).eval();
  };

  Array2d y_img = Array2d::Constant(64, 64, y_val);
  Array2d x = pc_sample<double>(y_img, score, schedule, cfg);
  const double mean = x.mean();
  const double var = (x - mean).square().mean();
  res.pass = std::abs(mean - 0.8) <= 0.03 && var >= 0.36 * 0.85 && var <= 0.36 * 1.15;
  res.detail = "mean=" + fmt(mean) + " (target 0.8+-0.03), var=" + fmt(var) +
               " (target 0.36+-15%)";
  return res;
}

// Criterion: eps = 2 (r ||z|| / ||s||)^2 exactly, plus the c^2 scaling law.
CheckResult check_corrector_law(const SelfCheckOptions&) {
  CheckResult res{"corrector_step_law", false, ""};
  const double eps_base = corrector_eps(0.16, 1.0, 1.0);
  bool ok = std::abs(eps_base - 0.0512) < 1e-15;
  for (double c : {0.5, 2.0, 10.0}) {
    const double ratio = corrector_eps(0.16, c * 3.7, 3.7) / corrector_eps(0.16, 3.7, 3.7);
    ok = ok && std::abs(ratio - c * c) < 1e-12;
  }
  res.pass = ok;
  res.detail = "eps(r=0.16, ||z||=||s||)=" + fmt(eps_base) +
               " (target 0.0512); scaling law eps(c z)/eps(z)=c^2 for c in {0.5,2,10}";
  return res;
}

// Criterion: substituting the exact per-draw target -z/sigma(t) gives zero loss.
CheckResult check_dsm_oracle_zero(const SelfCheckOptions&) {
  CheckResult res{"dsm_oracle_zero", false, ""};
  const NoiseSchedule schedule(0.01, 1.0, 100);
  RngStream rng(7);
  std::vector<PairedSlice> batch;
  for (int i = 0; i < 4; ++i) {
    PairedSlice p;
    p.id = "g" + std::to_string(i);
    p.pet = rng.normal_array<float>(8, 8);
    p.mri = rng.normal_array<float>(8, 8);
    batch.push_back(std::move(p));
  }
  const double loss = dsm_loss_with_score(
      [&](const Array2d&, const Array2d&, double t, const Array2d& z) {
        return (-z / sigma_at(schedule, t)).eval();
      },
      batch, schedule, 99);
  res.pass = loss < 1e-6;
  res.detail = "loss=" + fmt(loss) + " (target < 1e-6)";
  return res;
}

// Criterion: a zero score leaves the residual equal to z, so the per-pixel
// loss is E[z^2] = 1 within 5% over >= 10^4 pixels.
CheckResult check_dsm_zero_score(const SelfCheckOptions&) {
  CheckResult res{"dsm_zero_score_unit", false, ""};
  const NoiseSchedule schedule(0.01, 1.0, 100);
  RngStream rng(11);
  std::vector<PairedSlice> batch;
  for (int i = 0; i < 4; ++i) {
    PairedSlice p;
    p.id = "g" + std::to_string(i);
    p.pet = rng.normal_array<float>(64, 64);
    p.mri = Array2f::Zero(64, 64);
    batch.push_back(std::move(p));
  }
  const double loss = dsm_loss_with_score(
      [](const Array2d& x, const Array2d&, double, const Array2d&) {
        return (x * 0.0).eval();
      },
      batch, schedule, 123);
  res.pass = std::abs(loss - 1.0) < 0.05;
  res.detail = "loss=" + fmt(loss) + " (target 1 +- 5%, 16384 pixels)";
  return res;
}

// Criterion: with the exact marginal score of N(0, sigma_d^2), the DSM loss
// equals its analytic minimum E_t[sigma_d^2 / (sigma_d^2 + sigma(t)^2)],
// computed here by quadrature.
CheckResult check_dsm_analytic_minimum(const SelfCheckOptions&) {
  CheckResult res{"dsm_analytic_minimum", false, ""};
  const NoiseSchedule schedule(0.01, 1.0, 100);
  const double var_d = 0.25;
  const double t_floor = 1e-5;

  RngStream rng(31);
  std::vector<PairedSlice> batch;
  for (int i = 0; i < 1024; ++i) {
    PairedSlice p;
    p.id = "g" + std::to_string(i);
    p.pet = (rng.normal_array<float>(32, 32) * std::sqrt(var_d)).eval();
    p.mri = Array2f::Zero(32, 32);
    batch.push_back(std::move(p));
  }
  auto score = scalar_marginal_score(0.0, var_d, schedule);
  const double loss = dsm_loss_with_score(
      [&](const Array2d& x, const Array2d& y, double t, const Array2d&) {
        return score(x, y, t);
      },
      batch, schedule, 777, t_floor);

  // trapezoid quadrature of the analytic minimum over t ~ U(t_floor, 1)
  const int n = 20001;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = t_floor + (1.0 - t_floor) * i / (n - 1);
    const double sig = sigma_at(schedule, t);
    const double f = var_d / (var_d + sig * sig);
    acc += (i == 0 || i == n - 1) ? 0.5 * f : f;
  }
  const double target = acc / (n - 1);
  res.pass = std::abs(loss - target) <= 0.03 * target;
  res.detail = "loss=" + fmt(loss) + ", analytic minimum=" + fmt(target) +
               " (tolerance 3%)";
  return res;
}

// Criterion: a 2-parameter affine score s = a x + b trained by DSM on
// N(0, 0.25) data recovers the analytic slope at sigma_min within 10%.
// The toy schedule keeps sigma well below sigma_d so the slope is nearly
// level-independent.
CheckResult check_dsm_affine_slope(const SelfCheckOptions&) {
  CheckResult res{"dsm_affine_slope", false, ""};
  const NoiseSchedule schedule(0.01, 0.1, 100);
  const double var_d = 0.25;
  const double target = -1.0 / (var_d + schedule.sigma_min * schedule.sigma_min);

  RngStream rng(51);
  double a = 0.0, b = 0.0;
  double ma = 0, va = 0, mb = 0, vb = 0;
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const int steps = 2000, batch = 1024;
  for (int s = 1; s <= steps; ++s) {
    double ga = 0, gb = 0;
    for (int k = 0; k < batch; ++k) {
      const double t = rng.uniform(1e-5, 1.0);
      const double sig = sigma_at(schedule, t);
      const double x0 = rng.normal() * std::sqrt(var_d);
      const double z = rng.normal();
      const double xt = x0 + sig * z;
      const double r = sig * (a * xt + b) + z;
      ga += 2.0 * r * sig * xt / batch;
      gb += 2.0 * r * sig / batch;
    }
    ma = b1 * ma + (1 - b1) * ga;
    va = b2 * va + (1 - b2) * ga * ga;
    mb = b1 * mb + (1 - b1) * gb;
    vb = b2 * vb + (1 - b2) * gb * gb;
    const double c1 = 1 - std::pow(b1, s), c2 = 1 - std::pow(b2, s);
    a -= lr * (ma / c1) / (std::sqrt(va / c2) + eps);
    b -= lr * (mb / c1) / (std::sqrt(vb / c2) + eps);
  }
  const double rel = std::abs(a - target) / std::abs(target);
  res.pass = rel <= 0.10;
  res.detail = "a=" + fmt(a) + ", analytic slope at sigma_min=" + fmt(target) +
               ", rel err=" + fmt(rel) + " (tolerance 10%)";
  return res;
}

// Iterating the corrector alone at a fixed small noise level must leave
// the target density invariant: the chain mean stays within +-0.02.
CheckResult check_corrector_stationarity(const SelfCheckOptions& opt) {
  CheckResult res{"corrector_stationarity", false, ""};
  const NoiseSchedule schedule(0.01, 1.0, 500);
  const double mu = 0.5, var_d = 0.01;
  auto score = scalar_marginal_score(mu, var_d, schedule);

  const int level = 10;  // small sigma_i
  const double t_i = schedule.t_of_index(level);
  const double sig = sigma_at(schedule, t_i);
  const double v_level = var_d + sig * sig;

  RngStream rng(20240603, 0xC0441ULL);
  Array2d x(64, 64);
  rng.fill_normal(x);
  x = mu + x * std::sqrt(v_level);  // start at the level's stationary law

  ScoreFn<double> sf = score;
  for (int it = 0; it < 200; ++it)
    x = corrector_step<double>(x, Array2d::Zero(64, 64), level, sf, schedule,
                               opt.snr, rng);
  const double mean = x.allFinite() ? x.mean() : std::nan("");
  res.pass = std::isfinite(mean) && std::abs(mean - mu) <= 0.02;
  res.detail = "mean after 200 corrector steps=" + fmt(mean) + " (target 0.5+-0.02)";
  return res;
}

using CheckFn = std::function<CheckResult(const SelfCheckOptions&)>;

const std::vector<std::pair<std::string, CheckFn>>& registry() {
  static const std::vector<std::pair<std::string, CheckFn>> r = {
      {"unconditional_gaussian_recovery", check_unconditional_recovery},
      {"conditional_gaussian_identity", check_conditional_identity},
      {"corrector_step_law", check_corrector_law},
      {"dsm_oracle_zero", check_dsm_oracle_zero},
      {"dsm_zero_score_unit", check_dsm_zero_score},
      {"dsm_analytic_minimum", check_dsm_analytic_minimum},
      {"dsm_affine_slope", check_dsm_affine_slope},
      {"corrector_stationarity", check_corrector_stationarity},
  };
  return r;
}

}  // namespace

std::vector<std::string> selfcheck_names() {
  std::vector<std::string> names;
  for (const auto& [n, f] : registry()) names.push_back(n);
  return names;
}

CheckResult run_selfcheck(const std::string& name, const SelfCheckOptions& opt) {
  for (const auto& [n, f] : registry())
    if (n == name) return f(opt);
  throw ConfigError("unknown self-check '" + name + "'");
}

std::vector<CheckResult> run_all_selfchecks(const SelfCheckOptions& opt) {
  std::vector<CheckResult> out;
  for (const auto& [n, f] : registry()) out.push_back(f(opt));
  return out;
}

}  // namespace jdam
