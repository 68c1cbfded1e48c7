#ifndef JDAM_SAMPLER_HPP
#define JDAM_SAMPLER_HPP

#include <cmath>
#include <functional>
#include <iostream>
#include <vector>

#include "jdam/rng.hpp"
#include "jdam/sde.hpp"
#include "jdam/unet.hpp"

namespace jdam {

struct SamplerConfig {
  int num_steps = 1000;       // must match the schedule's N
  int corrector_steps = 1;    // M
  double snr = 0.16;          // r
  std::uint64_t seed = 0;
  bool conditional = true;
  bool init_mri_plus_noise = false;  // prose-variant initialization
  bool clip_output = true;           // clip final sample to [clip_lo, clip_hi]
  double clip_lo = 0.0, clip_hi = 1.0;

  void validate(const NoiseSchedule& schedule) const {
    if (num_steps != schedule.num_steps)
      throw ConfigError("SamplerConfig: num_steps (" + std::to_string(num_steps) +
                        ") must match schedule N (" +
                        std::to_string(schedule.num_steps) + ")");
    if (corrector_steps < 0) throw ConfigError("SamplerConfig: corrector_steps < 0");
    if (!(snr > 0.0)) throw ConfigError("SamplerConfig: snr must be > 0");
  }
};

template <typename Scalar>
using ScoreFn = std::function<Array2<Scalar>(const Array2<Scalar>& x,
                                             const Array2<Scalar>& y, double t)>;

/// Langevin step size eps = 2 (r ||z|| / ||s||)^2 (Algorithm-2 form).
inline double corrector_eps(double snr, double z_norm, double s_norm) {
  const double q = snr * z_norm / s_norm;
  return 2.0 * q * q;
}

/// One reverse-diffusion update with explicit noise:
/// x + (sig_hi^2 - sig_lo^2) s + sqrt(sig_hi^2 - sig_lo^2) z.
template <typename Scalar>
Array2<Scalar> predictor_update(const Array2<Scalar>& x, const Array2<Scalar>& s,
                                double sig_hi, double sig_lo,
                                const Array2<Scalar>& z) {
  const double dvar = sig_hi * sig_hi - sig_lo * sig_lo;
  return x + static_cast<Scalar>(dvar) * s +
         static_cast<Scalar>(std::sqrt(dvar)) * z;
}

/// One Langevin update with explicit noise; identity (with a warning) when
/// the score vanishes and the step size is undefined.
template <typename Scalar>
Array2<Scalar> corrector_update(const Array2<Scalar>& x, const Array2<Scalar>& s,
                                const Array2<Scalar>& z, double snr) {
  if (!(snr > 0.0)) throw DomainError("corrector_update: snr must be > 0");
  const double s_norm = std::sqrt(static_cast<double>(
      s.template cast<double>().square().sum()));
  const double z_norm = std::sqrt(static_cast<double>(
      z.template cast<double>().square().sum()));
  if (s_norm == 0.0) {
    std::cerr << "[jdam] corrector: zero score norm, skipping step\n";
    return x;
  }
  const double eps = corrector_eps(snr, z_norm, s_norm);
  return x + static_cast<Scalar>(eps) * s +
         static_cast<Scalar>(std::sqrt(2.0 * eps)) * z;
}

namespace detail {

/// Discrete noise ladder with the reverse-time boundary: level index i in
/// [0, N] maps to sigma_i, where sigma_1..sigma_N are the schedule's
/// geometric levels and sigma_0 = 0 closes the final contraction.
struct SigmaLadder {
  std::vector<double> sig;  // sig[k] = sigma_{k+1}, k in [0, N-1]
  int n = 0;

  explicit SigmaLadder(const NoiseSchedule& s)
      : sig(discrete_sigmas(s)), n(s.num_steps) {}

  double level(int i) const { return i == 0 ? 0.0 : sig[static_cast<std::size_t>(i - 1)]; }
  double t_of_level(int i) const {
    return static_cast<double>(i - 1) / static_cast<double>(n - 1);
  }
};

}  // namespace detail

/// Predictor step i in [0, N-1]: moves the state from noise level i+1 down
/// to level i using the score at level i+1.
template <typename Scalar>
Array2<Scalar> predictor_step(const Array2<Scalar>& x_next, const Array2<Scalar>& mri,
                              int i, const ScoreFn<Scalar>& score,
                              const NoiseSchedule& schedule, RngStream& rng) {
  if (i < 0 || i > schedule.num_steps - 1)
    throw DomainError("predictor_step: index out of range");
  require_same_shape(x_next, mri, "predictor_step");
  detail::SigmaLadder ladder(schedule);
  const double sig_hi = ladder.level(i + 1);
  const double sig_lo = ladder.level(i);
  const double t_hi = ladder.t_of_level(i + 1);
  Array2<Scalar> s = score(x_next, mri, t_hi);
  Array2<Scalar> z = rng.normal_array<Scalar>(x_next.rows(), x_next.cols());
  return predictor_update(x_next, s, sig_hi, sig_lo, z);
}

/// Corrector step at level i in [1, N-1]: Langevin dynamics targeting the
/// marginal at sigma_i.
template <typename Scalar>
Array2<Scalar> corrector_step(const Array2<Scalar>& x, const Array2<Scalar>& mri,
                              int i, const ScoreFn<Scalar>& score,
                              const NoiseSchedule& schedule, double snr,
                              RngStream& rng) {
  if (i < 1 || i > schedule.num_steps - 1)
    throw DomainError("corrector_step: index out of range");
  require_same_shape(x, mri, "corrector_step");
  detail::SigmaLadder ladder(schedule);
  Array2<Scalar> s = score(x, mri, ladder.t_of_level(i));
  Array2<Scalar> z = rng.normal_array<Scalar>(x.rows(), x.cols());
  return corrector_update(x, s, z, snr);
}

/// Called after each completed noise level with (level, sigma_level, state).
template <typename Scalar>
using TrajectorySink = std::function<void(int, double, const Array2<Scalar>&)>;

/// Full predictor-corrector sampling loop (Algorithm-2 structure):
/// x_N ~ N(0, sigma_max^2 I); for i = N-1..0 one predictor step then M
/// corrector steps (the corrector is skipped at i = 0, where sigma_0 = 0
/// puts Langevin dynamics outside the score's domain). The conditioning
/// image is held fixed throughout.
template <typename Scalar>
Array2<Scalar> pc_sample(const Array2<Scalar>& mri, const ScoreFn<Scalar>& score,
                         const NoiseSchedule& schedule, const SamplerConfig& cfg,
                         std::uint64_t sample_index = 0,
                         const TrajectorySink<Scalar>& sink = nullptr) {
  cfg.validate(schedule);
  RngStream rng(cfg.seed, 0xA17E5ULL, sample_index);
  detail::SigmaLadder ladder(schedule);

  Array2<Scalar> x = rng.normal_array<Scalar>(mri.rows(), mri.cols());
  x *= static_cast<Scalar>(schedule.sigma_max);
  if (cfg.init_mri_plus_noise) x += mri;

  for (int i = schedule.num_steps - 1; i >= 0; --i) {
    x = predictor_step(x, mri, i, score, schedule, rng);
    if (i >= 1)
      for (int j = 0; j < cfg.corrector_steps; ++j)
        x = corrector_step(x, mri, i, score, schedule, cfg.snr, rng);
    if (!x.allFinite())
      throw NumericalError("pc_sample: non-finite state at level " +
                           std::to_string(i) + " (sigma " +
                           std::to_string(ladder.level(i)) + ")");
    if (sink) sink(i, ladder.level(i), x);
  }
  if (cfg.clip_output)
    x = x.min(static_cast<Scalar>(cfg.clip_hi)).max(static_cast<Scalar>(cfg.clip_lo));
  return x;
}

/// Unconditional ablation: the PC loop with an all-zeros condition channel.
template <typename Scalar>
Array2<Scalar> sample_unconditional(const ScoreFn<Scalar>& score,
                                    const NoiseSchedule& schedule,
                                    const SamplerConfig& cfg, int height, int width,
                                    std::uint64_t sample_index = 0,
                                    const TrajectorySink<Scalar>& sink = nullptr) {
  if (cfg.conditional)
    throw ConfigError("sample_unconditional: cfg.conditional must be false");
  Array2<Scalar> zeros = Array2<Scalar>::Zero(height, width);
  return pc_sample<Scalar>(zeros, score, schedule, cfg, sample_index, sink);
}

/// Score function backed by a trained network.
template <typename Scalar>
ScoreFn<Scalar> make_network_score(ScoreUNet<Scalar>& net,
                                   const NoiseSchedule& schedule) {
  return [&net, schedule](const Array2<Scalar>& x, const Array2<Scalar>& y,
                          double t) { return score_forward(net, x, y, t, schedule); };
}

/// Batched PC sampling through the network: per-sample RNG streams are
/// derived from (seed, sample index), so results are bit-identical to
/// running pc_sample per input with matching indices.
template <typename Scalar>
std::vector<Array2<Scalar>> pc_sample_batch(ScoreUNet<Scalar>& net,
                                            const std::vector<Array2<Scalar>>& mris,
                                            const NoiseSchedule& schedule,
                                            const SamplerConfig& cfg) {
  cfg.validate(schedule);
  if (mris.empty()) return {};
  const int b = static_cast<int>(mris.size());
  const int h = static_cast<int>(mris[0].rows());
  const int w = static_cast<int>(mris[0].cols());
  for (const auto& m : mris) require_same_shape(m, mris[0], "pc_sample_batch");
  net.check_spatial(h, w);
  detail::SigmaLadder ladder(schedule);
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;

  std::vector<RngStream> streams;
  streams.reserve(static_cast<std::size_t>(b));
  for (int bi = 0; bi < b; ++bi)
    streams.emplace_back(cfg.seed, 0xA17E5ULL, static_cast<std::uint64_t>(bi));

  FeatureMap<Scalar> state(b, 2, h, w);
  for (int bi = 0; bi < b; ++bi) {
    auto blk = state.sample(bi);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const Eigen::Index col = static_cast<Eigen::Index>(r) * w + c;
        blk(0, col) = static_cast<Scalar>(streams[static_cast<std::size_t>(bi)].normal() *
                                          schedule.sigma_max);
        if (cfg.init_mri_plus_noise)
          blk(0, col) += static_cast<Scalar>(mris[static_cast<std::size_t>(bi)](r, c));
        blk(1, col) = static_cast<Scalar>(mris[static_cast<std::size_t>(bi)](r, c));
      }
  }

  auto batched_scores = [&](double t) {
    const double sig = sigma_at(schedule, t);
    Vec<double> ls = Vec<double>::Constant(b, std::log(sig));
    FeatureMap<Scalar> v = net.forward_raw(state, ls, nullptr);
    net.release_cache();
    v.data /= static_cast<Scalar>(sig);
    return v;  // 1-channel score map per sample
  };

  for (int i = schedule.num_steps - 1; i >= 0; --i) {
    // predictor
    {
      const double sig_hi = ladder.level(i + 1);
      const double sig_lo = ladder.level(i);
      const double dvar = sig_hi * sig_hi - sig_lo * sig_lo;
      FeatureMap<Scalar> s = batched_scores(ladder.t_of_level(i + 1));
      for (int bi = 0; bi < b; ++bi) {
        auto blk = state.sample(bi);
        auto& rs = streams[static_cast<std::size_t>(bi)];
        for (Eigen::Index col = 0; col < hw; ++col)
          blk(0, col) += static_cast<Scalar>(dvar) * s.sample(bi)(0, col) +
                         static_cast<Scalar>(std::sqrt(dvar) * rs.normal());
      }
    }
    // correctors
    if (i >= 1) {
      for (int j = 0; j < cfg.corrector_steps; ++j) {
        FeatureMap<Scalar> s = batched_scores(ladder.t_of_level(i));
        for (int bi = 0; bi < b; ++bi) {
          auto sblk = s.sample(bi);
          auto blk = state.sample(bi);
          auto& rs = streams[static_cast<std::size_t>(bi)];
          Array2<Scalar> z(h, w);
          for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) z(r, c) = static_cast<Scalar>(rs.normal());
          const double s_norm = std::sqrt(static_cast<double>(
              sblk.row(0).template cast<double>().array().square().sum()));
          if (s_norm == 0.0) {
            std::cerr << "[jdam] corrector: zero score norm, skipping step\n";
            continue;
          }
          const double z_norm = std::sqrt(static_cast<double>(
              z.template cast<double>().square().sum()));
          const double eps = corrector_eps(cfg.snr, z_norm, s_norm);
          for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
              const Eigen::Index col = static_cast<Eigen::Index>(r) * w + c;
              blk(0, col) += static_cast<Scalar>(eps) * sblk(0, col) +
                             static_cast<Scalar>(std::sqrt(2.0 * eps)) * z(r, c);
            }
        }
      }
    }
    if (!state.data.allFinite())
      throw NumericalError("pc_sample_batch: non-finite state at level " +
                           std::to_string(i));
  }

  std::vector<Array2<Scalar>> out(static_cast<std::size_t>(b));
  for (int bi = 0; bi < b; ++bi) {
    Array2<Scalar> img(h, w);
    auto blk = state.sample(bi);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        img(r, c) = blk(0, static_cast<Eigen::Index>(r) * w + c);
    if (cfg.clip_output)
      img = img.min(static_cast<Scalar>(cfg.clip_hi))
                .max(static_cast<Scalar>(cfg.clip_lo));
    out[static_cast<std::size_t>(bi)] = std::move(img);
  }
  return out;
}

}  // namespace jdam

#endif  // JDAM_SAMPLER_HPP
