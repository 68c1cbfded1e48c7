#ifndef JDAM_TRAINING_HPP
#define JDAM_TRAINING_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "jdam/data_types.hpp"
#include "jdam/rng.hpp"
#include "jdam/sde.hpp"
#include "jdam/unet.hpp"

namespace jdam {

struct TrainConfig {
  int batch_size = 8;
  int total_steps = 3000;
  double learning_rate = 2e-4;
  double ema_decay = 0.999;
  std::optional<double> grad_clip_norm = 1.0;
  int checkpoint_every = 1000;
  std::uint64_t seed = 0;
  double condition_dropout = 0.0;  // probability of zeroing the MRI channel
  double t_floor = 1e-5;           // t ~ Uniform(t_floor, 1)

  void validate() const {
    if (total_steps < 1) throw ConfigError("TrainConfig: total_steps must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("TrainConfig: learning_rate <= 0");
    if (!(ema_decay > 0.0 && ema_decay < 1.0))
      throw ConfigError("TrainConfig: ema_decay outside (0,1)");
    if (grad_clip_norm && !(*grad_clip_norm > 0.0))
      throw ConfigError("TrainConfig: grad_clip_norm <= 0");
    if (checkpoint_every < 1) throw ConfigError("TrainConfig: checkpoint_every < 1");
    if (!(condition_dropout >= 0.0 && condition_dropout <= 1.0))
      throw ConfigError("TrainConfig: condition_dropout outside [0,1]");
  }
};

struct StepLog {
  int step = 0;
  double loss = 0.0;
  double sigma_mean = 0.0;
};

/// Denoising score-matching loss with an injectable score function,
/// evaluated in double precision one pair at a time. The score callable
/// receives (x_t, y, t, z) — z is passed so oracle substitutes like
/// -z/sigma(t) are expressible in tests and self-checks.
template <typename ScoreFn>
double dsm_loss_with_score(ScoreFn&& score, const std::vector<PairedSlice>& batch,
                           const NoiseSchedule& schedule, std::uint64_t rng_seed,
                           double t_floor = 1e-5) {
  if (batch.empty()) throw InputError("dsm_loss: empty batch");
  RngStream rng(rng_seed);
  double acc = 0.0;
  std::size_t total = 0;
  for (const auto& pair : batch) {
    require_same_shape(pair.pet, pair.mri, "dsm_loss");
    const double t = rng.uniform(t_floor, 1.0);
    const double sig = sigma_at(schedule, t);
    Array2d z = rng.normal_array<double>(pair.pet.rows(), pair.pet.cols());
    Array2d x0 = pair.pet.template cast<double>();
    Array2d y = pair.mri.template cast<double>();
    Array2d x_t = x0 + sig * z;
    Array2d s = score(x_t, y, t, z);
    acc += (sig * s + z).square().sum();
    total += static_cast<std::size_t>(z.size());
  }
  return acc / static_cast<double>(total);
}

namespace detail {

/// Draws per-example (t, z), assembles the batched 2-channel input and the
/// residual target. Shared between loss evaluation and training steps.
template <typename Scalar>
struct DsmBatch {
  FeatureMap<Scalar> input;   // channel 0: x_t, channel 1: mri
  FeatureMap<Scalar> noise;   // z, 1 channel
  Vec<double> log_sigmas;
  Vec<double> sigmas;
};

template <typename Scalar>
DsmBatch<Scalar> make_dsm_batch(const std::vector<const PairedSlice*>& batch,
                                const NoiseSchedule& schedule, RngStream& rng,
                                double t_floor, double condition_dropout) {
  const int b = static_cast<int>(batch.size());
  const int h = static_cast<int>(batch[0]->pet.rows());
  const int w = static_cast<int>(batch[0]->pet.cols());
  DsmBatch<Scalar> out;
  out.input = FeatureMap<Scalar>(b, 2, h, w);
  out.noise = FeatureMap<Scalar>(b, 1, h, w);
  out.log_sigmas.resize(b);
  out.sigmas.resize(b);
  for (int bi = 0; bi < b; ++bi) {
    const auto& pair = *batch[static_cast<std::size_t>(bi)];
    if (pair.pet.rows() != h || pair.pet.cols() != w)
      throw DimensionError("dsm batch: pair " + pair.id + " has mismatched dims");
    require_same_shape(pair.pet, pair.mri, "dsm batch");
    const double t = rng.uniform(t_floor, 1.0);
    const double sig = sigma_at(schedule, t);
    out.sigmas(bi) = sig;
    out.log_sigmas(bi) = std::log(sig);
    const bool drop_cond =
        condition_dropout > 0.0 && rng.bernoulli(condition_dropout);
    auto in_b = out.input.sample(bi);
    auto z_b = out.noise.sample(bi);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const Eigen::Index col = static_cast<Eigen::Index>(r) * w + c;
        const double z = rng.normal();
        z_b(0, col) = static_cast<Scalar>(z);
        in_b(0, col) = static_cast<Scalar>(pair.pet(r, c) + sig * z);
        in_b(1, col) = drop_cond ? Scalar(0) : static_cast<Scalar>(pair.mri(r, c));
      }
  }
  return out;
}

}  // namespace detail

/// DSM loss of the network on one batch: mean over batch and pixels of
/// (sigma(t) s_theta + z)^2, which with the v = sigma*s parametrization is
/// mean((v + z)^2). Deterministic given rng_seed.
template <typename Scalar>
double dsm_loss(ScoreNetParamsT<Scalar>& params, const std::vector<PairedSlice>& batch,
                const NoiseSchedule& schedule, std::uint64_t rng_seed,
                double t_floor = 1e-5) {
  if (batch.empty()) throw InputError("dsm_loss: empty batch");
  std::vector<const PairedSlice*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& p : batch) ptrs.push_back(&p);
  RngStream rng(rng_seed);
  auto db = detail::make_dsm_batch<Scalar>(ptrs, schedule, rng, t_floor, 0.0);
  FeatureMap<Scalar> v = params.net.forward_raw(db.input, db.log_sigmas, &rng);
  params.net.release_cache();
  return static_cast<double>(
      (v.data + db.noise.data).array().template cast<double>().square().mean());
}

/// Adam with bias correction; operates on the flat parameter vector.
template <typename Scalar>
class Adam {
 public:
  Adam(Eigen::Index n, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
        m_(Vec<Scalar>::Zero(n)), v_(Vec<Scalar>::Zero(n)) {}

  void step(Vec<Scalar>& theta, const Vec<Scalar>& grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = (beta2_ * v_.array() + (1.0 - beta2_) * grad.array().square()).matrix();
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    theta.array() -= static_cast<Scalar>(lr_ / bc1) * m_.array() /
                     ((v_.array() / static_cast<Scalar>(bc2)).sqrt() +
                      static_cast<Scalar>(eps_));
  }

  std::int64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  Vec<Scalar> m_, v_;
};

template <typename Scalar>
struct TrainResult {
  std::vector<StepLog> history;
};

/// Algorithm-1 training loop: shuffled minibatches, per-example (t, z),
/// Adam on the folded DSM objective, EMA tracking, periodic checkpoints
/// via the callback. Bit-reproducible given (cfg.seed, dataset order).
template <typename Scalar>
TrainResult<Scalar> train(
    ScoreNetParamsT<Scalar>& params, const std::vector<PairedSlice>& dataset,
    const NoiseSchedule& schedule, const TrainConfig& cfg,
    const std::function<void(const StepLog&)>& on_step = nullptr,
    const std::function<void(const ScoreNetParamsT<Scalar>&, int)>& on_checkpoint =
        nullptr) {
  cfg.validate();
  if (dataset.empty()) throw InputError("train: empty dataset");

  RngStream rng(cfg.seed, 0x7121A11ULL);
  Adam<Scalar> opt(params.net.param_count(), cfg.learning_rate);
  Vec<Scalar> theta = params.net.flatten();
  if (params.ema.size() != theta.size()) params.ema = theta;

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // force initial shuffle

  TrainResult<Scalar> result;
  result.history.reserve(static_cast<std::size_t>(cfg.total_steps));

  const int start_step = static_cast<int>(params.step_count);
  for (int step = start_step; step < start_step + cfg.total_steps; ++step) {
    std::vector<const PairedSlice*> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int k = 0; k < cfg.batch_size; ++k) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        cursor = 0;
      }
      batch.push_back(&dataset[order[cursor++]]);
    }

    auto db = detail::make_dsm_batch<Scalar>(batch, schedule, rng, cfg.t_floor,
                                             cfg.condition_dropout);
    FeatureMap<Scalar> v = params.net.forward_raw(db.input, db.log_sigmas, &rng);
    FeatureMap<Scalar> resid = v;
    resid.data += db.noise.data;
    const double loss =
        resid.data.array().template cast<double>().square().mean();

    if (!std::isfinite(loss)) {
      std::ostringstream os;
      os << "train: non-finite loss at step " << step << "; sigma draws:";
      for (Eigen::Index i = 0; i < db.sigmas.size(); ++i) os << " " << db.sigmas(i);
      throw NumericalError(os.str());
    }

    FeatureMap<Scalar> gv = resid;
    gv.data *= static_cast<Scalar>(2.0 / static_cast<double>(resid.data.size()));
    params.net.zero_grads();
    params.net.backward(gv);
    Vec<Scalar> grad = params.net.flatten_grads();

    if (cfg.grad_clip_norm) {
      const double gn = std::sqrt(static_cast<double>(
          grad.array().template cast<double>().square().sum()));
      if (gn > *cfg.grad_clip_norm && gn > 0.0)
        grad *= static_cast<Scalar>(*cfg.grad_clip_norm / gn);
    }

    opt.step(theta, grad);
    params.net.unflatten(theta);
    params.ema = static_cast<Scalar>(cfg.ema_decay) * params.ema +
                 static_cast<Scalar>(1.0 - cfg.ema_decay) * theta;
    params.step_count = step + 1;

    StepLog log{step, loss, db.sigmas.mean()};
    result.history.push_back(log);
    if (on_step) on_step(log);
    if (on_checkpoint && (step + 1) % cfg.checkpoint_every == 0)
      on_checkpoint(params, step + 1);
  }
  params.net.release_cache();
  return result;
}

}  // namespace jdam

#endif  // JDAM_TRAINING_HPP
