#ifndef JDAM_UNET_HPP
#define JDAM_UNET_HPP

#include <cstdint>
#include <set>
#include <vector>

#include "jdam/layers.hpp"
#include "jdam/sde.hpp"

namespace jdam {

/// Architecture of the 2-channel score U-Net. Input channels are fixed at
/// 2 (noised PET + MRI condition), output at 1 (score field for PET).
struct UNetConfig {
  int base_channels = 32;
  std::vector<int> channel_multipliers = {1, 2, 2};
  int num_res_blocks_per_level = 1;
  std::set<int> attention_levels = {2};
  int groupnorm_groups = 8;
  double dropout_rate = 0.1;
  int time_embedding_dim = 64;

  static constexpr int input_channels = 2;
  static constexpr int output_channels = 1;

  int num_levels() const { return static_cast<int>(channel_multipliers.size()); }
  int level_channels(int l) const { return base_channels * channel_multipliers[static_cast<std::size_t>(l)]; }

  void validate() const {
    if (base_channels < 1) throw ConfigError("UNetConfig: base_channels < 1");
    if (channel_multipliers.empty())
      throw ConfigError("UNetConfig: channel_multipliers empty");
    if (num_res_blocks_per_level < 1)
      throw ConfigError("UNetConfig: num_res_blocks_per_level < 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw ConfigError("UNetConfig: dropout_rate outside [0,1)");
    if (time_embedding_dim < 4 || time_embedding_dim % 2 != 0)
      throw ConfigError("UNetConfig: time_embedding_dim must be even and >= 4");
    for (int l = 0; l < num_levels(); ++l) {
      if (channel_multipliers[static_cast<std::size_t>(l)] < 1)
        throw ConfigError("UNetConfig: channel multiplier < 1");
      if (level_channels(l) % groupnorm_groups != 0)
        throw ConfigError("UNetConfig: level " + std::to_string(l) + " channels (" +
                          std::to_string(level_channels(l)) +
                          ") not divisible by groupnorm_groups (" +
                          std::to_string(groupnorm_groups) + ")");
    }
    for (int l : attention_levels)
      if (l < 0 || l >= num_levels())
        throw ConfigError("UNetConfig: attention level out of range");
  }

  /// Desk preset for 32x32 phantoms.
  static UNetConfig desk32() { return UNetConfig{}; }

  /// Larger preset for 128x128 slices.
  static UNetConfig large128() {
    UNetConfig c;
    c.base_channels = 64;
    c.channel_multipliers = {1, 2, 2, 2};
    c.num_res_blocks_per_level = 2;
    c.attention_levels = {3};
    return c;
  }

  bool operator==(const UNetConfig&) const = default;
};

/// The score network: mirror-symmetric encoder/decoder of residual blocks
/// with channel-concatenation skips, self-attention at the configured
/// levels, average-pool downsampling and nearest-neighbor upsampling.
/// forward_raw returns the unscaled network output v; the score estimate
/// is v / sigma(t) (see score_forward).
template <typename Scalar>
class ScoreUNet {
 public:
  ScoreUNet() = default;

  ScoreUNet(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    RngStream rng(seed);
    const int levels = cfg_.num_levels();
    const int blocks = cfg_.num_res_blocks_per_level;

    temb_.init(cfg_.time_embedding_dim, rng);
    in_conv_.init(UNetConfig::input_channels, cfg_.base_channels, rng);

    int prev = cfg_.base_channels;
    enc_blocks_.resize(static_cast<std::size_t>(levels));
    enc_attn_.resize(static_cast<std::size_t>(levels));
    for (int l = 0; l < levels; ++l) {
      const int ch = cfg_.level_channels(l);
      for (int j = 0; j < blocks; ++j) {
        ResNetBlock<Scalar> rb;
        rb.init(j == 0 ? prev : ch, ch, cfg_.groupnorm_groups,
                cfg_.time_embedding_dim, cfg_.dropout_rate, rng);
        enc_blocks_[static_cast<std::size_t>(l)].push_back(std::move(rb));
      }
      if (cfg_.attention_levels.count(l)) {
        SelfAttention<Scalar> at;
        at.init(ch, cfg_.groupnorm_groups, rng);
        enc_attn_[static_cast<std::size_t>(l)].push_back(std::move(at));
      }
      prev = ch;
    }

    dec_blocks_.resize(static_cast<std::size_t>(levels));
    dec_attn_.resize(static_cast<std::size_t>(levels));
    for (int l = levels - 1; l >= 0; --l) {
      const int ch = cfg_.level_channels(l);
      for (int j = 0; j < blocks; ++j) {
        ResNetBlock<Scalar> rb;
        // first decoder block at a level consumes concat(h, skip_l)
        rb.init(j == 0 ? prev + ch : ch, ch, cfg_.groupnorm_groups,
                cfg_.time_embedding_dim, cfg_.dropout_rate, rng);
        dec_blocks_[static_cast<std::size_t>(l)].push_back(std::move(rb));
      }
      if (cfg_.attention_levels.count(l)) {
        SelfAttention<Scalar> at;
        at.init(ch, cfg_.groupnorm_groups, rng);
        dec_attn_[static_cast<std::size_t>(l)].push_back(std::move(at));
      }
      prev = ch;
    }

    head_norm_.init(cfg_.level_channels(0), cfg_.groupnorm_groups);
    head_conv_.init(cfg_.level_channels(0), UNetConfig::output_channels, rng);
  }

  const UNetConfig& config() const { return cfg_; }

  void check_spatial(int h, int w) const {
    const int div = 1 << (cfg_.num_levels() - 1);
    if (h % div != 0 || w % div != 0)
      throw DimensionError("ScoreUNet: spatial dims " + std::to_string(h) + "x" +
                           std::to_string(w) + " not divisible by " +
                           std::to_string(div));
  }

  /// Raw output v on a batched 2-channel input; log_sigmas has one entry
  /// per batch element. drop_rng enables dropout (training mode).
  FeatureMap<Scalar> forward_raw(const FeatureMap<Scalar>& x,
                                 const Vec<double>& log_sigmas,
                                 RngStream* drop_rng = nullptr) {
    if (x.channels != UNetConfig::input_channels)
      throw DimensionError("ScoreUNet: expected 2 input channels");
    if (log_sigmas.size() != x.batch)
      throw DimensionError("ScoreUNet: log_sigmas/batch mismatch");
    check_spatial(x.height, x.width);

    const int levels = cfg_.num_levels();
    temb_out_ = temb_.forward(log_sigmas);

    FeatureMap<Scalar> h = in_conv_.forward(x);
    skips_.assign(static_cast<std::size_t>(levels), FeatureMap<Scalar>());
    for (int l = 0; l < levels; ++l) {
      for (auto& rb : enc_blocks_[static_cast<std::size_t>(l)])
        h = rb.forward(h, temb_out_, drop_rng);
      for (auto& at : enc_attn_[static_cast<std::size_t>(l)]) h = at.forward(h);
      skips_[static_cast<std::size_t>(l)] = h;
      if (l < levels - 1) h = down_.forward(h);
    }

    for (int l = levels - 1; l >= 0; --l) {
      h = concat_channels(h, skips_[static_cast<std::size_t>(l)]);
      for (auto& rb : dec_blocks_[static_cast<std::size_t>(l)])
        h = rb.forward(h, temb_out_, drop_rng);
      for (auto& at : dec_attn_[static_cast<std::size_t>(l)]) h = at.forward(h);
      if (l > 0) h = up_.forward(h);
    }

    h = head_norm_.forward(h);
    h = head_act_.forward(h);
    return head_conv_.forward(h);
  }

  /// Accumulates parameter gradients for the cached forward pass.
  void backward(const FeatureMap<Scalar>& gv) {
    const int levels = cfg_.num_levels();
    Mat<Scalar> gtemb = Mat<Scalar>::Zero(cfg_.time_embedding_dim, gv.batch);

    FeatureMap<Scalar> g = head_conv_.backward(gv);
    g = head_act_.backward(g);
    g = head_norm_.backward(g);

    std::vector<FeatureMap<Scalar>> gskips(static_cast<std::size_t>(levels));
    for (int l = 0; l < levels; ++l) {
      if (l > 0) g = up_.backward(g);
      auto& attns = dec_attn_[static_cast<std::size_t>(l)];
      for (auto it = attns.rbegin(); it != attns.rend(); ++it)
        g = it->backward(g);
      auto& blocks = dec_blocks_[static_cast<std::size_t>(l)];
      for (auto it = blocks.rbegin(); it != blocks.rend(); ++it)
        g = it->backward(g, gtemb);
      // split the concat grad back into trunk + skip
      const int skip_ch = skips_[static_cast<std::size_t>(l)].channels;
      const int trunk_ch = g.channels - skip_ch;
      FeatureMap<Scalar> gtrunk(g.batch, trunk_ch, g.height, g.width);
      gtrunk.data = g.data.topRows(trunk_ch);
      gskips[static_cast<std::size_t>(l)] = FeatureMap<Scalar>(g.batch, skip_ch, g.height, g.width);
      gskips[static_cast<std::size_t>(l)].data = g.data.bottomRows(skip_ch);
      g = std::move(gtrunk);
    }

    for (int l = levels - 1; l >= 0; --l) {
      if (l < levels - 1) {
        g = down_.backward(g, skips_[static_cast<std::size_t>(l)].height,
                           skips_[static_cast<std::size_t>(l)].width);
        g.data += gskips[static_cast<std::size_t>(l)].data;
      } else {
        // deepest level: the encoder output entered the first concat as
        // both trunk and skip, so both gradients flow back into it
        g.data += gskips[static_cast<std::size_t>(l)].data;
      }
      auto& attns = enc_attn_[static_cast<std::size_t>(l)];
      for (auto it = attns.rbegin(); it != attns.rend(); ++it)
        g = it->backward(g);
      auto& blocks = enc_blocks_[static_cast<std::size_t>(l)];
      for (auto it = blocks.rbegin(); it != blocks.rend(); ++it)
        g = it->backward(g, gtemb);
    }
    in_conv_.backward(g);
    temb_.backward(gtemb);
  }

  template <typename F>
  void visit(F&& f) {
    temb_.visit("temb", f);
    in_conv_.visit("in_conv", f);
    const int levels = cfg_.num_levels();
    for (int l = 0; l < levels; ++l) {
      int j = 0;
      for (auto& rb : enc_blocks_[static_cast<std::size_t>(l)])
        rb.visit("enc" + std::to_string(l) + ".rb" + std::to_string(j++), f);
      j = 0;
      for (auto& at : enc_attn_[static_cast<std::size_t>(l)])
        at.visit("enc" + std::to_string(l) + ".attn" + std::to_string(j++), f);
    }
    for (int l = levels - 1; l >= 0; --l) {
      int j = 0;
      for (auto& rb : dec_blocks_[static_cast<std::size_t>(l)])
        rb.visit("dec" + std::to_string(l) + ".rb" + std::to_string(j++), f);
      j = 0;
      for (auto& at : dec_attn_[static_cast<std::size_t>(l)])
        at.visit("dec" + std::to_string(l) + ".attn" + std::to_string(j++), f);
    }
    head_norm_.visit("head.norm", f);
    head_conv_.visit("head.conv", f);
  }

  Eigen::Index param_count() {
    Eigen::Index n = 0;
    visit([&](const std::string&, Mat<Scalar>& w, Mat<Scalar>&) { n += w.size(); });
    return n;
  }

  Vec<Scalar> flatten() {
    Vec<Scalar> out(param_count());
    Eigen::Index off = 0;
    visit([&](const std::string&, Mat<Scalar>& w, Mat<Scalar>&) {
      out.segment(off, w.size()) = Eigen::Map<Vec<Scalar>>(w.data(), w.size());
      off += w.size();
    });
    return out;
  }

  Vec<Scalar> flatten_grads() {
    Vec<Scalar> out(param_count());
    Eigen::Index off = 0;
    visit([&](const std::string&, Mat<Scalar>&, Mat<Scalar>& g) {
      out.segment(off, g.size()) = Eigen::Map<Vec<Scalar>>(g.data(), g.size());
      off += g.size();
    });
    return out;
  }

  void unflatten(const Vec<Scalar>& v) {
    Eigen::Index off = 0;
    visit([&](const std::string&, Mat<Scalar>& w, Mat<Scalar>&) {
      Eigen::Map<Vec<Scalar>>(w.data(), w.size()) = v.segment(off, w.size());
      off += w.size();
    });
    if (off != v.size()) throw DimensionError("ScoreUNet::unflatten: size mismatch");
  }

  void zero_grads() {
    visit([](const std::string&, Mat<Scalar>&, Mat<Scalar>& g) { g.setZero(); });
  }

  /// Drops cached activations (they are only needed for backward).
  void release_cache() {
    skips_.clear();
    skips_.shrink_to_fit();
  }

 private:
  UNetConfig cfg_;
  TimeEmbedding<Scalar> temb_;
  Conv3x3<Scalar> in_conv_;
  std::vector<std::vector<ResNetBlock<Scalar>>> enc_blocks_, dec_blocks_;
  std::vector<std::vector<SelfAttention<Scalar>>> enc_attn_, dec_attn_;
  AvgPool2<Scalar> down_;
  UpsampleNearest2<Scalar> up_;
  GroupNorm<Scalar> head_norm_;
  SiLU<Scalar> head_act_;
  Conv3x3<Scalar> head_conv_;

  Mat<Scalar> temb_out_;
  std::vector<FeatureMap<Scalar>> skips_;
};

/// Learnable state: the live network, its EMA shadow (flat, same layout as
/// flatten()), and the optimizer step counter.
template <typename Scalar>
struct ScoreNetParamsT {
  ScoreUNet<Scalar> net;
  Vec<Scalar> ema;
  std::int64_t step_count = 0;

  /// A copy of the network carrying the EMA weights.
  ScoreUNet<Scalar> ema_net() const {
    ScoreUNet<Scalar> n = net;
    n.unflatten(ema);
    return n;
  }
};

using ScoreNetParams = ScoreNetParamsT<Real>;

template <typename Scalar>
ScoreNetParamsT<Scalar> build_unet_t(const UNetConfig& cfg, std::uint64_t seed) {
  ScoreNetParamsT<Scalar> p;
  p.net = ScoreUNet<Scalar>(cfg, seed);
  p.ema = p.net.flatten();
  p.step_count = 0;
  return p;
}

inline ScoreNetParams build_unet(const UNetConfig& cfg, std::uint64_t seed) {
  return build_unet_t<Real>(cfg, seed);
}

/// Score estimate s_theta(x_t, y, t) for a single pair: the raw network
/// output divided by sigma(t), so that sigma(t)*s_theta + z is the
/// unit-scale training residual.
template <typename Scalar>
Array2<Scalar> score_forward(ScoreUNet<Scalar>& net, const Array2<Scalar>& pet_t,
                             const Array2<Scalar>& mri, double t,
                             const NoiseSchedule& schedule) {
  require_same_shape(pet_t, mri, "score_forward");
  if (!(t >= 0.0 && t <= 1.0))
    throw DomainError("score_forward: t must lie in [0,1]");
  const int h = static_cast<int>(pet_t.rows());
  const int w = static_cast<int>(pet_t.cols());
  const double sig = sigma_at(schedule, t);

  FeatureMap<Scalar> x(1, 2, h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      x.data(0, static_cast<Eigen::Index>(r) * w + c) = pet_t(r, c);
      x.data(1, static_cast<Eigen::Index>(r) * w + c) = mri(r, c);
    }
  Vec<double> ls(1);
  ls(0) = std::log(sig);
  FeatureMap<Scalar> v = net.forward_raw(x, ls, nullptr);

  Array2<Scalar> out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      out(r, c) = v.data(0, static_cast<Eigen::Index>(r) * w + c) /
                  static_cast<Scalar>(sig);
  net.release_cache();
  return out;
}

}  // namespace jdam

#endif  // JDAM_UNET_HPP
