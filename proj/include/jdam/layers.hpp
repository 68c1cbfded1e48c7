#ifndef JDAM_LAYERS_HPP
#define JDAM_LAYERS_HPP

#include <cmath>
#include <string>
#include <vector>

#include "jdam/rng.hpp"
#include "jdam/tensor.hpp"

namespace jdam {

// Trainable layers store their parameters, matching gradient buffers, and
// whatever forward activations their backward pass needs. Training is
// single-writer: one forward, then one backward over the cached state.

template <typename Scalar>
void init_normal(Mat<Scalar>& m, RngStream& rng, double std_dev) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      m(i, j) = static_cast<Scalar>(rng.normal() * std_dev);
}

template <typename Scalar>
struct LinearLayer {
  Mat<Scalar> W, b;
  Mat<Scalar> gW, gb;
  Mat<Scalar> in_cache;

  void init(int out_dim, int in_dim, RngStream& rng) {
    W.resize(out_dim, in_dim);
    init_normal(W, rng, std::sqrt(1.0 / in_dim));
    b = Mat<Scalar>::Zero(out_dim, 1);
    gW = Mat<Scalar>::Zero(out_dim, in_dim);
    gb = Mat<Scalar>::Zero(out_dim, 1);
  }

  Mat<Scalar> forward(const Mat<Scalar>& x) {
    in_cache = x;
    return (W * x).colwise() + b.col(0);
  }

  Mat<Scalar> backward(const Mat<Scalar>& gy) {
    gW += gy * in_cache.transpose();
    gb.col(0) += gy.rowwise().sum();
    return W.transpose() * gy;
  }

  template <typename F>
  void visit(const std::string& p, F&& f) {
    f(p + ".W", W, gW);
    f(p + ".b", b, gb);
  }
};

/// 3x3 convolution, stride 1, zero padding 1, via im2col + GEMM.
/// Patch rows are grouped by kernel offset: row = (ky*3+kx)*C_in + ci.
template <typename Scalar>
struct Conv3x3 {
  int in_ch = 0, out_ch = 0;
  Mat<Scalar> W, b;   // W: (out_ch, in_ch*9)
  Mat<Scalar> gW, gb;
  FeatureMap<Scalar> in_cache;

  void init(int cin, int cout, RngStream& rng) {
    in_ch = cin;
    out_ch = cout;
    W.resize(cout, cin * 9);
    init_normal(W, rng, std::sqrt(2.0 / (cin * 9)));
    b = Mat<Scalar>::Zero(cout, 1);
    gW = Mat<Scalar>::Zero(cout, cin * 9);
    gb = Mat<Scalar>::Zero(cout, 1);
  }

  Mat<Scalar> im2col(const FeatureMap<Scalar>& x) const {
    const int H = x.height, Wd = x.width, C = x.channels;
    Mat<Scalar> cols(C * 9, x.cols());
    const Eigen::Index hw = x.hw();
#pragma omp parallel for schedule(static)
    for (int bi = 0; bi < x.batch; ++bi) {
      const Eigen::Index base = bi * hw;
      for (int y = 0; y < H; ++y) {
        for (int xx = 0; xx < Wd; ++xx) {
          const Eigen::Index col = base + static_cast<Eigen::Index>(y) * Wd + xx;
          for (int ky = 0; ky < 3; ++ky) {
            const int yy = y + ky - 1;
            for (int kx = 0; kx < 3; ++kx) {
              const int xs = xx + kx - 1;
              const int r0 = (ky * 3 + kx) * C;
              if (yy < 0 || yy >= H || xs < 0 || xs >= Wd) {
                cols.col(col).segment(r0, C).setZero();
              } else {
                cols.col(col).segment(r0, C) =
                    x.data.col(base + static_cast<Eigen::Index>(yy) * Wd + xs);
              }
            }
          }
        }
      }
    }
    return cols;
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) {
    if (x.channels != in_ch) throw DimensionError("Conv3x3: channel mismatch");
    in_cache = x;
    FeatureMap<Scalar> y(x.batch, out_ch, x.height, x.width);
    y.data.noalias() = W * im2col(x);
    y.data.colwise() += b.col(0);
    return y;
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& gy) {
    const Mat<Scalar> cols = im2col(in_cache);
    gW.noalias() += gy.data * cols.transpose();
    gb.col(0) += gy.data.rowwise().sum();
    const Mat<Scalar> gcols = W.transpose() * gy.data;

    FeatureMap<Scalar> gx(in_cache.batch, in_ch, in_cache.height, in_cache.width);
    const int H = gx.height, Wd = gx.width, C = in_ch;
    const Eigen::Index hw = gx.hw();
#pragma omp parallel for schedule(static)
    for (int bi = 0; bi < gx.batch; ++bi) {
      const Eigen::Index base = bi * hw;
      for (int y = 0; y < H; ++y) {
        for (int xx = 0; xx < Wd; ++xx) {
          const Eigen::Index col = base + static_cast<Eigen::Index>(y) * Wd + xx;
          for (int ky = 0; ky < 3; ++ky) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= H) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int xs = xx + kx - 1;
              if (xs < 0 || xs >= Wd) continue;
              gx.data.col(base + static_cast<Eigen::Index>(yy) * Wd + xs) +=
                  gcols.col(col).segment((ky * 3 + kx) * C, C);
            }
          }
        }
      }
    }
    return gx;
  }

  template <typename F>
  void visit(const std::string& p, F&& f) {
    f(p + ".W", W, gW);
    f(p + ".b", b, gb);
  }
};

template <typename Scalar>
struct Conv1x1 {
  Mat<Scalar> W, b;
  Mat<Scalar> gW, gb;
  FeatureMap<Scalar> in_cache;

  void init(int cin, int cout, RngStream& rng) {
    W.resize(cout, cin);
    init_normal(W, rng, std::sqrt(1.0 / cin));
    b = Mat<Scalar>::Zero(cout, 1);
    gW = Mat<Scalar>::Zero(cout, cin);
    gb = Mat<Scalar>::Zero(cout, 1);
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) {
    in_cache = x;
    FeatureMap<Scalar> y(x.batch, static_cast<int>(W.rows()), x.height, x.width);
    y.data.noalias() = W * x.data;
    y.data.colwise() += b.col(0);
    return y;
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& gy) {
    gW.noalias() += gy.data * in_cache.data.transpose();
    gb.col(0) += gy.data.rowwise().sum();
    FeatureMap<Scalar> gx(in_cache.batch, static_cast<int>(W.cols()),
                          in_cache.height, in_cache.width);
    gx.data.noalias() = W.transpose() * gy.data;
    return gx;
  }

  template <typename F>
  void visit(const std::string& p, F&& f) {
    f(p + ".W", W, gW);
    f(p + ".b", b, gb);
  }
};

/// GroupNorm over (channels_in_group x H*W) per sample, affine per channel.
template <typename Scalar>
struct GroupNorm {
  int channels = 0, groups = 0;
  Scalar eps = static_cast<Scalar>(1e-5);
  Mat<Scalar> gamma, beta;
  Mat<Scalar> ggamma, gbeta;

  FeatureMap<Scalar> xhat_cache;
  Mat<Scalar> invstd_cache;  // (groups, batch)

  void init(int ch, int g) {
    if (g < 1 || ch % g != 0)
      throw ConfigError("GroupNorm: channels (" + std::to_string(ch) +
                        ") not divisible by groups (" + std::to_string(g) + ")");
    channels = ch;
    groups = g;
    gamma = Mat<Scalar>::Ones(ch, 1);
    beta = Mat<Scalar>::Zero(ch, 1);
    ggamma = Mat<Scalar>::Zero(ch, 1);
    gbeta = Mat<Scalar>::Zero(ch, 1);
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) {
    const int cg = channels / groups;
    FeatureMap<Scalar> y = x;
    xhat_cache = x;
    invstd_cache.resize(groups, x.batch);
    const Eigen::Index hw = x.hw();
    const Scalar m = static_cast<Scalar>(cg * hw);
#pragma omp parallel for schedule(static)
    for (int bi = 0; bi < x.batch; ++bi) {
      for (int g = 0; g < groups; ++g) {
        auto blk = xhat_cache.data.block(g * cg, bi * hw, cg, hw);
        const Scalar mu = blk.sum() / m;
        const Scalar var = (blk.array() - mu).square().sum() / m;
        const Scalar is = Scalar(1) / std::sqrt(var + eps);
        invstd_cache(g, bi) = is;
        blk = ((blk.array() - mu) * is).matrix();
        auto yblk = y.data.block(g * cg, bi * hw, cg, hw);
        yblk = blk;
        for (int c = 0; c < cg; ++c)
          yblk.row(c) = yblk.row(c) * gamma(g * cg + c, 0) +
                        Mat<Scalar>::Constant(1, hw, beta(g * cg + c, 0));
      }
    }
    return y;
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& gy) {
    const int cg = channels / groups;
    const Eigen::Index hw = gy.hw();
    const Scalar m = static_cast<Scalar>(cg * hw);
    FeatureMap<Scalar> gx(gy.batch, channels, gy.height, gy.width);

    Mat<Scalar> ggamma_acc = Mat<Scalar>::Zero(channels, gy.batch);
    Mat<Scalar> gbeta_acc = Mat<Scalar>::Zero(channels, gy.batch);
#pragma omp parallel for schedule(static)
    for (int bi = 0; bi < gy.batch; ++bi) {
      for (int g = 0; g < groups; ++g) {
        auto xh = xhat_cache.data.block(g * cg, bi * hw, cg, hw);
        auto gyb = gy.data.block(g * cg, bi * hw, cg, hw);
        const Scalar is = invstd_cache(g, bi);

        Mat<Scalar> gxh(cg, hw);
        for (int c = 0; c < cg; ++c) {
          ggamma_acc(g * cg + c, bi) = (gyb.row(c).array() * xh.row(c).array()).sum();
          gbeta_acc(g * cg + c, bi) = gyb.row(c).sum();
          gxh.row(c) = gyb.row(c) * gamma(g * cg + c, 0);
        }
        const Scalar s1 = gxh.sum();
        const Scalar s2 = (gxh.array() * xh.array()).sum();
        gx.data.block(g * cg, bi * hw, cg, hw) =
            ((gxh.array() - s1 / m - xh.array() * (s2 / m)) * is).matrix();
      }
    }
    ggamma.col(0) += ggamma_acc.rowwise().sum();
    gbeta.col(0) += gbeta_acc.rowwise().sum();
    return gx;
  }

  template <typename F>
  void visit(const std::string& p, F&& f) {
    f(p + ".gamma", gamma, ggamma);
    f(p + ".beta", beta, gbeta);
  }
};

template <typename Scalar>
struct SiLU {
  FeatureMap<Scalar> in_cache;

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) {
    in_cache = x;
    FeatureMap<Scalar> y = x;
    y.data = (x.data.array() / (Scalar(1) + (-x.data.array()).exp()) ).matrix();
    return y;
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& gy) {
    FeatureMap<Scalar> gx = gy;
    auto xa = in_cache.data.array();
    auto sig = Scalar(1) / (Scalar(1) + (-xa).exp());
    gx.data = (gy.data.array() * sig * (Scalar(1) + xa * (Scalar(1) - sig))).matrix();
    return gx;
  }
};

/// Inverted dropout; identity when rng is null (eval) or rate is 0.
template <typename Scalar>
struct Dropout {
  double rate = 0.0;
  Mat<Scalar> mask;
  bool active = false;

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x, RngStream* rng) {
    active = (rng != nullptr && rate > 0.0);
    if (!active) return x;
    const Scalar keep = static_cast<Scalar>(1.0 - rate);
    mask.resize(x.data.rows(), x.data.cols());
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      for (Eigen::Index i = 0; i < mask.rows(); ++i)
        mask(i, j) = rng->bernoulli(1.0 - rate) ? Scalar(1) / keep : Scalar(0);
    FeatureMap<Scalar> y = x;
    y.data = x.data.cwiseProduct(mask);
    return y;
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& gy) {
    if (!active) return gy;
    FeatureMap<Scalar> gx = gy;
    gx.data = gy.data.cwiseProduct(mask);
    return gx;
  }
};

template <typename Scalar>
struct AvgPool2 {
  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) {
    if (x.height % 2 != 0 || x.width % 2 != 0)
      throw DimensionError("AvgPool2: odd spatial dims");
    FeatureMap<Scalar> y(x.batch, x.channels, x.height / 2, x.width / 2);
    const Eigen::Index hw_in = x.hw(), hw_out = y.hw();
    for (int bi = 0; bi < x.batch; ++bi) {
      for (int yo = 0; yo < y.height; ++yo) {
        for (int xo = 0; xo < y.width; ++xo) {
          const Eigen::Index co = bi * hw_out + static_cast<Eigen::Index>(yo) * y.width + xo;
          const Eigen::Index ci = bi * hw_in + static_cast<Eigen::Index>(2 * yo) * x.width + 2 * xo;
          y.data.col(co) = (x.data.col(ci) + x.data.col(ci + 1) +
                            x.data.col(ci + x.width) + x.data.col(ci + x.width + 1)) *
                           Scalar(0.25);
        }
      }
    }
    return y;
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& gy, int in_h, int in_w) {
    FeatureMap<Scalar> gx(gy.batch, gy.channels, in_h, in_w);
    const Eigen::Index hw_in = gx.hw(), hw_out = gy.hw();
    for (int bi = 0; bi < gy.batch; ++bi) {
      for (int yo = 0; yo < gy.height; ++yo) {
        for (int xo = 0; xo < gy.width; ++xo) {
          const Eigen::Index co = bi * hw_out + static_cast<Eigen::Index>(yo) * gy.width + xo;
          const Eigen::Index ci = bi * hw_in + static_cast<Eigen::Index>(2 * yo) * in_w + 2 * xo;
          const Mat<Scalar> q = gy.data.col(co) * Scalar(0.25);
          gx.data.col(ci) = q;
          gx.data.col(ci + 1) = q;
          gx.data.col(ci + in_w) = q;
          gx.data.col(ci + in_w + 1) = q;
        }
      }
    }
    return gx;
  }
};

template <typename Scalar>
struct UpsampleNearest2 {
  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) {
    FeatureMap<Scalar> y(x.batch, x.channels, x.height * 2, x.width * 2);
    const Eigen::Index hw_in = x.hw(), hw_out = y.hw();
    for (int bi = 0; bi < x.batch; ++bi) {
      for (int yi = 0; yi < x.height; ++yi) {
        for (int xi = 0; xi < x.width; ++xi) {
          const Eigen::Index ci = bi * hw_in + static_cast<Eigen::Index>(yi) * x.width + xi;
          const Eigen::Index co = bi * hw_out + static_cast<Eigen::Index>(2 * yi) * y.width + 2 * xi;
          y.data.col(co) = x.data.col(ci);
          y.data.col(co + 1) = x.data.col(ci);
          y.data.col(co + y.width) = x.data.col(ci);
          y.data.col(co + y.width + 1) = x.data.col(ci);
        }
      }
    }
    return y;
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& gy) {
    FeatureMap<Scalar> gx(gy.batch, gy.channels, gy.height / 2, gy.width / 2);
    const Eigen::Index hw_in = gx.hw(), hw_out = gy.hw();
    for (int bi = 0; bi < gy.batch; ++bi) {
      for (int yi = 0; yi < gx.height; ++yi) {
        for (int xi = 0; xi < gx.width; ++xi) {
          const Eigen::Index ci = bi * hw_in + static_cast<Eigen::Index>(yi) * gx.width + xi;
          const Eigen::Index co = bi * hw_out + static_cast<Eigen::Index>(2 * yi) * gy.width + 2 * xi;
          gx.data.col(ci) = gy.data.col(co) + gy.data.col(co + 1) +
                            gy.data.col(co + gy.width) + gy.data.col(co + gy.width + 1);
        }
      }
    }
    return gx;
  }
};

/// Single-head self-attention over flattened spatial positions:
/// GroupNorm, then q/k/v/out projections with residual addition.
template <typename Scalar>
struct SelfAttention {
  int channels = 0;
  GroupNorm<Scalar> norm;
  LinearLayer<Scalar> wq, wk, wv, wo;

  FeatureMap<Scalar> g_cache, q_cache, k_cache, v_cache, o_cache;
  std::vector<Mat<Scalar>> attn_cache;

  void init(int ch, int gn_groups, RngStream& rng) {
    channels = ch;
    norm.init(ch, gn_groups);
    wq.init(ch, ch, rng);
    wk.init(ch, ch, rng);
    wv.init(ch, ch, rng);
    wo.init(ch, ch, rng);
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) {
    const Eigen::Index p = x.hw();
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(channels));
    FeatureMap<Scalar> g = norm.forward(x);
    g_cache = g;
    q_cache = g; k_cache = g; v_cache = g; o_cache = g;
    q_cache.data = (wq.W * g.data).colwise() + wq.b.col(0);
    k_cache.data = (wk.W * g.data).colwise() + wk.b.col(0);
    v_cache.data = (wv.W * g.data).colwise() + wv.b.col(0);
    attn_cache.assign(static_cast<std::size_t>(x.batch), Mat<Scalar>());

    for (int bi = 0; bi < x.batch; ++bi) {
      auto q = q_cache.sample(bi);
      auto k = k_cache.sample(bi);
      auto v = v_cache.sample(bi);
      Mat<Scalar> logits = (q.transpose() * k) * scale;  // (p, p)
      // row-wise softmax
      for (Eigen::Index r = 0; r < p; ++r) {
        auto row = logits.row(r);
        const Scalar mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
      }
      attn_cache[static_cast<std::size_t>(bi)] = logits;
      o_cache.sample(bi) = v * logits.transpose();
    }
    FeatureMap<Scalar> y = x;
    y.data += (wo.W * o_cache.data).colwise() + wo.b.col(0);
    return y;
  }

  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& gy) {
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(channels));
    wo.gW.noalias() += gy.data * o_cache.data.transpose();
    wo.gb.col(0) += gy.data.rowwise().sum();
    Mat<Scalar> go_all = wo.W.transpose() * gy.data;

    FeatureMap<Scalar> gg = g_cache;
    gg.data.setZero();
    for (int bi = 0; bi < gy.batch; ++bi) {
      const Eigen::Index p = gy.hw();
      const Mat<Scalar>& a = attn_cache[static_cast<std::size_t>(bi)];
      auto go = go_all.middleCols(bi * p, p);
      auto q = q_cache.sample(bi);
      auto k = k_cache.sample(bi);
      auto v = v_cache.sample(bi);

      Mat<Scalar> gv = go * a;                       // O = V A^T
      Mat<Scalar> ga = go.transpose() * v;           // (p, p)
      Mat<Scalar> gl(p, p);
      for (Eigen::Index r = 0; r < p; ++r) {
        const Scalar dot = ga.row(r).dot(a.row(r));
        gl.row(r) = a.row(r).cwiseProduct(ga.row(r) - Mat<Scalar>::Constant(1, p, dot));
      }
      Mat<Scalar> gq = (k * gl.transpose()) * scale;
      Mat<Scalar> gk = (q * gl) * scale;

      auto g = g_cache.sample(bi);
      wq.gW.noalias() += gq * g.transpose();
      wq.gb.col(0) += gq.rowwise().sum();
      wk.gW.noalias() += gk * g.transpose();
      wk.gb.col(0) += gk.rowwise().sum();
      wv.gW.noalias() += gv * g.transpose();
      wv.gb.col(0) += gv.rowwise().sum();

      gg.sample(bi) = wq.W.transpose() * gq + wk.W.transpose() * gk +
                      wv.W.transpose() * gv;
    }
    FeatureMap<Scalar> gx = norm.backward(gg);
    gx.data += gy.data;  // residual
    return gx;
  }

  template <typename F>
  void visit(const std::string& p, F&& f) {
    norm.visit(p + ".norm", f);
    wq.visit(p + ".q", f);
    wk.visit(p + ".k", f);
    wv.visit(p + ".v", f);
    wo.visit(p + ".out", f);
  }
};

/// Sinusoidal embedding of log sigma(t) followed by a 2-layer SiLU MLP.
/// Frequencies span a geometric ladder wide enough to resolve the whole
/// log-sigma range of any reasonable schedule.
template <typename Scalar>
struct TimeEmbedding {
  int dim = 0;
  LinearLayer<Scalar> fc1, fc2;
  Mat<Scalar> emb_cache, h1_cache;

  void init(int d, RngStream& rng) {
    if (d < 4 || d % 2 != 0)
      throw ConfigError("TimeEmbedding: dim must be even and >= 4");
    dim = d;
    fc1.init(d, d, rng);
    fc2.init(d, d, rng);
  }

  Mat<Scalar> sinusoid(const Vec<double>& log_sigmas) const {
    const int half = dim / 2;
    Mat<Scalar> e(dim, log_sigmas.size());
    for (Eigen::Index b = 0; b < log_sigmas.size(); ++b) {
      for (int k = 0; k < half; ++k) {
        const double w =
            0.1 * std::pow(1000.0, half > 1 ? static_cast<double>(k) / (half - 1) : 0.0);
        e(k, b) = static_cast<Scalar>(std::sin(w * log_sigmas(b)));
        e(half + k, b) = static_cast<Scalar>(std::cos(w * log_sigmas(b)));
      }
    }
    return e;
  }

  /// Returns (dim, batch) embedding matrix.
  Mat<Scalar> forward(const Vec<double>& log_sigmas) {
    emb_cache = sinusoid(log_sigmas);
    h1_cache = fc1.forward(emb_cache);
    Mat<Scalar> h1s =
        (h1_cache.array() / (Scalar(1) + (-h1_cache.array()).exp())).matrix();
    return fc2.forward(h1s);
  }

  void backward(const Mat<Scalar>& gtemb) {
    Mat<Scalar> gh1s = fc2.backward(gtemb);
    auto xa = h1_cache.array();
    auto sig = Scalar(1) / (Scalar(1) + (-xa).exp());
    Mat<Scalar> gh1 = (gh1s.array() * sig * (Scalar(1) + xa * (Scalar(1) - sig))).matrix();
    fc1.backward(gh1);
  }

  template <typename F>
  void visit(const std::string& p, F&& f) {
    fc1.visit(p + ".fc1", f);
    fc2.visit(p + ".fc2", f);
  }
};

/// Residual block in the figure's listed layer order: GroupNorm, conv,
/// per-channel time-embedding injection, GroupNorm, dropout, conv, SiLU,
/// plus the residual skip (1x1 conv when channel counts differ).
template <typename Scalar>
struct ResNetBlock {
  int in_ch = 0, out_ch = 0;
  GroupNorm<Scalar> gn1, gn2;
  Conv3x3<Scalar> conv1, conv2;
  LinearLayer<Scalar> temb_proj;  // (out_ch, temb_dim)
  Dropout<Scalar> dropout;
  SiLU<Scalar> act;
  Conv1x1<Scalar> skip;
  bool has_skip = false;

  Mat<Scalar> temb_cache;  // (temb_dim, batch)

  void init(int cin, int cout, int gn_groups, int temb_dim, double drop_rate,
            RngStream& rng) {
    in_ch = cin;
    out_ch = cout;
    gn1.init(cin, gn_groups);
    conv1.init(cin, cout, rng);
    temb_proj.init(cout, temb_dim, rng);
    gn2.init(cout, gn_groups);
    dropout.rate = drop_rate;
    conv2.init(cout, cout, rng);
    has_skip = (cin != cout);
    if (has_skip) skip.init(cin, cout, rng);
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x, const Mat<Scalar>& temb,
                             RngStream* drop_rng) {
    temb_cache = temb;
    FeatureMap<Scalar> h = gn1.forward(x);
    h = conv1.forward(h);
    for (int bi = 0; bi < h.batch; ++bi)
      h.sample(bi).colwise() +=
          (temb_proj.W * temb.col(bi) + temb_proj.b.col(0)).eval();
    h = gn2.forward(h);
    h = dropout.forward(h, drop_rng);
    h = conv2.forward(h);
    h = act.forward(h);
    if (has_skip) {
      FeatureMap<Scalar> s = skip.forward(x);
      h.data += s.data;
    } else {
      h.data += x.data;
    }
    return h;
  }

  /// Returns grad wrt x; accumulates the time-embedding grad into gtemb.
  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& gy, Mat<Scalar>& gtemb) {
    FeatureMap<Scalar> gh = act.backward(gy);
    gh = conv2.backward(gh);
    gh = dropout.backward(gh);
    gh = gn2.backward(gh);
    for (int bi = 0; bi < gh.batch; ++bi) {
      const Vec<Scalar> rs = gh.sample(bi).rowwise().sum();
      temb_proj.gW.noalias() += rs * temb_cache.col(bi).transpose();
      temb_proj.gb.col(0) += rs;
      gtemb.col(bi) += temb_proj.W.transpose() * rs;
    }
    gh = conv1.backward(gh);
    FeatureMap<Scalar> gx = gn1.backward(gh);
    if (has_skip) {
      FeatureMap<Scalar> gs = skip.backward(gy);
      gx.data += gs.data;
    } else {
      gx.data += gy.data;
    }
    return gx;
  }

  template <typename F>
  void visit(const std::string& p, F&& f) {
    gn1.visit(p + ".gn1", f);
    conv1.visit(p + ".conv1", f);
    temb_proj.visit(p + ".temb", f);
    gn2.visit(p + ".gn2", f);
    conv2.visit(p + ".conv2", f);
    if (has_skip) skip.visit(p + ".skip", f);
  }
};

}  // namespace jdam

#endif  // JDAM_LAYERS_HPP
