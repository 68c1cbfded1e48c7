#ifndef JDAM_TENSOR_HPP
#define JDAM_TENSOR_HPP

#include "jdam/common.hpp"

namespace jdam {

/// Batched multichannel feature map stored as a (channels, batch*H*W)
/// dense matrix. Column index = b*H*W + y*W + x, so each sample occupies
/// a contiguous block of columns.
template <typename Scalar>
struct FeatureMap {
  Mat<Scalar> data;
  int batch = 0;
  int channels = 0;
  int height = 0;
  int width = 0;

  FeatureMap() = default;
  FeatureMap(int b, int c, int h, int w)
      : data(Mat<Scalar>::Zero(c, static_cast<Eigen::Index>(b) * h * w)),
        batch(b),
        channels(c),
        height(h),
        width(w) {}

  Eigen::Index hw() const { return static_cast<Eigen::Index>(height) * width; }
  Eigen::Index cols() const { return data.cols(); }

  auto sample(int b) { return data.middleCols(static_cast<Eigen::Index>(b) * hw(), hw()); }
  auto sample(int b) const {
    return data.middleCols(static_cast<Eigen::Index>(b) * hw(), hw());
  }

  bool same_shape(const FeatureMap& o) const {
    return batch == o.batch && channels == o.channels && height == o.height &&
           width == o.width;
  }
};

/// Stack two maps along the channel dimension: [a; b].
template <typename Scalar>
FeatureMap<Scalar> concat_channels(const FeatureMap<Scalar>& a,
                                   const FeatureMap<Scalar>& b) {
  if (a.batch != b.batch || a.height != b.height || a.width != b.width)
    throw DimensionError("concat_channels: spatial/batch mismatch");
  FeatureMap<Scalar> out(a.batch, a.channels + b.channels, a.height, a.width);
  out.data.topRows(a.channels) = a.data;
  out.data.bottomRows(b.channels) = b.data;
  return out;
}

}  // namespace jdam

#endif  // JDAM_TENSOR_HPP
