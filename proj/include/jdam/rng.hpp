#ifndef JDAM_RNG_HPP
#define JDAM_RNG_HPP

#include <cstdint>
#include <random>

#include "jdam/common.hpp"

namespace jdam {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic RNG stream keyed by (seed, stream, substream).
/// Independent streams let concurrent consumers (per-sample sampling
/// trajectories, data shards) draw without affecting each other.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0,
                     std::uint64_t substream = 0)
      : gen_(splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ substream)) {}

  double normal() { return normal_(gen_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  bool bernoulli(double p) {
    return std::bernoulli_distribution(p)(gen_);
  }
  std::uint64_t next_u64() { return gen_(); }

  /// Fills in row-major order; the sampler relies on this so batched and
  /// per-sample trajectories consume identical draw sequences.
  template <typename Derived>
  void fill_normal(Eigen::DenseBase<Derived>& out) {
    using S = typename Derived::Scalar;
    auto& d = out.derived();
    for (Eigen::Index i = 0; i < d.rows(); ++i)
      for (Eigen::Index j = 0; j < d.cols(); ++j)
        d(i, j) = static_cast<S>(normal_(gen_));
  }

  template <typename Scalar>
  Array2<Scalar> normal_array(Eigen::Index rows, Eigen::Index cols) {
    Array2<Scalar> a(rows, cols);
    fill_normal(a);
    return a;
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace jdam

#endif  // JDAM_RNG_HPP
