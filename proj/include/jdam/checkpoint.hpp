#ifndef JDAM_CHECKPOINT_HPP
#define JDAM_CHECKPOINT_HPP

#include <filesystem>
#include <optional>

#include "jdam/data_types.hpp"
#include "jdam/sde.hpp"
#include "jdam/unet.hpp"

namespace jdam {

struct CheckpointMeta {
  UNetConfig unet;
  NoiseSchedule schedule;
  double ema_decay = 0.999;
  std::int64_t step_count = 0;
  Normalization normalization;
};

/// Writes <stem>.bin (named parameter tensors + EMA shadow + step count)
/// and <stem>.json (config sidecar). The binary round-trip is bit-exact.
void save_checkpoint(const std::filesystem::path& stem, ScoreNetParams& params,
                     const CheckpointMeta& meta);

/// Loads a checkpoint pair. When `expected` is given, the sidecar must
/// match its UNetConfig and NoiseSchedule exactly or loading refuses.
std::pair<ScoreNetParams, CheckpointMeta> load_checkpoint(
    const std::filesystem::path& stem,
    const std::optional<CheckpointMeta>& expected = std::nullopt);

}  // namespace jdam

#endif  // JDAM_CHECKPOINT_HPP
