#ifndef JDAM_RUN_CONFIG_HPP
#define JDAM_RUN_CONFIG_HPP

#include <filesystem>
#include <string>

#include "jdam/sampler.hpp"
#include "jdam/sde.hpp"
#include "jdam/training.hpp"
#include "jdam/unet.hpp"

namespace jdam {

/// One JSON config drives a full run; flags override individual fields.
/// Cross-section consistency is validated at load, before any data access.
struct RunConfig {
  NoiseSchedule schedule;
  UNetConfig model;
  TrainConfig train;
  SamplerConfig sampler;
  std::string dataset_dir;
  std::string out_dir = "run_out";
  std::string log_level = "info";

  void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);
RunConfig default_run_config();

}  // namespace jdam

#endif  // JDAM_RUN_CONFIG_HPP
