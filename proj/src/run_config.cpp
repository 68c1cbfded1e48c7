#include "jdam/run_config.hpp"

#include <fstream>

#include <json.hpp>

using nlohmann::json;

namespace jdam {

void RunConfig::validate() const {
  schedule.validate();
  model.validate();
  train.validate();
  if (sampler.num_steps != schedule.num_steps)
    throw ConfigError("sampler.num_steps: must equal schedule.num_steps (" +
                      std::to_string(sampler.num_steps) + " vs " +
                      std::to_string(schedule.num_steps) + ")");
  if (!(sampler.snr > 0.0)) throw ConfigError("sampler.snr: must be > 0");
  if (sampler.corrector_steps < 0)
    throw ConfigError("sampler.corrector_steps: must be >= 0");
}

RunConfig default_run_config() { return RunConfig{}; }

namespace {

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }

  RunConfig cfg;
  try {
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      maybe(s, "sigma_min", cfg.schedule.sigma_min);
      maybe(s, "sigma_max", cfg.schedule.sigma_max);
      maybe(s, "num_steps", cfg.schedule.num_steps);
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      if (m.contains("preset")) {
        const std::string p = m["preset"].get<std::string>();
        if (p == "desk32")
          cfg.model = UNetConfig::desk32();
        else if (p == "large128")
          cfg.model = UNetConfig::large128();
        else
          throw ConfigError("model.preset: unknown preset '" + p + "'");
      }
      maybe(m, "base_channels", cfg.model.base_channels);
      maybe(m, "channel_multipliers", cfg.model.channel_multipliers);
      maybe(m, "num_res_blocks_per_level", cfg.model.num_res_blocks_per_level);
      if (m.contains("attention_levels")) {
        auto v = m["attention_levels"].get<std::vector<int>>();
        cfg.model.attention_levels = std::set<int>(v.begin(), v.end());
      }
      maybe(m, "groupnorm_groups", cfg.model.groupnorm_groups);
      maybe(m, "dropout_rate", cfg.model.dropout_rate);
      maybe(m, "time_embedding_dim", cfg.model.time_embedding_dim);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      maybe(t, "batch_size", cfg.train.batch_size);
      maybe(t, "total_steps", cfg.train.total_steps);
      maybe(t, "learning_rate", cfg.train.learning_rate);
      maybe(t, "ema_decay", cfg.train.ema_decay);
      if (t.contains("grad_clip_norm")) {
        if (t["grad_clip_norm"].is_null())
          cfg.train.grad_clip_norm.reset();
        else
          cfg.train.grad_clip_norm = t["grad_clip_norm"].get<double>();
      }
      maybe(t, "checkpoint_every", cfg.train.checkpoint_every);
      maybe(t, "seed", cfg.train.seed);
      maybe(t, "condition_dropout", cfg.train.condition_dropout);
      maybe(t, "t_floor", cfg.train.t_floor);
    }
    if (j.contains("sampler")) {
      const auto& s = j["sampler"];
      maybe(s, "num_steps", cfg.sampler.num_steps);
      maybe(s, "corrector_steps", cfg.sampler.corrector_steps);
      maybe(s, "snr", cfg.sampler.snr);
      maybe(s, "seed", cfg.sampler.seed);
      maybe(s, "conditional", cfg.sampler.conditional);
      if (s.contains("init")) {
        const std::string init = s["init"].get<std::string>();
        if (init == "noise")
          cfg.sampler.init_mri_plus_noise = false;
        else if (init == "mri_plus_noise")
          cfg.sampler.init_mri_plus_noise = true;
        else
          throw ConfigError("sampler.init: must be 'noise' or 'mri_plus_noise'");
      }
      maybe(s, "clip_output", cfg.sampler.clip_output);
    } else {
      cfg.sampler.num_steps = cfg.schedule.num_steps;
    }
    if (j.contains("data")) maybe(j["data"], "dataset", cfg.dataset_dir);
    if (j.contains("io")) {
      maybe(j["io"], "out_dir", cfg.out_dir);
      maybe(j["io"], "log_level", cfg.log_level);
    }
  } catch (const json::exception& e) {
    throw ConfigError("config field error in " + path.string() + ": " + e.what());
  }

  cfg.validate();
  return cfg;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  json j{
      {"schedule",
       {{"sigma_min", cfg.schedule.sigma_min},
        {"sigma_max", cfg.schedule.sigma_max},
        {"num_steps", cfg.schedule.num_steps}}},
      {"model",
       {{"base_channels", cfg.model.base_channels},
        {"channel_multipliers", cfg.model.channel_multipliers},
        {"num_res_blocks_per_level", cfg.model.num_res_blocks_per_level},
        {"attention_levels", std::vector<int>(cfg.model.attention_levels.begin(),
                                              cfg.model.attention_levels.end())},
        {"groupnorm_groups", cfg.model.groupnorm_groups},
        {"dropout_rate", cfg.model.dropout_rate},
        {"time_embedding_dim", cfg.model.time_embedding_dim}}},
      {"train",
       {{"batch_size", cfg.train.batch_size},
        {"total_steps", cfg.train.total_steps},
        {"learning_rate", cfg.train.learning_rate},
        {"ema_decay", cfg.train.ema_decay},
        {"grad_clip_norm", cfg.train.grad_clip_norm
                               ? json(*cfg.train.grad_clip_norm)
                               : json(nullptr)},
        {"checkpoint_every", cfg.train.checkpoint_every},
        {"seed", cfg.train.seed},
        {"condition_dropout", cfg.train.condition_dropout},
        {"t_floor", cfg.train.t_floor}}},
      {"sampler",
       {{"num_steps", cfg.sampler.num_steps},
        {"corrector_steps", cfg.sampler.corrector_steps},
        {"snr", cfg.sampler.snr},
        {"seed", cfg.sampler.seed},
        {"conditional", cfg.sampler.conditional},
        {"init", cfg.sampler.init_mri_plus_noise ? "mri_plus_noise" : "noise"},
        {"clip_output", cfg.sampler.clip_output}}},
      {"data", {{"dataset", cfg.dataset_dir}}},
      {"io", {{"out_dir", cfg.out_dir}, {"log_level", cfg.log_level}}}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace jdam
