#include "jdam/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace jdam {

namespace {

constexpr char kMagic[8] = {'J', 'D', 'A', 'M', 'C', 'K', 'P', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

json unet_to_json(const UNetConfig& c) {
  return json{{"base_channels", c.base_channels},
              {"channel_multipliers", c.channel_multipliers},
              {"num_res_blocks_per_level", c.num_res_blocks_per_level},
              {"attention_levels",
               std::vector<int>(c.attention_levels.begin(), c.attention_levels.end())},
              {"groupnorm_groups", c.groupnorm_groups},
              {"dropout_rate", c.dropout_rate},
              {"time_embedding_dim", c.time_embedding_dim}};
}

UNetConfig unet_from_json(const json& j) {
  UNetConfig c;
  c.base_channels = j.at("base_channels").get<int>();
  c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
  c.num_res_blocks_per_level = j.at("num_res_blocks_per_level").get<int>();
  auto levels = j.at("attention_levels").get<std::vector<int>>();
  c.attention_levels = std::set<int>(levels.begin(), levels.end());
  c.groupnorm_groups = j.at("groupnorm_groups").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.time_embedding_dim = j.at("time_embedding_dim").get<int>();
  return c;
}

}  // namespace

void save_checkpoint(const fs::path& stem, ScoreNetParams& params,
                     const CheckpointMeta& meta) {
  fs::path bin = stem;
  bin += ".bin";
  fs::path side = stem;
  side += ".json";

  std::ofstream os(bin, std::ios::binary | std::ios::trunc);
  if (!os) throw LoadError("cannot write checkpoint " + bin.string());
  os.write(kMagic, sizeof(kMagic));

  std::uint32_t n_tensors = 0;
  params.net.visit([&](const std::string&, Mat<Real>&, Mat<Real>&) { ++n_tensors; });
  write_u32(os, n_tensors);
  params.net.visit([&](const std::string& name, Mat<Real>& w, Mat<Real>&) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, static_cast<std::uint64_t>(w.rows()));
    write_u64(os, static_cast<std::uint64_t>(w.cols()));
    os.write(reinterpret_cast<const char*>(w.data()),
             static_cast<std::streamsize>(sizeof(Real) * w.size()));
  });
  write_u64(os, static_cast<std::uint64_t>(params.ema.size()));
  os.write(reinterpret_cast<const char*>(params.ema.data()),
           static_cast<std::streamsize>(sizeof(Real) * params.ema.size()));
  write_u64(os, static_cast<std::uint64_t>(params.step_count));
  if (!os) throw LoadError("failed writing checkpoint " + bin.string());
  os.close();

  json j{{"format_version", "1"},
         {"unet", unet_to_json(meta.unet)},
         {"schedule",
          json{{"sigma_min", meta.schedule.sigma_min},
               {"sigma_max", meta.schedule.sigma_max},
               {"num_steps", meta.schedule.num_steps}}},
         {"ema_decay", meta.ema_decay},
         {"step_count", params.step_count},
         {"param_count", params.net.param_count()},
         {"normalization",
          json{{"mode", meta.normalization.mode},
               {"mri_min", meta.normalization.mri_min},
               {"mri_max", meta.normalization.mri_max},
               {"pet_min", meta.normalization.pet_min},
               {"pet_max", meta.normalization.pet_max}}}};
  std::ofstream js(side, std::ios::trunc);
  js << j.dump(2) << "\n";
}

std::pair<ScoreNetParams, CheckpointMeta> load_checkpoint(
    const fs::path& stem, const std::optional<CheckpointMeta>& expected) {
  fs::path bin = stem;
  bin += ".bin";
  fs::path side = stem;
  side += ".json";

  std::ifstream js(side);
  if (!js) throw LoadError("cannot open checkpoint sidecar " + side.string());
  json j;
  try {
    js >> j;
  } catch (const json::exception& e) {
    throw LoadError("checkpoint sidecar parse error: " + std::string(e.what()));
  }

  CheckpointMeta meta;
  meta.unet = unet_from_json(j.at("unet"));
  meta.schedule = NoiseSchedule(j["schedule"].at("sigma_min").get<double>(),
                                j["schedule"].at("sigma_max").get<double>(),
                                j["schedule"].at("num_steps").get<int>());
  meta.ema_decay = j.at("ema_decay").get<double>();
  meta.step_count = j.at("step_count").get<std::int64_t>();
  if (j.contains("normalization")) {
    const auto& n = j["normalization"];
    meta.normalization.mode = n.at("mode").get<std::string>();
    meta.normalization.mri_min = n.at("mri_min").get<double>();
    meta.normalization.mri_max = n.at("mri_max").get<double>();
    meta.normalization.pet_min = n.at("pet_min").get<double>();
    meta.normalization.pet_max = n.at("pet_max").get<double>();
  }

  if (expected) {
    if (!(meta.unet == expected->unet))
      throw LoadError("checkpoint refuses to load: UNetConfig mismatch vs live config");
    if (meta.schedule.sigma_min != expected->schedule.sigma_min ||
        meta.schedule.sigma_max != expected->schedule.sigma_max ||
        meta.schedule.num_steps != expected->schedule.num_steps)
      throw LoadError("checkpoint refuses to load: NoiseSchedule mismatch vs live config");
  }

  std::ifstream is(bin, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint " + bin.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw LoadError("checkpoint magic mismatch in " + bin.string());

  ScoreNetParams params = build_unet(meta.unet, 0);
  const std::uint32_t n_tensors = read_u32(is);

  std::uint32_t expected_tensors = 0;
  params.net.visit([&](const std::string&, Mat<Real>&, Mat<Real>&) { ++expected_tensors; });
  if (n_tensors != expected_tensors)
    throw LoadError("checkpoint tensor count mismatch");

  params.net.visit([&](const std::string& name, Mat<Real>& w, Mat<Real>&) {
    const std::uint32_t len = read_u32(is);
    std::string stored(len, '\0');
    is.read(stored.data(), len);
    const std::uint64_t rows = read_u64(is);
    const std::uint64_t cols = read_u64(is);
    if (stored != name || rows != static_cast<std::uint64_t>(w.rows()) ||
        cols != static_cast<std::uint64_t>(w.cols()))
      throw LoadError("checkpoint tensor mismatch at '" + name + "'");
    is.read(reinterpret_cast<char*>(w.data()),
            static_cast<std::streamsize>(sizeof(Real) * w.size()));
  });
  const std::uint64_t ema_len = read_u64(is);
  if (ema_len != static_cast<std::uint64_t>(params.net.param_count()))
    throw LoadError("checkpoint EMA length mismatch");
  params.ema.resize(static_cast<Eigen::Index>(ema_len));
  is.read(reinterpret_cast<char*>(params.ema.data()),
          static_cast<std::streamsize>(sizeof(Real) * params.ema.size()));
  params.step_count = static_cast<std::int64_t>(read_u64(is));
  if (!is) throw LoadError("truncated checkpoint " + bin.string());

  return {std::move(params), std::move(meta)};
}

}  // namespace jdam
