// Command-line front end: phantom generation, training, sampling,
// evaluation, and analytic self-checks. Exit codes: 0 success,
// 1 check/tolerance failure, 2 usage/config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "jdam/checkpoint.hpp"
#include "jdam/data.hpp"
#include "jdam/io_png.hpp"
#include "jdam/metrics.hpp"
#include "jdam/run_config.hpp"
#include "jdam/sampler.hpp"
#include "jdam/selfcheck.hpp"
#include "jdam/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace jdam;

namespace {

json finite_or_string(double v) {
  if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
  if (std::isnan(v)) return json("nan");
  return json(v);
}

int cmd_gen_phantom(const std::string& out_dir, int count, int size,
                    std::uint64_t seed, double test_fraction, bool force) {
  const fs::path dir(out_dir);
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    std::cerr << "error: output dir " << dir
              << " is not empty (use --force to overwrite)\n";
    return 2;
  }
  auto slices = gen_phantom(count, size, seed);
  std::vector<std::string> train_ids, test_ids;
  if (test_fraction > 0.0) {
    auto [train, test] = split_dataset(slices, test_fraction, seed);
    for (const auto& s : train) train_ids.push_back(s.id);
    for (const auto& s : test) test_ids.push_back(s.id);
  } else {
    for (const auto& s : slices) train_ids.push_back(s.id);
  }
  Normalization norm;  // phantoms are generated in [0,1]; identity bounds
  norm.mode = "global";
  write_dataset(dir, slices, norm, train_ids, test_ids);
  std::cout << "wrote " << slices.size() << " pairs (" << size << "x" << size
            << ") to " << dir.string() << " [train " << train_ids.size()
            << " / test " << test_ids.size() << "]\n";
  return 0;
}

std::vector<PairedSlice> pick_split(const Dataset& ds, const std::string& split) {
  if (split == "all" || (ds.manifest.train_ids.empty() && ds.manifest.test_ids.empty()))
    return ds.slices;
  if (split == "train") return ds.select(ds.manifest.train_ids);
  if (split == "test") return ds.select(ds.manifest.test_ids);
  throw ConfigError("split must be train, test, or all");
}

int cmd_train(const std::string& config_path, const std::string& dataset_override,
              const std::string& out_override, int steps_override,
              std::optional<std::uint64_t> seed_override,
              std::optional<double> cond_dropout_override,
              const std::string& resume_stem) {
  RunConfig cfg = load_run_config(config_path);
  if (!dataset_override.empty()) cfg.dataset_dir = dataset_override;
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (steps_override > 0) cfg.train.total_steps = steps_override;
  if (seed_override) cfg.train.seed = *seed_override;
  if (cond_dropout_override) cfg.train.condition_dropout = *cond_dropout_override;
  cfg.validate();

  if (cfg.dataset_dir.empty()) {
    std::cerr << "error: data.dataset: no dataset path configured\n";
    return 2;
  }
  Dataset ds = load_dataset(cfg.dataset_dir);
  auto train_slices = pick_split(ds, "train");
  if (train_slices.empty()) {
    std::cerr << "error: dataset has no training samples\n";
    return 2;
  }

  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  save_run_config(out / "config.json", cfg);

  ScoreNetParams params = build_unet(cfg.model, cfg.train.seed);
  if (!resume_stem.empty()) {
    CheckpointMeta expect;
    expect.unet = cfg.model;
    expect.schedule = cfg.schedule;
    auto [loaded, meta] = load_checkpoint(resume_stem, expect);
    params = std::move(loaded);
    std::cout << "resumed from " << resume_stem << " at step " << params.step_count
              << "\n";
  }

  CheckpointMeta meta;
  meta.unet = cfg.model;
  meta.schedule = cfg.schedule;
  meta.ema_decay = cfg.train.ema_decay;
  meta.normalization = ds.manifest.normalization;

  std::ofstream loss_log(out / "loss.jsonl",
                         resume_stem.empty() ? std::ios::trunc : std::ios::app);
  double first_loss = -1, last_loss = -1;
  const auto t0 = std::chrono::steady_clock::now();

  auto result = train<Real>(
      params, train_slices, cfg.schedule, cfg.train,
      [&](const StepLog& log) {
        if (first_loss < 0) first_loss = log.loss;
        last_loss = log.loss;
        loss_log << json{{"step", log.step},
                         {"loss", log.loss},
                         {"sigma_mean", log.sigma_mean}}
                        .dump()
                 << "\n";
        if ((log.step + 1) % 100 == 0)
          std::cout << "step " << (log.step + 1) << " loss " << log.loss << "\n";
      },
      [&](const ScoreNetParams& p, int step) {
        ScoreNetParams copy = p;
        save_checkpoint(out / ("ckpt_step" + std::to_string(step)), copy, meta);
      });

  save_checkpoint(out / "ckpt", params, meta);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "trained " << result.history.size() << " steps in " << secs
            << "s; first loss " << first_loss << ", last loss " << last_loss
            << "; checkpoint " << (out / "ckpt").string() << ".bin\n";
  return 0;
}

int cmd_sample(const std::string& ckpt_stem, const std::string& data_dir,
               const std::string& split, const std::string& mri_dir, int height,
               int width, const std::string& out_dir, std::uint64_t seed,
               int corrector_steps, double snr, bool unconditional,
               bool init_mri_plus_noise, bool use_live, bool png,
               const std::string& traj_dir) {
  auto [params, meta] = load_checkpoint(ckpt_stem);
  ScoreUNet<Real> net = use_live ? params.net : params.ema_net();

  SamplerConfig scfg;
  scfg.num_steps = meta.schedule.num_steps;
  scfg.corrector_steps = corrector_steps;
  scfg.snr = snr;
  scfg.seed = seed;
  scfg.conditional = !unconditional;
  scfg.init_mri_plus_noise = init_mri_plus_noise;

  struct Input {
    std::string id;
    Array2f mri;  // normalized
  };
  std::vector<Input> inputs;

  if (!data_dir.empty()) {
    Dataset ds = load_dataset(data_dir);
    for (const auto& s : pick_split(ds, split)) {
      Input in;
      in.id = s.id;
      in.mri = unconditional ? Array2f::Zero(s.height(), s.width()) : s.mri;
      inputs.push_back(std::move(in));
    }
  } else if (!mri_dir.empty()) {
    if (height <= 0 || width <= 0) {
      std::cerr << "error: --mri-dir requires --height and --width\n";
      return 2;
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(mri_dir))
      if (e.path().extension() == ".f32") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Input in;
      std::string stem = f.stem().string();
      if (stem.size() > 4 && stem.ends_with("_mri")) stem.resize(stem.size() - 4);
      in.id = stem;
      if (unconditional) {
        in.mri = Array2f::Zero(height, width);
      } else {
        Array2f raw = read_f32_image(f, height, width);
        in.mri = normalize_image(raw, meta.normalization.mri_min,
                                 meta.normalization.mri_max);
      }
      inputs.push_back(std::move(in));
    }
  } else {
    std::cerr << "error: provide --data or --mri-dir\n";
    return 2;
  }
  if (inputs.empty()) {
    std::cerr << "error: no inputs found\n";
    return 2;
  }

  const fs::path out(out_dir);
  fs::create_directories(out);
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<Array2f> results;
  if (traj_dir.empty()) {
    std::vector<Array2f> mris;
    mris.reserve(inputs.size());
    for (const auto& in : inputs) mris.push_back(in.mri);
    results = pc_sample_batch(net, mris, meta.schedule, scfg);
  } else {
    fs::create_directories(traj_dir);
    auto score = make_network_score(net, meta.schedule);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      std::ofstream traj(fs::path(traj_dir) / ("traj_" + inputs[k].id + ".jsonl"));
      Array2f prev = Array2f::Zero(inputs[k].mri.rows(), inputs[k].mri.cols());
      bool has_prev = false;
      TrajectorySink<Real> sink = [&](int i, double sigma, const Array2f& x) {
        const double rn = has_prev
                              ? std::sqrt((x - prev).cast<double>().square().sum())
                              : 0.0;
        prev = x;
        has_prev = true;
        traj << json{{"i", i}, {"sigma", sigma}, {"residual_norm", rn}}.dump()
             << "\n";
      };
      results.push_back(pc_sample<Real>(inputs[k].mri, score, meta.schedule, scfg,
                                        k, sink));
    }
  }

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    // export in the dataset's raw units via the recorded normalization
    Array2f raw = denormalize_image(results[k], meta.normalization.pet_min,
                                    meta.normalization.pet_max);
    write_f32_image(out / (inputs[k].id + "_pet.f32"), raw);
    if (png)
      write_png_gray(out / (inputs[k].id + "_pet.png"), results[k], 0.0, 1.0);
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "sampled " << inputs.size() << " images in " << secs << "s -> "
            << out.string() << (unconditional ? " (unconditional)" : "") << "\n";
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& ref_dir,
             const std::string& split, const std::string& report_path,
             double data_range, const std::string& error_map_dir) {
  Dataset ref = load_dataset(ref_dir);
  auto refs = pick_split(ref, split);
  if (refs.empty()) {
    std::cerr << "error: reference split is empty\n";
    return 2;
  }

  std::vector<std::string> missing;
  MetricsReport report;
  report.data_range = data_range;
  for (const auto& r : refs) {
    const fs::path pred_file = fs::path(pred_dir) / (r.id + "_pet.f32");
    if (!fs::exists(pred_file)) {
      missing.push_back(r.id);
      continue;
    }
    Array2f pred_raw = read_f32_image(pred_file, r.height(), r.width());
    Array2f pred = normalize_image(pred_raw, ref.manifest.normalization.pet_min,
                                   ref.manifest.normalization.pet_max);
    SampleMetrics m;
    m.id = r.id;
    m.psnr_db = psnr(pred, r.pet, data_range);
    m.ssim = ssim(pred, r.pet, data_range);
    report.per_sample.push_back(m);
    if (!error_map_dir.empty()) {
      fs::create_directories(error_map_dir);
      Array2d em = error_map(r.pet, pred);
      write_png_gray(fs::path(error_map_dir) / (r.id + "_err.png"),
                     em.cast<float>(), -data_range, data_range);
    }
  }
  if (!missing.empty()) {
    std::cerr << "error: missing predictions for " << missing.size() << " ids:";
    for (const auto& id : missing) std::cerr << " " << id;
    std::cerr << "\n";
    return 2;
  }
  report.aggregate();

  json per = json::array();
  for (const auto& m : report.per_sample)
    per.push_back(json{{"id", m.id},
                       {"psnr_db", finite_or_string(m.psnr_db)},
                       {"ssim", m.ssim}});
  json j{{"config", {{"data_range", data_range}, {"pred", pred_dir}, {"ref", ref_dir},
                     {"split", split}}},
         {"per_sample", per},
         {"aggregate",
          {{"psnr_mean", finite_or_string(report.psnr_mean)},
           {"psnr_std", finite_or_string(report.psnr_std)},
           {"ssim_mean", report.ssim_mean},
           {"ssim_std", report.ssim_std},
           {"n", report.n()}}}};
  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::trunc);
    out << j.dump(2) << "\n";
  }
  std::cout << "n=" << report.n() << " psnr_mean=" << report.psnr_mean
            << " ssim_mean=" << report.ssim_mean << "\n";
  return 0;
}

int cmd_oracle_check(bool list, double snr, const std::string& only) {
  if (list) {
    for (const auto& n : selfcheck_names()) std::cout << n << "\n";
    return 0;
  }
  SelfCheckOptions opt;
  opt.snr = snr;
  std::vector<CheckResult> results;
  if (!only.empty())
    results.push_back(run_selfcheck(only, opt));
  else
    results = run_all_selfchecks(opt);
  bool all_pass = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail
              << "\n";
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint diffusion MRI-to-PET synthesis"};
  app.require_subcommand(1);

  // gen-phantom
  auto* gen = app.add_subcommand("gen-phantom", "generate a paired phantom dataset");
  std::string gen_out;
  int gen_count = 16, gen_size = 32;
  std::uint64_t gen_seed = 0;
  double gen_test_fraction = 0.1;
  bool gen_force = false;
  gen->add_option("--out", gen_out, "output dataset dir")->required();
  gen->add_option("--count", gen_count, "number of pairs");
  gen->add_option("--size", gen_size, "image size (>=16, divisible by 4)");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--test-fraction", gen_test_fraction, "held-out fraction");
  gen->add_flag("--force", gen_force, "overwrite non-empty output dir");

  // train
  auto* tr = app.add_subcommand("train", "train the score network");
  std::string tr_config, tr_dataset, tr_out, tr_resume;
  int tr_steps = 0;
  std::optional<std::uint64_t> tr_seed;
  std::optional<double> tr_cond_dropout;
  tr->add_option("--config", tr_config, "run config JSON")->required();
  tr->add_option("--dataset", tr_dataset, "dataset dir (overrides config)");
  tr->add_option("--out", tr_out, "output dir (overrides config)");
  tr->add_option("--steps", tr_steps, "total steps (overrides config)");
  tr->add_option("--seed", tr_seed, "train seed (overrides config)");
  tr->add_option("--condition-dropout", tr_cond_dropout,
                 "probability of zeroing the MRI channel during training");
  tr->add_option("--resume", tr_resume, "checkpoint stem to resume from");

  // sample
  auto* sm = app.add_subcommand("sample", "synthesize PET from MRI");
  std::string sm_ckpt, sm_data, sm_split = "test", sm_mri_dir, sm_out, sm_traj;
  int sm_h = 0, sm_w = 0, sm_corrector = 1;
  std::uint64_t sm_seed = 0;
  double sm_snr = 0.16;
  bool sm_uncond = false, sm_init_mri = false, sm_live = false, sm_png = false;
  sm->add_option("--ckpt", sm_ckpt, "checkpoint stem")->required();
  sm->add_option("--data", sm_data, "dataset dir (manifest-driven inputs)");
  sm->add_option("--split", sm_split, "train|test|all");
  sm->add_option("--mri-dir", sm_mri_dir, "dir of raw MRI .f32 files");
  sm->add_option("--height", sm_h, "height for --mri-dir inputs");
  sm->add_option("--width", sm_w, "width for --mri-dir inputs");
  sm->add_option("--out", sm_out, "output dir")->required();
  sm->add_option("--seed", sm_seed, "sampling seed");
  sm->add_option("--corrector", sm_corrector, "corrector steps M");
  sm->add_option("--snr", sm_snr, "corrector signal-to-noise ratio r");
  sm->add_flag("--unconditional", sm_uncond, "zeroed-condition ablation mode");
  sm->add_flag("--init-mri-plus-noise", sm_init_mri,
               "initialize from MRI plus noise instead of pure noise");
  sm->add_flag("--use-live-params", sm_live, "sample with live weights, not EMA");
  sm->add_flag("--png", sm_png, "also write PNG previews");
  sm->add_option("--traj", sm_traj, "dir for per-sample trajectory JSONL");

  // eval
  auto* ev = app.add_subcommand("eval", "PSNR/SSIM report of predictions");
  std::string ev_pred, ev_ref, ev_split = "test", ev_report = "report.json",
              ev_err_dir;
  double ev_range = 1.0;
  ev->add_option("--pred", ev_pred, "prediction dir")->required();
  ev->add_option("--ref", ev_ref, "reference dataset dir")->required();
  ev->add_option("--split", ev_split, "train|test|all");
  ev->add_option("--report", ev_report, "report JSON path");
  ev->add_option("--data-range", ev_range, "metric data range");
  ev->add_option("--error-maps", ev_err_dir, "write PNG error maps here");

  // oracle-check
  auto* oc = app.add_subcommand("oracle-check", "analytic-score self checks");
  bool oc_list = false;
  double oc_snr = 0.16;
  std::string oc_only;
  oc->add_flag("--list", oc_list, "print check names without running");
  oc->add_option("--snr", oc_snr, "corrector snr used by the checks");
  oc->add_option("--only", oc_only, "run a single named check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed())
      return cmd_gen_phantom(gen_out, gen_count, gen_size, gen_seed,
                             gen_test_fraction, gen_force);
    if (tr->parsed())
      return cmd_train(tr_config, tr_dataset, tr_out, tr_steps, tr_seed,
                       tr_cond_dropout, tr_resume);
    if (sm->parsed())
      return cmd_sample(sm_ckpt, sm_data, sm_split, sm_mri_dir, sm_h, sm_w, sm_out,
                        sm_seed, sm_corrector, sm_snr, sm_uncond, sm_init_mri,
                        sm_live, sm_png, sm_traj);
    if (ev->parsed())
      return cmd_eval(ev_pred, ev_ref, ev_split, ev_report, ev_range, ev_err_dir);
    if (oc->parsed()) return cmd_oracle_check(oc_list, oc_snr, oc_only);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const LoadError& e) {
    std::cerr << "load error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "domain error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "dimension error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
