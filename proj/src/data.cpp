#include "jdam/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "jdam/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace jdam {

std::vector<PairedSlice> Dataset::select(const std::vector<std::string>& ids) const {
  std::vector<PairedSlice> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = std::find_if(slices.begin(), slices.end(),
                           [&](const PairedSlice& s) { return s.id == id; });
    if (it == slices.end())
      throw LoadError("Dataset::select: unknown id '" + id + "'");
    out.push_back(*it);
  }
  return out;
}

Array2f read_f32_image(const fs::path& file, int height, int width) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw LoadError("cannot open " + file.string());
  const std::uintmax_t want =
      static_cast<std::uintmax_t>(height) * width * sizeof(float);
  if (fs::file_size(file) != want)
    throw LoadError(file.string() + ": expected " + std::to_string(want) +
                    " bytes, found " + std::to_string(fs::file_size(file)));
  std::vector<float> buf(static_cast<std::size_t>(height) * width);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(want));
  if (!in) throw LoadError("short read on " + file.string());
  Array2f img(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      img(r, c) = buf[static_cast<std::size_t>(r) * width + c];
  return img;
}

void write_f32_image(const fs::path& file, const Array2f& img) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write " + file.string());
  std::vector<float> buf(static_cast<std::size_t>(img.size()));
  for (Eigen::Index r = 0; r < img.rows(); ++r)
    for (Eigen::Index c = 0; c < img.cols(); ++c)
      buf[static_cast<std::size_t>(r) * img.cols() + c] = img(r, c);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Array2f normalize_image(const Array2f& img, double lo, double hi) {
  if (!(hi > lo)) throw ConfigError("normalize: requires hi > lo");
  Array2f out = ((img.cast<double>() - lo) / (hi - lo)).cast<float>();
  return out.min(1.0f).max(0.0f);
}

Array2f denormalize_image(const Array2f& img, double lo, double hi) {
  return (img.cast<double>() * (hi - lo) + lo).cast<float>();
}

Normalization compute_bounds(const std::vector<PairedSlice>& collection) {
  Normalization n;
  if (collection.empty()) return n;
  double mlo = collection[0].mri.minCoeff(), mhi = collection[0].mri.maxCoeff();
  double plo = collection[0].pet.minCoeff(), phi = collection[0].pet.maxCoeff();
  for (const auto& s : collection) {
    mlo = std::min(mlo, static_cast<double>(s.mri.minCoeff()));
    mhi = std::max(mhi, static_cast<double>(s.mri.maxCoeff()));
    plo = std::min(plo, static_cast<double>(s.pet.minCoeff()));
    phi = std::max(phi, static_cast<double>(s.pet.maxCoeff()));
  }
  n.mode = "global";
  n.mri_min = mlo;
  n.mri_max = mhi > mlo ? mhi : mlo + 1.0;
  n.pet_min = plo;
  n.pet_max = phi > plo ? phi : plo + 1.0;
  return n;
}

void normalize_inplace(std::vector<PairedSlice>& slices, const Normalization& n) {
  if (n.identity()) return;
  for (auto& s : slices) {
    s.mri = normalize_image(s.mri, n.mri_min, n.mri_max);
    s.pet = normalize_image(s.pet, n.pet_min, n.pet_max);
  }
}

namespace {

json norm_to_json(const Normalization& n) {
  return json{{"mode", n.mode},
              {"mri_min", n.mri_min},
              {"mri_max", n.mri_max},
              {"pet_min", n.pet_min},
              {"pet_max", n.pet_max}};
}

Normalization norm_from_json(const json& j) {
  Normalization n;
  n.mode = j.at("mode").get<std::string>();
  n.mri_min = j.at("mri_min").get<double>();
  n.mri_max = j.at("mri_max").get<double>();
  n.pet_min = j.at("pet_min").get<double>();
  n.pet_max = j.at("pet_max").get<double>();
  return n;
}

}  // namespace

void write_dataset(const fs::path& dir, const std::vector<PairedSlice>& slices,
                   const Normalization& norm,
                   const std::vector<std::string>& train_ids,
                   const std::vector<std::string>& test_ids) {
  fs::create_directories(dir);
  json samples = json::array();
  for (const auto& s : slices) {
    const std::string mri_name = s.id + "_mri.f32";
    const std::string pet_name = s.id + "_pet.f32";
    write_f32_image(dir / mri_name, s.mri);
    write_f32_image(dir / pet_name, s.pet);
    samples.push_back(json{{"id", s.id},
                           {"mri_path", mri_name},
                           {"pet_path", pet_name},
                           {"height", s.height()},
                           {"width", s.width()}});
  }
  json manifest{{"format_version", "1"},
                {"dtype", "f32le"},
                {"layout", "row-major"},
                {"normalization", norm_to_json(norm)},
                {"samples", samples},
                {"split", json{{"train", train_ids}, {"test", test_ids}}}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const fs::path& manifest_path) {
  fs::path mpath = manifest_path;
  if (fs::is_directory(mpath)) mpath /= "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw LoadError("cannot open manifest " + mpath.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError("manifest parse error: " + std::string(e.what()));
  }

  Dataset ds;
  ds.manifest.format_version = j.at("format_version").get<std::string>();
  ds.manifest.dtype = j.at("dtype").get<std::string>();
  ds.manifest.layout = j.at("layout").get<std::string>();
  if (ds.manifest.dtype != "f32le" || ds.manifest.layout != "row-major")
    throw LoadError("manifest: unsupported dtype/layout");
  ds.manifest.normalization = norm_from_json(j.at("normalization"));
  if (j.contains("split")) {
    ds.manifest.train_ids = j["split"].value("train", std::vector<std::string>{});
    ds.manifest.test_ids = j["split"].value("test", std::vector<std::string>{});
  }

  const fs::path root = mpath.parent_path();
  std::set<std::string> seen;
  for (const auto& sj : j.at("samples")) {
    ManifestSample ms;
    ms.id = sj.at("id").get<std::string>();
    ms.mri_path = sj.at("mri_path").get<std::string>();
    ms.pet_path = sj.at("pet_path").get<std::string>();
    ms.height = sj.at("height").get<int>();
    ms.width = sj.at("width").get<int>();
    if (!seen.insert(ms.id).second)
      throw LoadError("manifest: duplicate id '" + ms.id + "'");
    ds.manifest.samples.push_back(ms);

    PairedSlice slice;
    slice.id = ms.id;
    try {
      slice.mri = read_f32_image(root / ms.mri_path, ms.height, ms.width);
      slice.pet = read_f32_image(root / ms.pet_path, ms.height, ms.width);
    } catch (const LoadError& e) {
      throw LoadError("sample '" + ms.id + "': " + e.what());
    }
    if (!slice.mri.allFinite() || !slice.pet.allFinite())
      throw LoadError("sample '" + ms.id + "': non-finite values");
    ds.slices.push_back(std::move(slice));
  }
  if (ds.slices.empty())
    std::cerr << "[jdam] warning: dataset " << mpath << " has no samples\n";

  normalize_inplace(ds.slices, ds.manifest.normalization);
  return ds;
}

namespace {

struct Ellipse {
  double cy, cx, a, b, theta;

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double u = dx * ct + dy * st;
    const double v = -dx * st + dy * ct;
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  }
};

// Separable Gaussian blur restricted to a mask: values outside keep exact
// zero support so MRI and PET foregrounds stay co-aligned.
Array2f masked_blur(const Array2f& img, const Array2<bool>& mask, double sigma) {
  const int radius = 3;
  Vec<double> k(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i)
    k(i + radius) = std::exp(-0.5 * i * i / (sigma * sigma));
  k /= k.sum();

  const int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
  Array2<double> tmp = Array2<double>::Zero(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int cc = std::clamp(c + i, 0, w - 1);
        acc += k(i + radius) * img(r, cc);
      }
      tmp(r, c) = acc;
    }
  Array2f out = Array2f::Zero(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!mask(r, c)) continue;
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int rr = std::clamp(r + i, 0, h - 1);
        acc += k(i + radius) * tmp(rr, c);
      }
      out(r, c) = static_cast<float>(acc);
    }
  return out;
}

}  // namespace

std::vector<PairedSlice> gen_phantom(int count, int size, std::uint64_t seed,
                                     std::vector<PhantomDebug>* debug) {
  if (count < 1) throw ConfigError("gen_phantom: count must be >= 1");
  if (size < 16 || size % 4 != 0)
    throw ConfigError("gen_phantom: size must be >= 16 and divisible by 4");

  std::vector<PairedSlice> out;
  out.reserve(static_cast<std::size_t>(count));
  if (debug) debug->clear();

  for (int idx = 0; idx < count; ++idx) {
    RngStream rng(seed, 0x9A4707ULL, static_cast<std::uint64_t>(idx));
    const double s = size;

    const int n_ell = 2 + static_cast<int>(rng.uniform(0.0, 3.0));  // 2..4
    std::vector<Ellipse> ells;
    Ellipse e0{s / 2 + rng.uniform(-s / 16, s / 16),
               s / 2 + rng.uniform(-s / 16, s / 16),
               s * rng.uniform(0.30, 0.40), s * rng.uniform(0.24, 0.36),
               rng.uniform(0.0, 3.14159265)};
    ells.push_back(e0);
    for (int k = 1; k < n_ell; ++k) {
      const Ellipse& prev = ells.back();
      const double shrink = rng.uniform(0.55, 0.75);
      ells.push_back(Ellipse{prev.cy + rng.uniform(-s / 32, s / 32),
                             prev.cx + rng.uniform(-s / 32, s / 32),
                             prev.a * shrink, prev.b * shrink,
                             rng.uniform(0.0, 3.14159265)});
    }

    // ring intensities: alternate bright/dark in MRI, roughly inverted in PET
    std::vector<float> mri_val(ells.size()), pet_val(ells.size());
    for (std::size_t k = 0; k < ells.size(); ++k) {
      if (k % 2 == 0) {
        mri_val[k] = static_cast<float>(rng.uniform(0.60, 0.95));
        pet_val[k] = static_cast<float>(rng.uniform(0.25, 0.45));
      } else {
        mri_val[k] = static_cast<float>(rng.uniform(0.20, 0.45));
        pet_val[k] = static_cast<float>(rng.uniform(0.55, 0.90));
      }
    }

    PhantomDebug dbg;
    dbg.has_lesion = rng.bernoulli(0.5);
    double lesion_scale = 1.0;
    if (dbg.has_lesion) {
      // anchored inside the second ellipse, which is never degenerate
      const Ellipse& host = ells[1];
      dbg.lesion_radius = s * rng.uniform(0.05, 0.09);
      dbg.lesion_cy = host.cy + rng.uniform(-0.3, 0.3) * host.b;
      dbg.lesion_cx = host.cx + rng.uniform(-0.3, 0.3) * host.a;
      lesion_scale = rng.uniform(0.30, 0.50);
      int center_region = 0;
      for (std::size_t k = 0; k < ells.size(); ++k)
        if (ells[k].contains(dbg.lesion_cy, dbg.lesion_cx))
          center_region = static_cast<int>(k);
      dbg.core_pet_value = pet_val[static_cast<std::size_t>(center_region)];
    }

    const double ba = rng.uniform(-1.0, 1.0), bb = rng.uniform(-1.0, 1.0),
                 bc = rng.uniform(-1.0, 1.0);

    Array2f mri = Array2f::Zero(size, size);
    Array2f pet_raw = Array2f::Zero(size, size);
    Array2<bool> mask(size, size);
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) {
        const double y = r + 0.5, x = c + 0.5;
        int region = -1;
        for (std::size_t k = 0; k < ells.size(); ++k)
          if (ells[k].contains(y, x)) region = static_cast<int>(k);
        mask(r, c) = region >= 0;
        if (region < 0) continue;

        const double u = 2.0 * x / s - 1.0, v = 2.0 * y / s - 1.0;
        const double bias = 1.0 + 0.12 * (ba * u + bb * v + bc * u * v);
        mri(r, c) = static_cast<float>(
            std::clamp(mri_val[static_cast<std::size_t>(region)] * bias, 0.0, 1.0));

        float pv = pet_val[static_cast<std::size_t>(region)];
        if (dbg.has_lesion) {
          const double dy = y - dbg.lesion_cy, dx = x - dbg.lesion_cx;
          if (dy * dy + dx * dx <= dbg.lesion_radius * dbg.lesion_radius)
            pv = static_cast<float>(pv * lesion_scale);
        }
        pet_raw(r, c) = pv;
      }

    PairedSlice slice;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "phantom%04d", idx);
    slice.id = idbuf;
    slice.mri = mri;
    slice.pet = masked_blur(pet_raw, mask, 1.2);
    out.push_back(std::move(slice));
    if (debug) debug->push_back(dbg);
  }
  return out;
}

std::pair<std::vector<PairedSlice>, std::vector<PairedSlice>> split_dataset(
    const std::vector<PairedSlice>& collection, double test_fraction,
    std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("split_dataset: test_fraction must lie in (0,1)");
  std::vector<std::size_t> order(collection.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream rng(seed, 0x5B117ULL);
  std::shuffle(order.begin(), order.end(), rng.engine());

  const std::size_t n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(collection.size())));
  std::vector<PairedSlice> train, test;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_test)
      test.push_back(collection[order[i]]);
    else
      train.push_back(collection[order[i]]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace jdam
