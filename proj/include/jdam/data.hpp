#ifndef JDAM_DATA_HPP
#define JDAM_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <utility>

#include "jdam/data_types.hpp"

namespace jdam {

struct Dataset {
  std::vector<PairedSlice> slices;
  DatasetManifest manifest;

  std::vector<PairedSlice> select(const std::vector<std::string>& ids) const;
};

/// Reads manifest.json + raw f32 files, validates sizes and finiteness,
/// and applies the manifest's normalization. Normalization metadata stays
/// on the returned manifest for inverse mapping at export.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes manifest + one <id>_mri.f32 and <id>_pet.f32 per sample
/// (little-endian f32, row-major, no header). Arrays are written as given.
void write_dataset(const std::filesystem::path& dir,
                   const std::vector<PairedSlice>& slices,
                   const Normalization& norm,
                   const std::vector<std::string>& train_ids = {},
                   const std::vector<std::string>& test_ids = {});

/// Raw f32 image IO (row-major), used by the CLI for prediction dirs.
Array2f read_f32_image(const std::filesystem::path& file, int height, int width);
void write_f32_image(const std::filesystem::path& file, const Array2f& img);

/// Per-sample phantom generation notes, exposed for property tests.
/// core_pet_value is the pre-blur PET tissue value at the lesion center.
struct PhantomDebug {
  bool has_lesion = false;
  double lesion_cy = 0, lesion_cx = 0, lesion_radius = 0;
  float core_pet_value = 0;
};

/// Deterministic synthetic pairs: shared nested-ellipse anatomy, MRI with
/// its own contrast map plus a mild smooth bias field, PET with a different
/// contrast map, in-mask Gaussian blur, and (probability 0.5) a focal
/// hypointense lesion in PET only.
std::vector<PairedSlice> gen_phantom(int count, int size, std::uint64_t seed,
                                     std::vector<PhantomDebug>* debug = nullptr);

/// Seed-deterministic disjoint split; returns (train, test).
std::pair<std::vector<PairedSlice>, std::vector<PairedSlice>> split_dataset(
    const std::vector<PairedSlice>& collection, double test_fraction,
    std::uint64_t seed);

/// Global min-max bounds over a collection (per modality).
Normalization compute_bounds(const std::vector<PairedSlice>& collection);

/// (v - lo) / (hi - lo), clamped to [0,1].
void normalize_inplace(std::vector<PairedSlice>& slices, const Normalization& n);
Array2f normalize_image(const Array2f& img, double lo, double hi);
Array2f denormalize_image(const Array2f& img, double lo, double hi);

}  // namespace jdam

#endif  // JDAM_DATA_HPP
