#ifndef JDAM_DATA_TYPES_HPP
#define JDAM_DATA_TYPES_HPP

#include <string>
#include <vector>

#include "jdam/common.hpp"

namespace jdam {

/// Co-registered 2D MRI/PET pair, values normalized to [0,1].
struct PairedSlice {
  std::string id;
  Array2f mri;
  Array2f pet;

  int height() const { return static_cast<int>(mri.rows()); }
  int width() const { return static_cast<int>(mri.cols()); }
};

/// Per-modality global min-max bounds. mode "none" means identity.
struct Normalization {
  std::string mode = "global";
  double mri_min = 0.0, mri_max = 1.0;
  double pet_min = 0.0, pet_max = 1.0;

  bool identity() const {
    return mode == "none" || (mri_min == 0.0 && mri_max == 1.0 &&
                              pet_min == 0.0 && pet_max == 1.0);
  }
};

struct ManifestSample {
  std::string id;
  std::string mri_path;
  std::string pet_path;
  int height = 0;
  int width = 0;
};

struct DatasetManifest {
  std::string format_version = "1";
  std::string dtype = "f32le";
  std::string layout = "row-major";
  Normalization normalization;
  std::vector<ManifestSample> samples;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

}  // namespace jdam

#endif  // JDAM_DATA_TYPES_HPP
