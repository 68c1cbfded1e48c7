#ifndef JDAM_IO_PNG_HPP
#define JDAM_IO_PNG_HPP

#include <filesystem>

#include "jdam/common.hpp"

namespace jdam {

/// 8-bit grayscale PNG; values are mapped linearly from [lo, hi].
void write_png_gray(const std::filesystem::path& file, const Array2f& img,
                    double lo = 0.0, double hi = 1.0);

}  // namespace jdam

#endif  // JDAM_IO_PNG_HPP
