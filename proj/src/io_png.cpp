#include "jdam/io_png.hpp"

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace jdam {

namespace {

void put_u32be(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>(x >> 24));
  v.push_back(static_cast<std::uint8_t>(x >> 16));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
  v.push_back(static_cast<std::uint8_t>(x));
}

void write_chunk(std::ofstream& os, const char type[4],
                 const std::vector<std::uint8_t>& data) {
  std::vector<std::uint8_t> hdr;
  put_u32be(hdr, static_cast<std::uint32_t>(data.size()));
  os.write(reinterpret_cast<const char*>(hdr.data()), 4);
  os.write(type, 4);
  if (!data.empty())
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size()));
  std::uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty())
    crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
  std::vector<std::uint8_t> tail;
  put_u32be(tail, crc);
  os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace

void write_png_gray(const std::filesystem::path& file, const Array2f& img,
                    double lo, double hi) {
  const int h = static_cast<int>(img.rows());
  const int w = static_cast<int>(img.cols());
  const double span = hi > lo ? hi - lo : 1.0;

  // scanlines with filter byte 0
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * (w + 1));
  for (int r = 0; r < h; ++r) {
    raw[static_cast<std::size_t>(r) * (w + 1)] = 0;
    for (int c = 0; c < w; ++c) {
      double v = (img(r, c) - lo) / span;
      v = v < 0 ? 0 : (v > 1 ? 1 : v);
      raw[static_cast<std::size_t>(r) * (w + 1) + 1 + c] =
          static_cast<std::uint8_t>(v * 255.0 + 0.5);
    }
  }

  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()),
                Z_BEST_SPEED) != Z_OK)
    throw LoadError("png: deflate failed for " + file.string());
  comp.resize(comp_len);

  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw LoadError("cannot write " + file.string());
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<std::uint8_t> ihdr;
  put_u32be(ihdr, static_cast<std::uint32_t>(w));
  put_u32be(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(os, "IHDR", ihdr);
  write_chunk(os, "IDAT", comp);
  write_chunk(os, "IEND", {});
}

}  // namespace jdam
