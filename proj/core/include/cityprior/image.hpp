#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cityprior {

// Dense row-major H x W x C raster.
template <typename T>
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> data;

  Image() = default;
  Image(int h, int w, int c, T fill = T{}) : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  T& at(int row, int col, int c = 0) { return data[(static_cast<std::size_t>(row) * width + col) * channels + c]; }
  const T& at(int row, int col, int c = 0) const { return data[(static_cast<std::size_t>(row) * width + col) * channels + c]; }

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  bool empty() const { return data.empty(); }
};

using ImageU8 = Image<uint8_t>;
using ImageF = Image<float>;
using MaskImage = Image<uint8_t>;  // 0 or 255

// 8-bit PNG, 1 or 3 channels.
ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

// Feature maps are raw little-endian float32 with a 16-byte header:
// magic "FMAP", then u32 height, width, depth.
ImageF read_feature_map(const std::string& path);
void write_feature_map(const std::string& path, const ImageF& img);

// [0,255] u8 <-> [0,1] float conversions.
ImageF to_float(const ImageU8& img);
ImageU8 to_u8(const ImageF& img);

}  // namespace cityprior
