#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace xedit {

/// Interleaved RGB image, row-major, channel values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // height * width * 3

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w * 3, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  bool same_size(const Image& o) const { return height == o.height && width == o.width; }
  bool operator==(const Image& o) const = default;
};

struct ImageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// 8-bit code of a channel value: round(v * 255) after clamping to [0, 1].
unsigned char to_byte(float v);
inline float from_byte(unsigned char b) { return static_cast<float>(b) / 255.0f; }

/// Rounds every channel to the nearest 8-bit level.
Image quantize(const Image& img);

/// Binary PPM (P6), 8-bit, header exactly "P6\n<W> <H>\n255\n".
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

}  // namespace xedit
