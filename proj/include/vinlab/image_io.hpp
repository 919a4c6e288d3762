#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace vinlab {

/// 8-bit raster: 1 channel (PGM) or 3 channels (PPM), row-major.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const Image&, const Image&) = default;
};

using Rgb = std::array<std::uint8_t, 3>;

/// Binary PGM (P5) for 1 channel, binary PPM (P6) for 3, maxval 255.
std::vector<std::uint8_t> encode_pnm(const Image& image);
Image decode_pnm(std::span<const std::uint8_t> bytes);
void write_pnm(const std::filesystem::path& path, const Image& image);

/// Min-max normalisation of a rows x cols field to 0..255 (a constant field maps to 0).
Image grayscale_field(std::span<const double> values, int rows, int cols);

}  // namespace vinlab
