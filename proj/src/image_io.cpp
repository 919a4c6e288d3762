#include "vinlab/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "vinlab/binary_io.hpp"

namespace vinlab {

std::vector<std::uint8_t> encode_pnm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw FormatError("image: channels must be 1 or 3");
  if (image.width <= 0 || image.height <= 0) throw FormatError("image: empty raster");
  const std::size_t expected = static_cast<std::size_t>(image.width) * image.height * image.channels;
  if (image.pixels.size() != expected) throw FormatError("image: pixel buffer size mismatch");
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(image.width) +
                             " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

Image decode_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    if (t.empty()) throw FormatError("image: truncated header");
    return t;
  };
  const std::string magic = token();
  Image img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw FormatError("image: unsupported magic '" + magic + "'");
  }
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    if (std::stoi(token()) != 255) throw FormatError("image: only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw FormatError("image: malformed header");
  }
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (img.width <= 0 || img.height <= 0 || bytes.size() - std::min(pos, bytes.size()) != n) {
    throw FormatError("image: raster size mismatch");
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

void write_pnm(const std::filesystem::path& path, const Image& image) { write_file(path, encode_pnm(image)); }

Image grayscale_field(std::span<const double> values, int rows, int cols) {
  if (rows <= 0 || cols <= 0) throw FormatError("image: empty field");
  if (values.size() != static_cast<std::size_t>(rows) * cols) throw FormatError("image: field size mismatch");
  Image img{cols, rows, 1, std::vector<std::uint8_t>(values.size(), 0)};
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double span = *hi - *lo;
  if (!(span > 0.0)) return img;
  for (std::size_t k = 0; k < values.size(); ++k) {
    img.pixels[k] = static_cast<std::uint8_t>(std::lround(255.0 * (values[k] - *lo) / span));
  }
  return img;
}

}  // namespace vinlab
