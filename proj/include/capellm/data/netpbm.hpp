#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "capellm/core/error.hpp"
#include "capellm/core/tensor.hpp"

namespace capellm {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

// Binary PGM (P5), 8-bit, row-major.
inline void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& px) {
  if (px.size() != static_cast<std::size_t>(width) * height) throw DimensionError("write_pgm: pixel count mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

// Binary PPM (P6) from an H x W x 3 image with values in [0, 1].
inline void write_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.shape()[2] != 3) throw DimensionError("write_ppm: expected H x W x 3");
  std::vector<std::uint8_t> px(image.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_byte(image[i]);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P6\n" << image.shape()[1] << ' ' << image.shape()[0] << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

namespace detail {

struct NetpbmRaster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> px;
};

inline NetpbmRaster read_netpbm(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError("image not found: " + path.string());
  std::ifstream is(path, std::ios::binary);
  std::string magic;
  is >> magic;
  NetpbmRaster r;
  if (magic == "P6") {
    r.channels = 3;
  } else if (magic == "P5") {
    r.channels = 1;
  } else {
    throw SchemaError(path.string() + ": not a binary PGM/PPM file");
  }
  auto next_int = [&] {
    is >> std::ws;
    while (is.peek() == '#') {
      std::string skip;
      std::getline(is, skip);
      is >> std::ws;
    }
    int v = 0;
    if (!(is >> v)) throw SchemaError(path.string() + ": malformed header");
    return v;
  };
  r.width = next_int();
  r.height = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw SchemaError(path.string() + ": only 8-bit images are supported");
  is.get();
  r.px.resize(static_cast<std::size_t>(r.width) * r.height * r.channels);
  is.read(reinterpret_cast<char*>(r.px.data()), static_cast<std::streamsize>(r.px.size()));
  if (is.gcount() != static_cast<std::streamsize>(r.px.size())) throw SchemaError(path.string() + ": truncated");
  return r;
}

}  // namespace detail

// H x W x 3 in [0, 1]. Grayscale files are replicated across channels.
inline Tensor<float> read_image(const std::filesystem::path& path) {
  const auto r = detail::read_netpbm(path);
  Tensor<float> img({r.height, r.width, 3});
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) img[i * 3 + c] = r.px[i * r.channels + (r.channels == 3 ? c : 0)] / 255.0f;
  }
  return img;
}

// 0/1 foreground mask, H x W (row-major), threshold at mid-gray.
inline Tensor<float> read_mask(const std::filesystem::path& path) {
  const auto r = detail::read_netpbm(path);
  Tensor<float> m({r.height, r.width});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = r.px[i * r.channels] >= 128 ? 1.0f : 0.0f;
  return m;
}

}  // namespace capellm
