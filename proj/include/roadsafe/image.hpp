#pragma once

// 8-bit raster with binary PPM (P6) / PGM (P5) I/O.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "roadsafe/error.hpp"
#include "roadsafe/tensor.hpp"

namespace roadsafe {

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;  // 3 = RGB, 1 = gray
  std::vector<std::uint8_t> pixels;  // row-major, interleaved

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c)
      : width(w), height(h), channels(c), pixels(w * h * c, 0) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

inline void write_pnm(std::ostream& os, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw DataError("pnm: 1 or 3 channels only");
  os << (img.channels == 3 ? "P6" : "P5") << '\n'
     << img.width << ' ' << img.height << '\n' << "255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
}

inline void save_pnm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write image: " + path);
  write_pnm(os, img);
  if (!os) throw DataError("failed writing image: " + path);
}

inline Image read_pnm(std::istream& is) {
  auto next_token = [&is]() {
    std::string tok;
    while (is >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      return tok;
    }
    throw DataError("pnm: truncated header");
  };
  const std::string magic = next_token();
  if (magic != "P6" && magic != "P5") throw DataError("pnm: unsupported magic " + magic);
  Image img;
  img.channels = magic == "P6" ? 3 : 1;
  try {
    img.width = std::stoul(next_token());
    img.height = std::stoul(next_token());
    if (std::stoul(next_token()) != 255) throw DataError("pnm: maxval must be 255");
  } catch (const std::logic_error&) {
    throw DataError("pnm: bad header");
  }
  is.get();  // single whitespace before raster
  img.pixels.resize(img.width * img.height * img.channels);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()),
               static_cast<std::streamsize>(img.pixels.size()))) {
    throw DataError("pnm: truncated raster");
  }
  return img;
}

inline Image load_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open image: " + path);
  return read_pnm(is);
}

/// Stacks images into an [N,C,H,W] tensor with values in [-0.5, 0.5].
inline Tensor images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const auto& ref = *images.front();
  const std::size_t c = ref.channels, h = ref.height, w = ref.width;
  std::vector<double> v(images.size() * c * h * w);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const auto& img = *images[b];
    if (img.channels != c || img.height != h || img.width != w) {
      throw ShapeError("images_to_tensor: image " + std::to_string(b) +
                       " size differs from the batch");
    }
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          v[((b * c + ch) * h + y) * w + x] = img.at(x, y, ch) / 255.0 - 0.5;
  }
  return Tensor({images.size(), c, h, w}, std::move(v));
}

}  // namespace roadsafe
