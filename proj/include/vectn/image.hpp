#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "vectn/error.hpp"

namespace vectn {

// Axis-aligned pixel box: origin (x, y) is the top-left corner.
struct BBox {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  friend bool operator==(const BBox&, const BBox&) = default;
};

// Interleaved 8-bit RGB raster, row-major, H x W x 3.
class Image {
 public:
  Image() = default;
  Image(int width, int height, std::string ref = {})
      : width_(width), height_(height), ref_(std::move(ref)) {
    if (width < 0 || height < 0) throw Error("Image: negative dimensions");
    pixels_.assign(static_cast<std::size_t>(width) * height * 3, 0);
  }
  Image(int width, int height, std::vector<std::uint8_t> pixels,
        std::string ref = {})
      : width_(width), height_(height), pixels_(std::move(pixels)),
        ref_(std::move(ref)) {
    if (pixels_.size() != static_cast<std::size_t>(width) * height * 3) {
      throw Error("Image: pixel buffer does not match " +
                  std::to_string(width) + "x" + std::to_string(height) + "x3");
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return width_ == 0 || height_ == 0; }

  // Dataset reference the image was loaded from; backends key sidecar
  // annotations on it.
  const std::string& ref() const noexcept { return ref_; }
  void set_ref(std::string ref) { ref_ = std::move(ref); }

  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }

  std::uint8_t& at(int x, int y, int channel) {
    return pixels_[index(x, y, channel)];
  }
  std::uint8_t at(int x, int y, int channel) const {
    return pixels_[index(x, y, channel)];
  }

  bool contains(const BBox& box) const noexcept {
    return box.width >= 1 && box.height >= 1 && box.x >= 0 && box.y >= 0 &&
           box.x + box.width <= width_ && box.y + box.height <= height_;
  }

  Image crop(const BBox& box) const {
    if (!contains(box)) throw Error("Image::crop: box outside image bounds");
    Image out(box.width, box.height, ref_);
    for (int row = 0; row < box.height; ++row) {
      const auto src = index(box.x, box.y + row, 0);
      const auto dst = out.index(0, row, 0);
      std::copy_n(pixels_.begin() + static_cast<std::ptrdiff_t>(src),
                  static_cast<std::size_t>(box.width) * 3,
                  out.pixels_.begin() + static_cast<std::ptrdiff_t>(dst));
    }
    return out;
  }

  void fill(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    for (std::size_t i = 0; i < pixels_.size(); i += 3) {
      pixels_[i] = r;
      pixels_[i + 1] = g;
      pixels_[i + 2] = b;
    }
  }

 private:
  std::size_t index(int x, int y, int channel) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + channel;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
  std::string ref_;
};

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_pnm_int(std::istream& in, const std::string& what) {
  skip_pnm_space(in);
  int value = -1;
  if (!(in >> value) || value < 0) throw Error("PPM: bad " + what);
  return value;
}

}  // namespace detail

// Reads binary (P6) or ASCII (P3) PPM with maxval <= 255.
inline Image read_ppm(const std::filesystem::path& path, std::string ref = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image '" + path.string() + "'");
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (!in || (magic != "P6" && magic != "P3")) {
    throw Error("'" + path.string() + "' is not a PPM (P3/P6) image");
  }
  const int width = detail::read_pnm_int(in, "width");
  const int height = detail::read_pnm_int(in, "height");
  const int maxval = detail::read_pnm_int(in, "maxval");
  if (maxval == 0 || maxval > 255) throw Error("PPM: unsupported maxval");
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height * 3);
  if (magic == "P6") {
    in.get();  // single whitespace after maxval
    in.read(reinterpret_cast<char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(pixels.size())) {
      throw Error("PPM: truncated pixel data in '" + path.string() + "'");
    }
  } else {
    for (auto& p : pixels) p = static_cast<std::uint8_t>(detail::read_pnm_int(in, "sample"));
  }
  return Image(width, height, std::move(pixels),
               ref.empty() ? path.filename().string() : std::move(ref));
}

inline void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write image '" + path.string() + "'");
  out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  const auto px = image.pixels();
  out.write(reinterpret_cast<const char*>(px.data()),
            static_cast<std::streamsize>(px.size()));
}

}  // namespace vectn
