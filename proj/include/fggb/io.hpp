#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fggb/embedder.hpp"
#include "fggb/error.hpp"
#include "fggb/saliency.hpp"
#include "fggb/tensor.hpp"

namespace fggb {

/// 8-bit interleaved image, channels = 1 (gray) or 3 (RGB).
struct Image8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  bool operator==(const Image8&) const = default;
};

inline Tensor to_tensor(const Image8& img) {
  std::vector<double> data(img.pixels.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<double>(img.pixels[i]) / 255.0;
  }
  return Tensor({img.height, img.width, img.channels}, std::move(data));
}

inline Image8 to_image8(const Tensor& t) {
  if (t.rank() != 3 || (t.dim(2) != 1 && t.dim(2) != 3)) {
    throw ShapeError("expected an H x W x {1,3} image, got " +
                     shape_string(t.shape()));
  }
  Image8 img{t.dim(0), t.dim(1), t.dim(2), std::vector<std::uint8_t>(t.size())};
  for (std::size_t i = 0; i < t.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(
        std::lround(std::clamp(t[i], 0.0, 1.0) * 255.0));
  }
  return img;
}

// ---------------------------------------------------------------------------
// Netpbm (P5 grey, P6 RGB, maxval <= 255)

inline Image8 decode_pnm(std::string_view bytes) {
  detail::ByteReader r(bytes, "PNM image");
  const std::string_view magic = r.take(2);
  std::size_t channels;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    r.fail("bad magic (expected P5 or P6)");
  }

  auto next_char = [&]() -> char { return r.take(1)[0]; };
  auto header_uint = [&]() -> std::uint64_t {
    char c = next_char();
    for (;;) {
      if (c == '#') {
        while (c != '\n') c = next_char();
        c = next_char();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        c = next_char();
      } else {
        break;
      }
    }
    if (!std::isdigit(static_cast<unsigned char>(c))) {
      r.fail("expected a number in the header");
    }
    std::uint64_t v = 0;
    while (std::isdigit(static_cast<unsigned char>(c))) {
      v = v * 10 + static_cast<std::uint64_t>(c - '0');
      if (v > (1u << 24)) r.fail("header value too large");
      c = next_char();
    }
    // `c` is the single whitespace byte that ends the field.
    if (!std::isspace(static_cast<unsigned char>(c))) {
      r.fail("malformed header");
    }
    return v;
  };
  const std::uint64_t width = header_uint();
  const std::uint64_t height = header_uint();
  const std::uint64_t maxval = header_uint();
  if (width == 0 || height == 0) r.fail("zero image extent");
  if (maxval == 0 || maxval > 255) {
    throw ParseError("PNM image: unsupported bit depth (maxval " +
                     std::to_string(maxval) + ", only 8-bit is supported)");
  }
  const std::size_t count = width * height * channels;
  const std::string_view raw = r.take(count);
  Image8 img{height, width, channels, std::vector<std::uint8_t>(count)};
  for (std::size_t i = 0; i < count; ++i) {
    const auto v = static_cast<std::uint8_t>(raw[i]);
    img.pixels[i] = maxval == 255
                        ? v
                        : static_cast<std::uint8_t>(std::lround(
                              255.0 * v / static_cast<double>(maxval)));
  }
  return img;
}

inline std::string encode_pnm(const Image8& img) {
  std::string out = (img.channels == 1 ? "P5\n" : "P6\n") +
                    std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()),
             img.pixels.size());
  return out;
}

// ---------------------------------------------------------------------------
// PNG via libpng's simplified API

inline Image8 decode_png(std::string_view bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw ParseError(std::string("PNG image: ") + image.message);
  }
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 img{image.height, image.width, gray ? 1u : 3u, {}};
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw ParseError("PNG image: " + msg);
  }
  return img;
}

inline std::string encode_png(const Image8& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(),
                                 0, nullptr)) {
    throw IoError(std::string("PNG encode: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0,
                                 img.pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline bool has_png_extension(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

inline Image8 read_image8(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("image file not found: " + path);
  }
  const std::string bytes = detail::read_file(path);
  if (bytes.size() >= 8 && bytes.compare(0, 8, "\x89PNG\r\n\x1a\n") == 0) {
    return decode_png(bytes);
  }
  return decode_pnm(bytes);
}

inline void write_image8(const Image8& img, const std::string& path) {
  detail::write_file(path, has_png_extension(path) ? encode_png(img)
                                                   : encode_pnm(img));
}

/// Loads a PPM/PGM or PNG file as an H x W x C tensor in [0, 1].
inline Tensor load_image(const std::string& path) {
  return to_tensor(read_image8(path));
}

inline void save_image(const Tensor& image, const std::string& path) {
  write_image8(to_image8(image), path);
}

// ---------------------------------------------------------------------------
// Heatmaps

using Rgb = std::array<double, 3>;

/// Blue -> cyan -> yellow -> red; t in [0, 1].
inline Rgb ramp_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  if (t < 1.0 / 3.0) {
    const double u = 3.0 * t;
    return {0.0, u, 1.0};
  }
  if (t < 2.0 / 3.0) {
    const double u = 3.0 * t - 1.0;
    return {u, 1.0, 1.0 - u};
  }
  const double u = 3.0 * t - 2.0;
  return {1.0, 1.0 - u, 0.0};
}

struct ValueRange {
  double lo = 0.0;
  double hi = 0.0;
};

inline ValueRange value_range(const SaliencyMap& s) {
  const auto [lo, hi] = std::minmax_element(s.values().begin(), s.values().end());
  return {*lo, *hi};
}

inline ValueRange value_range(const std::vector<const SaliencyMap*>& maps) {
  ValueRange r = value_range(*maps.front());
  for (const SaliencyMap* m : maps) {
    const ValueRange v = value_range(*m);
    r.lo = std::min(r.lo, v.lo);
    r.hi = std::max(r.hi, v.hi);
  }
  return r;
}

/// Linear map of [lo, hi] (per-map min/max unless `range` is given) onto the
/// colour ramp; a constant map renders at mid-ramp. With a base image the
/// heatmap is blended as alpha * heat + (1 - alpha) * base.
inline Image8 render_heatmap(const SaliencyMap& s, const Tensor* base = nullptr,
                             double alpha = 1.0,
                             std::optional<ValueRange> range = std::nullopt) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("heatmap alpha must lie in [0, 1]");
  }
  if (base && (base->rank() != 3 || base->dim(0) != s.height() ||
               base->dim(1) != s.width())) {
    throw ShapeError("heatmap base image " + shape_string(base->shape()) +
                     " does not match saliency map " +
                     std::to_string(s.height()) + "x" +
                     std::to_string(s.width()));
  }
  const ValueRange r = range ? *range : value_range(s);
  const double span = r.hi - r.lo;
  Image8 img{s.height(), s.width(), 3,
             std::vector<std::uint8_t>(s.size() * 3)};
  for (std::size_t p = 0; p < s.size(); ++p) {
    const double t = span > 0.0 ? (s[p] - r.lo) / span : 0.5;
    Rgb c = ramp_color(t);
    if (base) {
      const std::size_t bc = base->dim(2);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double b = (*base)[p * bc + (bc == 1 ? 0 : ch)];
        c[ch] = alpha * c[ch] + (1.0 - alpha) * b;
      }
    }
    for (std::size_t ch = 0; ch < 3; ++ch) {
      img.pixels[p * 3 + ch] = static_cast<std::uint8_t>(
          std::lround(std::clamp(c[ch], 0.0, 1.0) * 255.0));
    }
  }
  return img;
}

}  // namespace fggb
