#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fggb/embedder.hpp"
#include "fggb/error.hpp"

namespace fggb {

/// Signed H x W map, row-major.
class SaliencyMap {
 public:
  SaliencyMap() = default;
  SaliencyMap(std::size_t height, std::size_t width, double fill = 0.0)
      : height_(height), width_(width), values_(height * width, fill) {}
  SaliencyMap(std::size_t height, std::size_t width,
              std::vector<double> values)
      : height_(height), width_(width), values_(std::move(values)) {
    if (values_.size() != height_ * width_) {
      throw ShapeError("saliency map " + std::to_string(height_) + "x" +
                       std::to_string(width_) + " needs " +
                       std::to_string(height_ * width_) + " values, got " +
                       std::to_string(values_.size()));
    }
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t y, std::size_t x) { return values_[y * width_ + x]; }
  double at(std::size_t y, std::size_t x) const {
    return values_[y * width_ + x];
  }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  bool same_extent(const SaliencyMap& o) const {
    return height_ == o.height_ && width_ == o.width_;
  }

  bool operator==(const SaliencyMap&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> values_;
};

inline SaliencyMap negated(const SaliencyMap& s) {
  SaliencyMap out = s;
  for (double& v : out.values()) v = -v;
  return out;
}

inline SaliencyMap magnitude(const SaliencyMap& s) {
  SaliencyMap out = s;
  for (double& v : out.values()) v = std::abs(v);
  return out;
}

/// Mean over the colour axis of an H x W x C tensor.
inline SaliencyMap reduce_channels(const Tensor& t) {
  if (t.rank() != 3) {
    throw ShapeError("expected an H x W x C tensor, got " +
                     shape_string(t.shape()));
  }
  const std::size_t h = t.dim(0), w = t.dim(1), c = t.dim(2);
  SaliencyMap out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) acc += t.at(y, x, ch);
      out.at(y, x) = acc / static_cast<double>(c);
    }
  }
  return out;
}

struct SplitMaps {
  SaliencyMap plus;   // entries >= 0
  SaliencyMap minus;  // entries < 0
};

/// Zero entries go to `plus`; plus + minus reproduces the input.
inline SplitMaps split(const SaliencyMap& s) {
  SplitMaps out{SaliencyMap(s.height(), s.width()),
                SaliencyMap(s.height(), s.width())};
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] >= 0.0) {
      out.plus[i] = s[i];
    } else {
      out.minus[i] = s[i];
    }
  }
  return out;
}

// Saliency file: "FGGBSAL1", H and W as u32 LE, then H*W float32 LE row-major.
inline constexpr std::string_view kSaliencyMagic = "FGGBSAL1";

inline std::string serialize_saliency(const SaliencyMap& s) {
  std::string out(kSaliencyMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(s.height()));
  detail::put_u32(out, static_cast<std::uint32_t>(s.width()));
  for (double v : s.values()) {
    detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

inline SaliencyMap deserialize_saliency(std::string_view bytes) {
  detail::ByteReader r(bytes, "saliency file");
  if (r.take(kSaliencyMagic.size()) != kSaliencyMagic) r.fail("bad magic");
  const std::uint32_t h = r.u32();
  const std::uint32_t w = r.u32();
  if (h == 0 || w == 0) r.fail("empty saliency map");
  std::vector<double> values(std::size_t{h} * w);
  for (double& v : values) v = static_cast<double>(r.f32());
  if (!r.done()) r.fail("trailing bytes");
  return SaliencyMap(h, w, std::move(values));
}

inline void save_saliency(const SaliencyMap& s, const std::string& path) {
  detail::write_file(path, serialize_saliency(s));
}

inline SaliencyMap load_saliency(const std::string& path) {
  return deserialize_saliency(detail::read_file(path));
}

}  // namespace fggb
