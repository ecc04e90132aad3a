#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fggb/autodiff.hpp"
#include "fggb/error.hpp"
#include "fggb/model.hpp"
#include "fggb/random.hpp"
#include "fggb/tensor.hpp"

namespace fggb {

struct Embedding {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }

  double squared_norm() const {
    double acc = 0.0;
    for (double v : values) acc += v * v;
    return acc;
  }
  bool is_degenerate() const { return !(squared_norm() > 0.0); }

  bool operator==(const Embedding&) const = default;
};

struct Verdict {
  double score = 0.0;
  double threshold = 0.0;
  bool accept = false;
};

struct ForwardResult {
  Embedding embedding;
  Trace trace;
};

inline void check_pixel_range(const Tensor& image) {
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = image[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw PreconditionError("pixel " + std::to_string(i) + " = " +
                              std::to_string(v) + " is outside [0, 1]");
    }
  }
}

inline ForwardResult forward(std::shared_ptr<const ModelParams> params,
                             const Tensor& image) {
  check_input(*params, image);
  check_pixel_range(image);
  Trace trace = record(std::move(params), image);
  Embedding e{trace.output().values()};
  return {std::move(e), std::move(trace)};
}

inline ForwardResult forward(const ModelParams& params, const Tensor& image) {
  return forward(std::make_shared<const ModelParams>(params), image);
}

inline Embedding embed(const ModelParams& params, const Tensor& image) {
  check_input(params, image);
  check_pixel_range(image);
  return Embedding{evaluate(params, image).values()};
}

// ---------------------------------------------------------------------------
// Initialisation and built-in architectures

/// Weights ~ N(0, 2 / fan_in); biases, when present, ~ N(0, 0.01 * 2 / fan_in).
inline ModelParams init_model(const ModelSpec& spec, std::uint64_t seed) {
  const std::vector<Shape> shapes = activation_shapes(spec);
  Rng rng(seed);
  std::vector<LayerWeights> weights(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    auto [nw, nb] = parameter_counts(spec.layers[i], shapes[i]);
    if (nw == 0) continue;
    const double scale =
        std::sqrt(2.0 / static_cast<double>(fan_in(spec.layers[i], shapes[i])));
    weights[i].weight.resize(nw);
    for (double& v : weights[i].weight) v = scale * rng.normal();
    weights[i].bias.resize(nb);
    for (double& v : weights[i].bias) v = 0.1 * scale * rng.normal();
  }
  return ModelParams(spec, std::move(weights), seed);
}

/// conv3x3(4) -> relu -> conv3x3/2(8) -> relu -> avgpool2 -> flatten -> dense(n)
inline ModelSpec conv_embedder_spec(std::size_t h, std::size_t w,
                                    std::size_t c, std::uint32_t n) {
  return ModelSpec{{h, w, c},
                   {LayerSpec::conv(4, 3, 1, 1), LayerSpec::relu(),
                    LayerSpec::conv(8, 3, 2, 1), LayerSpec::relu(),
                    LayerSpec::avg_pool(2, 2), LayerSpec::flatten(),
                    LayerSpec::dense(n)}};
}

inline ModelSpec linear_embedder_spec(std::size_t h, std::size_t w,
                                      std::size_t c, std::uint32_t n,
                                      bool bias = false) {
  return ModelSpec{{h, w, c}, {LayerSpec::flatten(), LayerSpec::dense(n, bias)}};
}

/// Reference embedder: channel k is the mean of the k-th block of a disjoint
/// grid of `block` x `block` tiles (row-major over tiles, colour fastest).
/// Parameter-free, so its gradient maps are known in closed form.
inline ModelSpec block_pool_spec(std::size_t h, std::size_t w, std::size_t c,
                                 std::uint32_t block) {
  if (block == 0 || h % block != 0 || w % block != 0) {
    throw SpecError("block-pool: image " + std::to_string(h) + "x" +
                    std::to_string(w) + " is not divisible into " +
                    std::to_string(block) + "x" + std::to_string(block) +
                    " blocks");
  }
  return ModelSpec{{h, w, c},
                   {LayerSpec::avg_pool(block, block), LayerSpec::flatten()}};
}

inline ModelParams block_pool_model(std::size_t h, std::size_t w,
                                    std::size_t c, std::uint32_t block) {
  ModelSpec spec = block_pool_spec(h, w, c, block);
  return ModelParams(spec, std::vector<LayerWeights>(spec.layers.size()));
}

// ---------------------------------------------------------------------------
// Verification

inline double cosine(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine: embeddings have lengths " +
                     std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  const double na = a.squared_norm();
  const double nb = b.squared_norm();
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw DegenerateEmbeddingError("cosine: zero-norm embedding");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

/// Accepts when score >= threshold.
inline Verdict verify(const Embedding& a, const Embedding& b,
                      double threshold) {
  if (!(threshold >= -1.0 && threshold <= 1.0)) {
    throw ConfigError("threshold must lie in [-1, 1], got " +
                      std::to_string(threshold));
  }
  const double score = cosine(a, b);
  return {score, threshold, score >= threshold};
}

/// Threshold where false-accept and false-reject rates are closest, taken
/// as the midpoint between neighbouring sorted scores. Convenience helper
/// for picking a configuration value from labelled pairs.
inline double eer_threshold(const std::vector<double>& scores,
                            const std::vector<bool>& genuine) {
  if (scores.size() != genuine.size() || scores.empty()) {
    throw ConfigError("eer_threshold needs equally sized, non-empty inputs");
  }
  const auto n_gen = static_cast<double>(
      std::count(genuine.begin(), genuine.end(), true));
  const double n_imp = static_cast<double>(scores.size()) - n_gen;
  if (n_gen == 0 || n_imp == 0) {
    throw ConfigError("eer_threshold needs both genuine and imposter pairs");
  }
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return scores[l] < scores[r];
  });
  // Candidate t_i sits just above order[i-1]; everything at or below is
  // rejected.
  double best_gap = 2.0;
  double best = scores[order.front()];
  double rejected_gen = 0.0, rejected_imp = 0.0;
  for (std::size_t i = 0; i <= order.size(); ++i) {
    if (i > 0) {
      (genuine[order[i - 1]] ? rejected_gen : rejected_imp) += 1.0;
      if (i < order.size() && scores[order[i]] == scores[order[i - 1]]) {
        continue;
      }
    }
    const double frr = rejected_gen / n_gen;
    const double far = (n_imp - rejected_imp) / n_imp;
    const double gap = std::abs(frr - far);
    double t;
    if (i == 0) {
      t = scores[order.front()];
    } else if (i == order.size()) {
      t = std::nextafter(scores[order.back()], 2.0);
    } else {
      t = 0.5 * (scores[order[i - 1]] + scores[order[i]]);
    }
    if (gap < best_gap) {
      best_gap = gap;
      best = t;
    }
  }
  return std::clamp(best, -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Model file: "FGGBMDL1", length-prefixed spec fields, then every layer's
// weights followed by its biases as little-endian float64.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }

  std::string_view take(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(what_ + ": " + msg + " at byte offset " +
                     std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      fail("truncated input, needed " + std::to_string(n) + " more bytes");
    }
  }

  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace detail

inline constexpr std::string_view kModelMagic = "FGGBMDL1";

inline std::string serialize_model(const ModelParams& params) {
  std::string out(kModelMagic);
  auto field = [&](const std::string& payload) {
    detail::put_u32(out, static_cast<std::uint32_t>(payload.size()));
    out += payload;
  };
  std::string p;
  detail::put_u64(p, params.seed());
  field(p);
  p.clear();
  for (std::size_t e : params.input_shape()) {
    detail::put_u32(p, static_cast<std::uint32_t>(e));
  }
  field(p);
  p.clear();
  detail::put_u32(p, static_cast<std::uint32_t>(params.spec().layers.size()));
  field(p);
  for (const LayerSpec& l : params.spec().layers) {
    p.clear();
    detail::put_u32(p, static_cast<std::uint32_t>(l.kind));
    detail::put_u32(p, l.kernel);
    detail::put_u32(p, l.stride);
    detail::put_u32(p, l.padding);
    detail::put_u32(p, l.outputs);
    detail::put_u32(p, l.bias ? 1u : 0u);
    field(p);
  }
  for (const LayerWeights& w : params.layers()) {
    for (double v : w.weight) detail::put_f64(out, v);
    for (double v : w.bias) detail::put_f64(out, v);
  }
  return out;
}

inline ModelParams deserialize_model(std::string_view bytes) {
  detail::ByteReader r(bytes, "model file");
  if (r.take(kModelMagic.size()) != kModelMagic) r.fail("bad magic");
  auto field = [&](std::uint32_t expected) {
    const std::uint32_t len = r.u32();
    if (len != expected) {
      r.fail("field length " + std::to_string(len) + ", expected " +
             std::to_string(expected));
    }
  };
  field(8);
  const std::uint64_t seed = r.u64();
  field(12);
  ModelSpec spec;
  for (int i = 0; i < 3; ++i) spec.input.push_back(r.u32());
  field(4);
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    field(24);
    LayerSpec l;
    const std::uint32_t kind = r.u32();
    if (kind < 1 || kind > 5) r.fail("unknown layer kind " + std::to_string(kind));
    l.kind = static_cast<LayerKind>(kind);
    l.kernel = r.u32();
    l.stride = r.u32();
    l.padding = r.u32();
    l.outputs = r.u32();
    l.bias = r.u32() != 0;
    spec.layers.push_back(l);
  }
  const std::vector<Shape> shapes = activation_shapes(spec);
  std::vector<LayerWeights> weights(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    auto [nw, nb] = parameter_counts(spec.layers[i], shapes[i]);
    weights[i].weight.resize(nw);
    for (double& v : weights[i].weight) v = r.f64();
    weights[i].bias.resize(nb);
    for (double& v : weights[i].bias) v = r.f64();
  }
  if (!r.done()) r.fail("trailing bytes");
  return ModelParams(std::move(spec), std::move(weights), seed);
}

inline void save_model(const ModelParams& params, const std::string& path) {
  detail::write_file(path, serialize_model(params));
}

inline ModelParams load_model(const std::string& path) {
  return deserialize_model(detail::read_file(path));
}

}  // namespace fggb
