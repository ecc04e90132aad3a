#pragma once

// Comparator explainers: gradient of the cosine score itself, and a plain
// random-occlusion correlation map. Both are deliberately simple stand-ins
// for the families of methods they represent.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fggb/autodiff.hpp"
#include "fggb/embedder.hpp"
#include "fggb/error.hpp"
#include "fggb/fggb.hpp"
#include "fggb/parallel.hpp"
#include "fggb/random.hpp"
#include "fggb/saliency.hpp"

namespace fggb {

/// d cos(a, b) / d a = b / (|a||b|) - cos(a, b) * a / |a|^2
inline std::vector<double> cosine_gradient(const Embedding& a,
                                           const Embedding& b) {
  const double na = a.squared_norm();
  const double nb = b.squared_norm();
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw DegenerateEmbeddingError("cosine_gradient: zero-norm embedding");
  }
  const double denom = std::sqrt(na * nb);
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  const double cos = dot / denom;
  std::vector<double> g(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    g[i] = b[i] / denom - cos * a[i] / na;
  }
  return g;
}

struct ScoreGradients {
  Tensor grad_a;  // d cos / d I_A, H x W x C
  Tensor grad_b;
};

inline ScoreGradients score_gradients(const ModelParams& params,
                                      const Tensor& ia, const Tensor& ib) {
  auto shared = std::make_shared<const ModelParams>(params);
  const ForwardResult fa = forward(shared, ia);
  const ForwardResult fb = forward(shared, ib);
  return {backward(fa.trace, cosine_gradient(fa.embedding, fb.embedding)),
          backward(fb.trace, cosine_gradient(fb.embedding, fa.embedding))};
}

struct PairMaps {
  SaliencyMap a;
  SaliencyMap b;
};

/// Signed colour-averaged gradient of the cosine score for each image.
inline PairMaps score_backprop(const ModelParams& params, const Tensor& ia,
                               const Tensor& ib) {
  const ScoreGradients g = score_gradients(params, ia, ib);
  return {reduce_channels(g.grad_a), reduce_channels(g.grad_b)};
}

// ---------------------------------------------------------------------------
// Random occlusion

/// Keep-weight masks: 1 keeps a pixel, 0 replaces it with the image mean.
struct MaskSet {
  std::vector<SaliencyMap> masks;
  std::uint64_t seed = 0;
  double probability = 0.5;  // chance a cell is occluded
  std::uint32_t cell = 1;

  std::size_t count() const { return masks.size(); }
};

/// Each `cell` x `cell` cell is occluded independently with `probability`.
/// cell == 1 gives binary per-pixel masks; larger cells are bilinearly
/// upsampled from the coarse grid, so entries are smooth in [0, 1].
inline MaskSet generate_masks(std::size_t height, std::size_t width,
                              std::size_t count, double probability,
                              std::uint64_t seed, std::uint32_t cell = 1) {
  if (!(probability >= 0.0 && probability <= 1.0)) {
    throw ConfigError("mask probability must lie in [0, 1]");
  }
  if (cell == 0) throw ConfigError("mask cell size must be positive");
  MaskSet set;
  set.seed = seed;
  set.probability = probability;
  set.cell = cell;
  Rng rng(seed);
  const std::size_t gh = (height + cell - 1) / cell + 1;
  const std::size_t gw = (width + cell - 1) / cell + 1;
  for (std::size_t m = 0; m < count; ++m) {
    SaliencyMap mask(height, width);
    if (cell == 1) {
      for (double& v : mask.values()) v = rng.bernoulli(probability) ? 0.0 : 1.0;
    } else {
      std::vector<double> grid(gh * gw);
      for (double& v : grid) v = rng.bernoulli(probability) ? 0.0 : 1.0;
      const double inv = 1.0 / static_cast<double>(cell);
      for (std::size_t y = 0; y < height; ++y) {
        const double gy = static_cast<double>(y) * inv;
        const auto y0 = static_cast<std::size_t>(gy);
        const double ty = gy - static_cast<double>(y0);
        for (std::size_t x = 0; x < width; ++x) {
          const double gx = static_cast<double>(x) * inv;
          const auto x0 = static_cast<std::size_t>(gx);
          const double tx = gx - static_cast<double>(x0);
          const double top = grid[y0 * gw + x0] * (1 - tx) +
                             grid[y0 * gw + x0 + 1] * tx;
          const double bottom = grid[(y0 + 1) * gw + x0] * (1 - tx) +
                                grid[(y0 + 1) * gw + x0 + 1] * tx;
          mask.at(y, x) = top * (1 - ty) + bottom * ty;
        }
      }
    }
    set.masks.push_back(std::move(mask));
  }
  return set;
}

inline std::vector<double> channel_means(const Tensor& image) {
  const std::size_t c = image.dim(2);
  std::vector<double> mean(c, 0.0);
  const std::size_t pixels = image.dim(0) * image.dim(1);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += image[p * c + ch];
  }
  for (double& v : mean) v /= static_cast<double>(pixels);
  return mean;
}

/// image * keep + fill * (1 - keep), per pixel across all colour channels.
inline Tensor apply_mask(const Tensor& image, const SaliencyMap& keep,
                         const std::vector<double>& fill) {
  Tensor out = image;
  const std::size_t c = image.dim(2);
  for (std::size_t p = 0; p < keep.size(); ++p) {
    const double k = keep[p];
    for (std::size_t ch = 0; ch < c; ++ch) {
      out[p * c + ch] = image[p * c + ch] * k + fill[ch] * (1.0 - k);
    }
  }
  return out;
}

/// Pearson correlation, per pixel, between the occlusion amount (1 - keep)
/// and the score drop it caused. Positive values mark pixels whose removal
/// lowers the similarity.
inline SplitMaps masked_saliency(const ModelParams& params, const Tensor& ia,
                                 const Tensor& ib, const MaskSet& masks,
                                 std::size_t threads = 1) {
  const std::size_t count = masks.count();
  if (count < 2) {
    throw ConfigError("masked_saliency needs at least 2 masks, got " +
                      std::to_string(count));
  }
  const std::size_t h = ia.dim(0), w = ia.dim(1);
  for (const SaliencyMap& m : masks.masks) {
    if (m.height() != h || m.width() != w) {
      throw ShapeError("mask extent does not match the image");
    }
  }
  const Embedding fa = embed(params, ia);
  const Embedding fb = embed(params, ib);
  const double base = cosine(fa, fb);
  const std::vector<double> fill = channel_means(ia);

  std::vector<double> drop(count);
  parallel_for(count, threads, [&](std::size_t m) {
    drop[m] = base - cosine(embed(params, apply_mask(ia, masks.masks[m], fill)), fb);
  });

  const double n = static_cast<double>(count);
  double drop_mean = 0.0;
  for (double d : drop) drop_mean += d;
  drop_mean /= n;
  double drop_var = 0.0;
  for (double d : drop) drop_var += (d - drop_mean) * (d - drop_mean);

  SaliencyMap corr(h, w);
  if (drop_var > 0.0) {
    for (std::size_t p = 0; p < h * w; ++p) {
      double occ_mean = 0.0;
      for (const SaliencyMap& m : masks.masks) occ_mean += 1.0 - m[p];
      occ_mean /= n;
      double cov = 0.0, occ_var = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        const double o = (1.0 - masks.masks[i][p]) - occ_mean;
        cov += o * (drop[i] - drop_mean);
        occ_var += o * o;
      }
      if (occ_var > 0.0) corr[p] = cov / std::sqrt(occ_var * drop_var);
    }
  }
  return split(corr);
}

}  // namespace fggb
