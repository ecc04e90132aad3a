#pragma once

// Test-only reference code. Everything here is written straight from the
// layer formulas and shares no code path with the library's kernels, trace
// or FGGB pipeline.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "fggb/embedder.hpp"
#include "fggb/random.hpp"
#include "fggb/saliency.hpp"
#include "fggb/tensor.hpp"

namespace fggb::oracle {

// Plain nested-vector image: img[y][x][c].
using Image3 = std::vector<std::vector<std::vector<double>>>;

inline Image3 to_nested(const Tensor& t) {
  Image3 img(t.dim(0), std::vector<std::vector<double>>(
                           t.dim(1), std::vector<double>(t.dim(2))));
  for (std::size_t y = 0; y < t.dim(0); ++y)
    for (std::size_t x = 0; x < t.dim(1); ++x)
      for (std::size_t c = 0; c < t.dim(2); ++c) img[y][x][c] = t.at(y, x, c);
  return img;
}

inline Image3 conv(const Image3& in, const LayerSpec& l, const LayerWeights& w) {
  const std::size_t h = in.size(), wd = in[0].size(), ci = in[0][0].size();
  const std::size_t p = l.padding, k = l.kernel, s = l.stride;
  // Materialise the zero-padded input first.
  Image3 padded(h + 2 * p, std::vector<std::vector<double>>(
                               wd + 2 * p, std::vector<double>(ci, 0.0)));
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < wd; ++x) padded[y + p][x + p] = in[y][x];
  const std::size_t ho = (h + 2 * p - k) / s + 1;
  const std::size_t wo = (wd + 2 * p - k) / s + 1;
  Image3 out(ho, std::vector<std::vector<double>>(
                     wo, std::vector<double>(l.outputs, 0.0)));
  for (std::size_t oc = 0; oc < l.outputs; ++oc) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx)
              acc += w.weight[((oc * k + ky) * k + kx) * ci + c] *
                     padded[oy * s + ky][ox * s + kx][c];
        if (!w.bias.empty()) acc += w.bias[oc];
        out[oy][ox][oc] = acc;
      }
    }
  }
  return out;
}

inline Image3 pool(const Image3& in, const LayerSpec& l) {
  const std::size_t k = l.kernel, s = l.stride;
  const std::size_t ho = (in.size() - k) / s + 1;
  const std::size_t wo = (in[0].size() - k) / s + 1;
  const std::size_t ch = in[0][0].size();
  Image3 out(ho, std::vector<std::vector<double>>(wo, std::vector<double>(ch)));
  for (std::size_t oy = 0; oy < ho; ++oy)
    for (std::size_t ox = 0; ox < wo; ++ox)
      for (std::size_t c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx)
            acc += in[oy * s + ky][ox * s + kx][c];
        out[oy][ox][c] = acc / static_cast<double>(k * k);
      }
  return out;
}

/// Forward pass written directly from the layer definitions.
inline std::vector<double> reference_forward(const ModelParams& params, const Tensor& t) {
  Image3 img = to_nested(t);
  std::vector<double> vec;
  bool flat = false;
  const auto& spec = params.spec();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const LayerWeights& w = params.layers()[i];
    switch (l.kind) {
      case LayerKind::kConv2d: img = conv(img, l, w); break;
      case LayerKind::kAvgPool: img = pool(img, l); break;
      case LayerKind::kRelu:
        if (flat) {
          for (double& v : vec) v = std::max(v, 0.0);
        } else {
          for (auto& row : img)
            for (auto& px : row)
              for (double& v : px) v = std::max(v, 0.0);
        }
        break;
      case LayerKind::kFlatten:
        vec.clear();
        for (auto& row : img)
          for (auto& px : row)
            for (double v : px) vec.push_back(v);
        flat = true;
        break;
      case LayerKind::kDense: {
        std::vector<double> out(l.outputs, 0.0);
        for (std::size_t o = 0; o < l.outputs; ++o) {
          for (std::size_t j = 0; j < vec.size(); ++j)
            out[o] += w.weight[o * vec.size() + j] * vec[j];
          if (!w.bias.empty()) out[o] += w.bias[o];
        }
        vec = out;
        break;
      }
    }
  }
  return vec;
}

/// Central-difference Jacobian column for channel k: dF_k/dI.
inline Tensor numeric_channel_gradient(const ModelParams& params,
                                       const Tensor& image, std::size_t k,
                                       double step) {
  Tensor g(image.shape());
  Tensor probe = image;
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double plus = reference_forward(params, probe)[k];
    probe[i] = orig - step;
    const double minus = reference_forward(params, probe)[k];
    probe[i] = orig;
    g[i] = (plus - minus) / (2.0 * step);
  }
  return g;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

/// Direct evaluation of the saliency formula from raw gradient maps:
/// S(y,x) = 1/C * sum_c sum_k |G_k(y,x,c)| / ||G_k|| * (a_k b_k / (|a||b|) - t/N)
inline SaliencyMap reference_saliency(const std::vector<Tensor>& grads,
                                      const std::vector<double>& a,
                                      const std::vector<double>& b,
                                      double threshold) {
  const std::size_t n = grads.size();
  const std::size_t h = grads[0].dim(0), w = grads[0].dim(1), c = grads[0].dim(2);
  double aa = 0, bb = 0;
  for (std::size_t k = 0; k < n; ++k) {
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  std::vector<double> norms(n);
  for (std::size_t k = 0; k < n; ++k) {
    double sq = 0;
    for (double v : grads[k].data()) sq += v * v;
    norms[k] = std::sqrt(sq);
  }
  SaliencyMap s(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double total = 0;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t k = 0; k < n; ++k) {
          if (norms[k] == 0) continue;
          const double weight = a[k] * b[k] / (std::sqrt(aa) * std::sqrt(bb));
          total += std::abs(grads[k].at(y, x, ch)) / norms[k] *
                   (weight - threshold / static_cast<double>(n));
        }
      s.at(y, x) = total / static_cast<double>(c);
    }
  return s;
}

// ---------------------------------------------------------------------------
// Fixtures

inline Tensor random_image(std::size_t h, std::size_t w, std::size_t c,
                           std::uint64_t seed) {
  Tensor t = Tensor::image(h, w, c);
  Rng rng(seed);
  for (double& v : t.data()) v = rng.uniform(0.05, 0.95);
  return t;
}

struct ImagePair {
  Tensor a;
  Tensor b;
};

/// 16x16 grey pair on a 4x4 grid of 4x4 blocks: identical inside block
/// `keep`, complementary (b = 1 - a) everywhere else, with a alternating
/// between bright and dark blocks.
inline ImagePair localization_pair(std::size_t keep, std::uint64_t seed) {
  Rng rng(seed);
  Tensor a = Tensor::image(16, 16, 1), b = Tensor::image(16, 16, 1);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      const std::size_t block = (y / 4) * 4 + x / 4;
      if (block == keep) {
        const double v = rng.uniform(0.5, 0.9);
        a.at(y, x, 0) = v;
        b.at(y, x, 0) = v;
      } else {
        const double v = block % 2 == 0 ? rng.uniform(0.75, 0.95)
                                        : rng.uniform(0.05, 0.25);
        a.at(y, x, 0) = v;
        b.at(y, x, 0) = 1.0 - v;
      }
    }
  return {a, b};
}

/// Embedding (x_q, 1): the only input-dependent channel is pixel q.
inline ModelParams single_pixel_model(std::size_t h, std::size_t w,
                                      std::size_t q) {
  ModelSpec spec = linear_embedder_spec(h, w, 1, 2, /*bias=*/true);
  LayerWeights dense;
  dense.weight.assign(2 * h * w, 0.0);
  dense.weight[q] = 1.0;
  dense.bias = {0.0, 1.0};
  return ModelParams(spec, {LayerWeights{}, dense});
}

/// Linear model F = W x with explicit rows.
inline ModelParams linear_model(std::size_t h, std::size_t w, std::size_t c,
                                std::vector<double> rows, std::size_t n) {
  ModelSpec spec = linear_embedder_spec(h, w, c, static_cast<std::uint32_t>(n));
  LayerWeights dense;
  dense.weight = std::move(rows);
  return ModelParams(spec, {LayerWeights{}, dense});
}

// Brute-force enumeration: pick the remaining maximum (first on ties), apply
// the perturbation to that pixel, score the whole image from scratch.
inline std::vector<double> enumerate_curve(const ModelParams& params, const Tensor& start,
                                    const Tensor& finish, const Tensor& b,
                                    const SaliencyMap& s, std::size_t steps) {
  const std::size_t pixels = s.size(), c = start.dim(2);
  std::vector<bool> used(pixels, false);
  std::vector<std::size_t> order;
  for (std::size_t n = 0; n < pixels; ++n) {
    std::size_t best = pixels;
    for (std::size_t p = 0; p < pixels; ++p) {
      if (used[p]) continue;
      if (best == pixels || s[p] > s[best]) best = p;
    }
    used[best] = true;
    order.push_back(best);
  }
  const Embedding fb = embed(params, b);
  std::vector<double> scores;
  for (std::size_t i = 0; i <= steps; ++i) {
    const std::size_t count = i * pixels / steps;
    Tensor img = start;
    for (std::size_t j = 0; j < count; ++j)
      for (std::size_t ch = 0; ch < c; ++ch) img[order[j] * c + ch] = finish[order[j] * c + ch];
    scores.push_back(cosine(embed(params, img), fb));
  }
  return scores;
}

inline Tensor mean_filled(const Tensor& image) {
  Tensor out(image.shape());
  const std::size_t c = image.dim(2), pixels = image.dim(0) * image.dim(1);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0;
    for (std::size_t p = 0; p < pixels; ++p) sum += image[p * c + ch];
    for (std::size_t p = 0; p < pixels; ++p) out[p * c + ch] = sum / static_cast<double>(pixels);
  }
  return out;
}

}  // namespace fggb::oracle
