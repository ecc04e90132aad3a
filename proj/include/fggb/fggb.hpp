#pragma once

// Feature-guided gradient backpropagation: one gradient map per embedding
// channel, normalised, then weighted by the channel-wise cosine between the
// two embeddings minus an even share of the decision threshold. The signed
// result splits into a similarity map (>= 0) and a dissimilarity map (< 0).

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "fggb/autodiff.hpp"
#include "fggb/embedder.hpp"
#include "fggb/error.hpp"
#include "fggb/parallel.hpp"
#include "fggb/saliency.hpp"
#include "fggb/tensor.hpp"

namespace fggb {

struct GradientStack {
  std::vector<Tensor> maps;  // maps[k] = dF_k / dI

  std::size_t size() const { return maps.size(); }
};

struct NormalizedStack {
  std::vector<Tensor> maps;  // |G_k| / ||G_k||_F, or zeros

  std::size_t size() const { return maps.size(); }
};

struct WeightVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

struct ExplanationSet {
  SaliencyMap sim_a, dissim_a, sim_b, dissim_b;
  Verdict verdict;
};

/// Backward pass from every embedding channel of an existing trace.
inline GradientStack gradient_stack(const Trace& trace,
                                    std::size_t threads = 1) {
  GradientStack stack;
  stack.maps.resize(trace.embedding_dim());
  parallel_for(stack.maps.size(), threads, [&](std::size_t k) {
    stack.maps[k] = backward_channel(trace, k);
  });
  return stack;
}

inline GradientStack gradient_stack(const ModelParams& params,
                                    const Tensor& image,
                                    std::size_t threads = 1) {
  return gradient_stack(forward(params, image).trace, threads);
}

inline NormalizedStack normalize_stack(const GradientStack& g) {
  NormalizedStack out;
  out.maps.reserve(g.size());
  for (const Tensor& map : g.maps) {
    Tensor n(map.shape());
    const double norm = map.frobenius_norm();
    if (norm > 0.0) {
      for (std::size_t i = 0; i < map.size(); ++i) {
        n[i] = std::abs(map[i]) / norm;
      }
    }
    out.maps.push_back(std::move(n));
  }
  return out;
}

inline WeightVector channel_weights(const Embedding& fa, const Embedding& fb) {
  if (fa.size() != fb.size()) {
    throw ShapeError("channel_weights: embeddings have lengths " +
                     std::to_string(fa.size()) + " and " +
                     std::to_string(fb.size()));
  }
  const double na = fa.squared_norm();
  const double nb = fb.squared_norm();
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw DegenerateEmbeddingError("channel_weights: zero-norm embedding");
  }
  const double denom = std::sqrt(na * nb);
  WeightVector w;
  w.values.resize(fa.size());
  for (std::size_t k = 0; k < fa.size(); ++k) {
    w.values[k] = fa[k] * fb[k] / denom;
  }
  return w;
}

/// Per-channel coefficient w_k - threshold / N.
inline std::vector<double> channel_coefficients(const WeightVector& w,
                                                double threshold) {
  const double offset = threshold / static_cast<double>(w.size());
  std::vector<double> coef(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) coef[k] = w.values[k] - offset;
  return coef;
}

/// S = mean_c sum_k norm_k * (w_k - threshold / N), summed in ascending k.
inline SaliencyMap aggregate(const NormalizedStack& norm, const WeightVector& w,
                             double threshold) {
  if (norm.size() != w.size()) {
    throw ShapeError("aggregate: " + std::to_string(norm.size()) +
                     " gradient maps but " + std::to_string(w.size()) +
                     " weights");
  }
  if (norm.maps.empty()) throw ShapeError("aggregate: empty gradient stack");
  if (!(threshold >= -1.0 && threshold <= 1.0)) {
    throw ConfigError("threshold must lie in [-1, 1], got " +
                      std::to_string(threshold));
  }
  const Shape& shape = norm.maps.front().shape();
  for (const Tensor& m : norm.maps) require_shape(m, shape, "aggregate");

  const std::vector<double> coef = channel_coefficients(w, threshold);
  Tensor acc(shape);
  for (std::size_t k = 0; k < norm.size(); ++k) {
    const Tensor& m = norm.maps[k];
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m[i] * coef[k];
  }
  return reduce_channels(acc);
}

/// Similarity and dissimilarity maps for both images of a pair.
inline ExplanationSet explain_pair(const ModelParams& params, const Tensor& ia,
                                   const Tensor& ib, double threshold,
                                   std::size_t threads = 1) {
  auto shared = std::make_shared<const ModelParams>(params);
  const ForwardResult fa = forward(shared, ia);
  const ForwardResult fb = forward(shared, ib);
  const Verdict verdict = verify(fa.embedding, fb.embedding, threshold);
  const WeightVector w = channel_weights(fa.embedding, fb.embedding);

  const SaliencyMap sa =
      aggregate(normalize_stack(gradient_stack(fa.trace, threads)), w, threshold);
  const SaliencyMap sb =
      aggregate(normalize_stack(gradient_stack(fb.trace, threads)), w, threshold);
  SplitMaps a = split(sa);
  SplitMaps b = split(sb);
  return {std::move(a.plus), std::move(a.minus), std::move(b.plus),
          std::move(b.minus), verdict};
}

}  // namespace fggb
