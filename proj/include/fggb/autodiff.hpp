#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fggb/error.hpp"
#include "fggb/model.hpp"
#include "fggb/tensor.hpp"

namespace fggb {

// Layer kernels. Every forward/adjoint pair below iterates in a fixed order,
// so the same inputs always produce the same bits.
namespace layers {

inline Tensor conv2d_forward(const Tensor& in, const LayerSpec& layer,
                             const LayerWeights& w, const Shape& out_shape) {
  const std::size_t h = in.dim(0), wd = in.dim(1), ci = in.dim(2);
  const std::size_t ho = out_shape[0], wo = out_shape[1], co = out_shape[2];
  const std::size_t k = layer.kernel, s = layer.stride;
  const auto pad = static_cast<std::ptrdiff_t>(layer.padding);
  Tensor out(out_shape);
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      for (std::size_t oc = 0; oc < co; ++oc) {
        double acc = w.bias.empty() ? 0.0 : w.bias[oc];
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * s + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * s + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            const double* wp = &w.weight[((oc * k + ky) * k + kx) * ci];
            const double* xp = &in.data()[(static_cast<std::size_t>(iy) * wd +
                                           static_cast<std::size_t>(ix)) * ci];
            for (std::size_t c = 0; c < ci; ++c) acc += wp[c] * xp[c];
          }
        }
        out.at(oy, ox, oc) = acc;
      }
    }
  }
  return out;
}

inline Tensor conv2d_adjoint(const Tensor& grad_out, const Shape& in_shape,
                             const LayerSpec& layer, const LayerWeights& w) {
  const std::size_t h = in_shape[0], wd = in_shape[1], ci = in_shape[2];
  const std::size_t ho = grad_out.dim(0), wo = grad_out.dim(1),
                    co = grad_out.dim(2);
  const std::size_t k = layer.kernel, s = layer.stride;
  const auto pad = static_cast<std::ptrdiff_t>(layer.padding);
  Tensor grad_in(in_shape);
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      for (std::size_t oc = 0; oc < co; ++oc) {
        const double g = grad_out.at(oy, ox, oc);
        if (g == 0.0) continue;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * s + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * s + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            const double* wp = &w.weight[((oc * k + ky) * k + kx) * ci];
            double* gp = &grad_in.data()[(static_cast<std::size_t>(iy) * wd +
                                          static_cast<std::size_t>(ix)) * ci];
            for (std::size_t c = 0; c < ci; ++c) gp[c] += wp[c] * g;
          }
        }
      }
    }
  }
  return grad_in;
}

inline Tensor avg_pool_forward(const Tensor& in, const LayerSpec& layer,
                               const Shape& out_shape) {
  const std::size_t ch = in.dim(2);
  const std::size_t k = layer.kernel, s = layer.stride;
  const double scale = 1.0 / static_cast<double>(k * k);
  Tensor out(out_shape);
  for (std::size_t oy = 0; oy < out_shape[0]; ++oy) {
    for (std::size_t ox = 0; ox < out_shape[1]; ++ox) {
      for (std::size_t c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            acc += in.at(oy * s + ky, ox * s + kx, c);
          }
        }
        out.at(oy, ox, c) = acc * scale;
      }
    }
  }
  return out;
}

inline Tensor avg_pool_adjoint(const Tensor& grad_out, const Shape& in_shape,
                               const LayerSpec& layer) {
  const std::size_t ch = in_shape[2];
  const std::size_t k = layer.kernel, s = layer.stride;
  const double scale = 1.0 / static_cast<double>(k * k);
  Tensor grad_in(in_shape);
  for (std::size_t oy = 0; oy < grad_out.dim(0); ++oy) {
    for (std::size_t ox = 0; ox < grad_out.dim(1); ++ox) {
      for (std::size_t c = 0; c < ch; ++c) {
        const double g = grad_out.at(oy, ox, c) * scale;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            grad_in.at(oy * s + ky, ox * s + kx, c) += g;
          }
        }
      }
    }
  }
  return grad_in;
}

inline Tensor relu_forward(const Tensor& in) {
  Tensor out = in;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

// The rectifier adjoint at exactly 0 is 0.
inline Tensor relu_adjoint(const Tensor& grad_out, const Tensor& in) {
  Tensor grad_in = grad_out;
  for (std::size_t i = 0; i < grad_in.size(); ++i) {
    if (!(in[i] > 0.0)) grad_in[i] = 0.0;
  }
  return grad_in;
}

inline Tensor dense_forward(const Tensor& in, const LayerWeights& w,
                            std::size_t units) {
  const std::size_t n = in.size();
  Tensor out({units});
  for (std::size_t i = 0; i < units; ++i) {
    double acc = w.bias.empty() ? 0.0 : w.bias[i];
    const double* row = &w.weight[i * n];
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * in[j];
    out[i] = acc;
  }
  return out;
}

inline Tensor dense_adjoint(const Tensor& grad_out, std::size_t in_size,
                            const LayerWeights& w) {
  Tensor grad_in({in_size});
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const double g = grad_out[i];
    if (g == 0.0) continue;
    const double* row = &w.weight[i * in_size];
    for (std::size_t j = 0; j < in_size; ++j) grad_in[j] += row[j] * g;
  }
  return grad_in;
}

inline Tensor apply_forward(const Tensor& in, const LayerSpec& layer,
                            const LayerWeights& w, const Shape& out_shape) {
  switch (layer.kind) {
    case LayerKind::kConv2d: return conv2d_forward(in, layer, w, out_shape);
    case LayerKind::kAvgPool: return avg_pool_forward(in, layer, out_shape);
    case LayerKind::kRelu: return relu_forward(in);
    case LayerKind::kFlatten: return in.reshaped(out_shape);
    case LayerKind::kDense: return dense_forward(in, w, layer.outputs);
  }
  throw SpecError("unknown layer kind");
}

inline Tensor apply_adjoint(const Tensor& grad_out, const Tensor& in,
                            const LayerSpec& layer, const LayerWeights& w) {
  switch (layer.kind) {
    case LayerKind::kConv2d:
      return conv2d_adjoint(grad_out, in.shape(), layer, w);
    case LayerKind::kAvgPool:
      return avg_pool_adjoint(grad_out, in.shape(), layer);
    case LayerKind::kRelu: return relu_adjoint(grad_out, in);
    case LayerKind::kFlatten: return grad_out.reshaped(in.shape());
    case LayerKind::kDense: return dense_adjoint(grad_out, in.size(), w);
  }
  throw SpecError("unknown layer kind");
}

}  // namespace layers

inline void check_input(const ModelParams& params, const Tensor& image) {
  require_shape(image, params.input_shape(), "model input");
}

/// Recorded forward pass: the activation entering and leaving every layer,
/// plus the parameters needed to evaluate the layer adjoints. Immutable once
/// built, so backward passes for different seeds may run concurrently.
class Trace {
 public:
  Trace(std::shared_ptr<const ModelParams> params,
        std::vector<Tensor> activations)
      : params_(std::move(params)), activations_(std::move(activations)) {}

  const ModelParams& params() const { return *params_; }
  const Tensor& input() const { return activations_.front(); }
  const Tensor& output() const { return activations_.back(); }
  const std::vector<Tensor>& activations() const { return activations_; }
  std::size_t embedding_dim() const { return activations_.back().size(); }

 private:
  std::shared_ptr<const ModelParams> params_;
  std::vector<Tensor> activations_;
};

/// Output of the network without recording anything.
inline Tensor evaluate(const ModelParams& params, const Tensor& image) {
  check_input(params, image);
  const auto& spec = params.spec();
  Tensor act = image;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    act = layers::apply_forward(act, spec.layers[i], params.layers()[i],
                                params.shapes()[i + 1]);
  }
  return act;
}

inline Trace record(std::shared_ptr<const ModelParams> params,
                    const Tensor& image) {
  check_input(*params, image);
  const auto& spec = params->spec();
  std::vector<Tensor> acts;
  acts.reserve(spec.layers.size() + 1);
  acts.push_back(image);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    acts.push_back(layers::apply_forward(acts.back(), spec.layers[i],
                                         params->layers()[i],
                                         params->shapes()[i + 1]));
  }
  return Trace(std::move(params), std::move(acts));
}

inline Trace record(const ModelParams& params, const Tensor& image) {
  return record(std::make_shared<const ModelParams>(params), image);
}

/// Re-runs the recorded layers from the stored input.
inline Tensor replay(const Trace& trace) {
  return evaluate(trace.params(), trace.input());
}

/// Vector-Jacobian product: gradient of <seed, F(I)> with respect to I.
inline Tensor backward(const Trace& trace, std::span<const double> seed) {
  if (seed.size() != trace.embedding_dim()) {
    throw ShapeError("backward seed has " + std::to_string(seed.size()) +
                     " entries, embedding has " +
                     std::to_string(trace.embedding_dim()));
  }
  const auto& params = trace.params();
  const auto& acts = trace.activations();
  Tensor grad(trace.output().shape(),
              std::vector<double>(seed.begin(), seed.end()));
  for (std::size_t i = params.spec().layers.size(); i-- > 0;) {
    grad = layers::apply_adjoint(grad, acts[i], params.spec().layers[i],
                                 params.layers()[i]);
  }
  return grad;
}

/// Gradient map of feature channel k (0-based) with respect to the input.
inline Tensor backward_channel(const Trace& trace, std::size_t k) {
  const std::size_t n = trace.embedding_dim();
  if (k >= n) {
    throw IndexError("channel " + std::to_string(k) +
                     " out of range; valid channels are 0.." +
                     std::to_string(n - 1));
  }
  std::vector<double> seed(n, 0.0);
  seed[k] = 1.0;
  return backward(trace, seed);
}

/// Largest relative error between backward_channel and central differences
/// over every channel and input entry. The denominator is
/// max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const ModelParams& params, const Tensor& image,
                         double step) {
  if (!(step > 0.0)) {
    throw PreconditionError("grad_check step must be > 0, got " +
                            std::to_string(step));
  }
  const Trace trace = record(params, image);
  const std::size_t n = trace.embedding_dim();
  std::vector<Tensor> analytic;
  analytic.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    analytic.push_back(backward_channel(trace, k));
  }

  constexpr double kFloor = 1e-8;
  double worst = 0.0;
  Tensor probe = image;
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const Tensor plus = evaluate(params, probe);
    probe[i] = orig - step;
    const Tensor minus = evaluate(params, probe);
    probe[i] = orig;
    for (std::size_t k = 0; k < n; ++k) {
      const double numeric = (plus[k] - minus[k]) / (2.0 * step);
      const double exact = analytic[k][i];
      const double denom =
          std::max({std::abs(exact), std::abs(numeric), kFloor});
      worst = std::max(worst, std::abs(exact - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace fggb
