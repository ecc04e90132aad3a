#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fggb/error.hpp"
#include "fggb/tensor.hpp"

namespace fggb {

enum class LayerKind : std::uint32_t {
  kConv2d = 1,
  kAvgPool = 2,
  kRelu = 3,
  kFlatten = 4,
  kDense = 5,
};

inline const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kAvgPool: return "avgpool";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kDense: return "dense";
  }
  return "unknown";
}

/// One entry of a sequential layer chain. Unused fields stay zero.
///   conv2d : square kernel, stride, zero padding, `outputs` channels
///   avgpool: square window `kernel`, `stride`, no padding
///   dense  : `outputs` units, input must be rank-1 (flatten first)
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::uint32_t kernel = 0;
  std::uint32_t stride = 1;
  std::uint32_t padding = 0;
  std::uint32_t outputs = 0;
  bool bias = false;

  static LayerSpec conv(std::uint32_t out_channels, std::uint32_t kernel,
                        std::uint32_t stride = 1, std::uint32_t padding = 0,
                        bool bias = false) {
    return {LayerKind::kConv2d, kernel, stride, padding, out_channels, bias};
  }
  static LayerSpec avg_pool(std::uint32_t kernel, std::uint32_t stride) {
    return {LayerKind::kAvgPool, kernel, stride, 0, 0, false};
  }
  static LayerSpec relu() { return {LayerKind::kRelu, 0, 1, 0, 0, false}; }
  static LayerSpec flatten() {
    return {LayerKind::kFlatten, 0, 1, 0, 0, false};
  }
  static LayerSpec dense(std::uint32_t units, bool bias = false) {
    return {LayerKind::kDense, 0, 1, 0, units, bias};
  }

  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  Shape input;  // H x W x C
  std::vector<LayerSpec> layers;

  bool operator==(const ModelSpec&) const = default;
};

namespace detail {

inline std::string layer_label(std::size_t index, const LayerSpec& layer) {
  return "layer " + std::to_string(index) + " (" +
         layer_kind_name(layer.kind) + ")";
}

}  // namespace detail

/// Walks the layer chain and returns every activation shape, starting with
/// the input and ending with the embedding. Throws SpecError naming the
/// first layer that does not fit.
inline std::vector<Shape> activation_shapes(const ModelSpec& spec) {
  if (spec.input.size() != 3) {
    throw SpecError("model input must be H x W x C, got " +
                    shape_string(spec.input));
  }
  for (std::size_t e : spec.input) {
    if (e == 0) throw SpecError("model input extents must be positive");
  }
  std::vector<Shape> shapes{spec.input};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    const Shape& in = shapes.back();
    const std::string label = detail::layer_label(i, layer);
    auto need_image = [&] {
      if (in.size() != 3) {
        throw SpecError(label + ": expects an H x W x C input, got " +
                        shape_string(in));
      }
    };
    switch (layer.kind) {
      case LayerKind::kConv2d: {
        need_image();
        if (layer.kernel == 0 || layer.stride == 0 || layer.outputs == 0) {
          throw SpecError(label + ": kernel, stride and outputs must be > 0");
        }
        const std::size_t ph = in[0] + 2 * layer.padding;
        const std::size_t pw = in[1] + 2 * layer.padding;
        if (layer.kernel > ph || layer.kernel > pw) {
          throw SpecError(label + ": kernel " + std::to_string(layer.kernel) +
                          " exceeds padded input " + shape_string(in));
        }
        shapes.push_back({(ph - layer.kernel) / layer.stride + 1,
                          (pw - layer.kernel) / layer.stride + 1,
                          layer.outputs});
        break;
      }
      case LayerKind::kAvgPool: {
        need_image();
        if (layer.kernel == 0 || layer.stride == 0) {
          throw SpecError(label + ": kernel and stride must be > 0");
        }
        if (layer.kernel > in[0] || layer.kernel > in[1]) {
          throw SpecError(label + ": window " + std::to_string(layer.kernel) +
                          " exceeds input " + shape_string(in));
        }
        shapes.push_back({(in[0] - layer.kernel) / layer.stride + 1,
                          (in[1] - layer.kernel) / layer.stride + 1, in[2]});
        break;
      }
      case LayerKind::kRelu:
        shapes.push_back(in);
        break;
      case LayerKind::kFlatten:
        shapes.push_back({shape_size(in)});
        break;
      case LayerKind::kDense:
        if (in.size() != 1) {
          throw SpecError(label + ": expects a flattened vector input, got " +
                          shape_string(in));
        }
        if (layer.outputs == 0) throw SpecError(label + ": outputs must be > 0");
        shapes.push_back({layer.outputs});
        break;
      default:
        throw SpecError(label + ": unknown layer kind");
    }
  }
  if (shapes.back().size() != 1) {
    throw SpecError("model output must be a vector, got " +
                    shape_string(shapes.back()) + " (missing flatten?)");
  }
  if (shapes.back()[0] < 2) {
    throw SpecError("embedding dimension must be at least 2");
  }
  return shapes;
}

inline std::size_t embedding_dim(const ModelSpec& spec) {
  return activation_shapes(spec).back()[0];
}

struct LayerWeights {
  std::vector<double> weight;  // conv: [out][ky][kx][in], dense: [out][in]
  std::vector<double> bias;    // empty when the layer has no bias

  bool operator==(const LayerWeights&) const = default;
};

/// Expected (weight, bias) counts for layer `index` given its input shape.
inline std::pair<std::size_t, std::size_t> parameter_counts(
    const LayerSpec& layer, const Shape& in) {
  switch (layer.kind) {
    case LayerKind::kConv2d:
      return {std::size_t{layer.outputs} * layer.kernel * layer.kernel * in[2],
              layer.bias ? layer.outputs : 0};
    case LayerKind::kDense:
      return {std::size_t{layer.outputs} * in[0],
              layer.bias ? layer.outputs : 0};
    default:
      return {0, 0};
  }
}

inline std::size_t fan_in(const LayerSpec& layer, const Shape& in) {
  switch (layer.kind) {
    case LayerKind::kConv2d:
      return std::size_t{layer.kernel} * layer.kernel * in[2];
    case LayerKind::kDense:
      return in[0];
    default:
      return 0;
  }
}

/// Validated spec together with one weight set per layer.
class ModelParams {
 public:
  ModelParams() = default;

  ModelParams(ModelSpec spec, std::vector<LayerWeights> layers,
              std::uint64_t seed = 0)
      : spec_(std::move(spec)), layers_(std::move(layers)), seed_(seed) {
    shapes_ = activation_shapes(spec_);
    if (layers_.size() != spec_.layers.size()) {
      throw SpecError("expected weights for " +
                      std::to_string(spec_.layers.size()) + " layers, got " +
                      std::to_string(layers_.size()));
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto [nw, nb] = parameter_counts(spec_.layers[i], shapes_[i]);
      if (layers_[i].weight.size() != nw || layers_[i].bias.size() != nb) {
        throw SpecError(detail::layer_label(i, spec_.layers[i]) +
                        ": expected " + std::to_string(nw) + " weights and " +
                        std::to_string(nb) + " biases, got " +
                        std::to_string(layers_[i].weight.size()) + " and " +
                        std::to_string(layers_[i].bias.size()));
      }
    }
  }

  const ModelSpec& spec() const { return spec_; }
  const std::vector<LayerWeights>& layers() const { return layers_; }
  const std::vector<Shape>& shapes() const { return shapes_; }
  std::uint64_t seed() const { return seed_; }
  const Shape& input_shape() const { return spec_.input; }
  std::size_t embedding_dim() const { return shapes_.back()[0]; }

  bool operator==(const ModelParams& other) const {
    return spec_ == other.spec_ && layers_ == other.layers_ &&
           seed_ == other.seed_;
  }

 private:
  ModelSpec spec_;
  std::vector<LayerWeights> layers_;
  std::vector<Shape> shapes_;
  std::uint64_t seed_ = 0;
};

}  // namespace fggb
