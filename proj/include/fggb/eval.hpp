#pragma once

// Deletion / Insertion evaluation. Pixels of image A are removed (or
// restored onto a blurred copy) in descending saliency order and the
// verification score against image B is tracked along the way.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fggb/baselines.hpp"
#include "fggb/embedder.hpp"
#include "fggb/error.hpp"
#include "fggb/fggb.hpp"
#include "fggb/parallel.hpp"
#include "fggb/saliency.hpp"

namespace fggb {

// ---------------------------------------------------------------------------
// Gaussian blur (separable, edge replication)

inline std::vector<double> gaussian_kernel(std::size_t size, double sigma) {
  if (size % 2 == 0) {
    throw ConfigError("blur kernel size must be odd, got " +
                      std::to_string(size));
  }
  if (!(sigma > 0.0)) throw ConfigError("blur sigma must be > 0");
  const auto r = static_cast<std::ptrdiff_t>(size / 2);
  std::vector<double> k(size);
  double total = 0.0;
  for (std::ptrdiff_t i = -r; i <= r; ++i) {
    const double v =
        std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + r)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  return k;
}

namespace detail {

// Blurs `planes` interleaved planes of an h x w grid in place.
inline void blur_planes(std::vector<double>& data, std::size_t h,
                        std::size_t w, std::size_t planes,
                        const std::vector<double>& kernel) {
  const auto r = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const auto clamp_to = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  std::vector<double> tmp(data.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < planes; ++c) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -r; i <= r; ++i) {
          const std::size_t xx = clamp_to(static_cast<std::ptrdiff_t>(x) + i, w);
          acc += kernel[static_cast<std::size_t>(i + r)] *
                 data[(y * w + xx) * planes + c];
        }
        tmp[(y * w + x) * planes + c] = acc;
      }
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < planes; ++c) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -r; i <= r; ++i) {
          const std::size_t yy = clamp_to(static_cast<std::ptrdiff_t>(y) + i, h);
          acc += kernel[static_cast<std::size_t>(i + r)] *
                 tmp[(yy * w + x) * planes + c];
        }
        data[(y * w + x) * planes + c] = acc;
      }
    }
  }
}

}  // namespace detail

inline SaliencyMap gaussian_blur(const SaliencyMap& s, std::size_t kernel_size,
                                 double sigma) {
  const std::vector<double> k = gaussian_kernel(kernel_size, sigma);
  SaliencyMap out = s;
  detail::blur_planes(out.values(), s.height(), s.width(), 1, k);
  return out;
}

/// Per-channel blur of an H x W x C image.
inline Tensor blur_image(const Tensor& image, std::size_t kernel_size,
                         double sigma) {
  const std::vector<double> k = gaussian_kernel(kernel_size, sigma);
  std::vector<double> data = image.values();
  detail::blur_planes(data, image.dim(0), image.dim(1), image.dim(2), k);
  return Tensor(image.shape(), std::move(data));
}

// ---------------------------------------------------------------------------
// Curves

struct EvalCurve {
  std::vector<double> fractions;
  std::vector<double> scores;
  double auc = 0.0;
};

inline double trapezoid(const std::vector<double>& xs,
                        const std::vector<double>& ys) {
  double area = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    area += 0.5 * (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]);
  }
  return area;
}

struct FillRule {
  enum class Kind { kMean, kZero, kConstant };
  Kind kind = Kind::kMean;
  double value = 0.0;

  static FillRule mean() { return {Kind::kMean, 0.0}; }
  static FillRule zero() { return {Kind::kZero, 0.0}; }
  static FillRule constant(double v) { return {Kind::kConstant, v}; }

  std::vector<double> values_for(const Tensor& image) const {
    switch (kind) {
      case Kind::kMean: return channel_means(image);
      case Kind::kZero: return std::vector<double>(image.dim(2), 0.0);
      case Kind::kConstant: return std::vector<double>(image.dim(2), value);
    }
    return {};
  }
};

/// Pixel indices in descending saliency; ties keep row-major order.
inline std::vector<std::size_t> rank_pixels(const SaliencyMap& s) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return s[l] > s[r];
  });
  return order;
}

/// Number of pixels perturbed at step i of `steps` (floor(i * P / steps)).
inline std::size_t pixels_at_step(std::size_t i, std::size_t steps,
                                  std::size_t pixels) {
  return i * pixels / steps;
}

/// Cosine score used along evaluation curves. A perturbed image whose
/// embedding collapses to zero cannot be matched and scores 0.
inline double curve_score(const Embedding& a, const Embedding& b) {
  if (a.is_degenerate() || b.is_degenerate()) return 0.0;
  return cosine(a, b);
}

namespace detail {

inline void check_map_extent(const SaliencyMap& s, const Tensor& image) {
  if (s.height() != image.dim(0) || s.width() != image.dim(1)) {
    throw ShapeError("saliency map is " + std::to_string(s.height()) + "x" +
                     std::to_string(s.width()) + " but the image is " +
                     shape_string(image.shape()));
  }
}

inline void check_steps(std::size_t steps) {
  if (steps < 2) {
    throw ConfigError("evaluation needs at least 2 steps, got " +
                      std::to_string(steps));
  }
}

// Copies pixels order[from..to) of `source` into `target`.
inline void copy_pixels(Tensor& target, const Tensor& source,
                        const std::vector<std::size_t>& order,
                        std::size_t from, std::size_t to) {
  const std::size_t c = target.dim(2);
  for (std::size_t j = from; j < to; ++j) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      target[order[j] * c + ch] = source[order[j] * c + ch];
    }
  }
}

// One side of a pair moving from `start` towards `finish` pixel by pixel.
struct Track {
  Tensor current;
  Tensor finish;
  std::vector<std::size_t> order;

  void advance(std::size_t from, std::size_t to) {
    copy_pixels(current, finish, order, from, to);
  }
};

inline Tensor filled_like(const Tensor& image, const std::vector<double>& fill) {
  Tensor out(image.shape());
  const std::size_t c = image.dim(2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fill[i % c];
  return out;
}

inline EvalCurve run_curve(const ModelParams& params, Track a,
                           std::optional<Track> b, const Embedding& fixed_b,
                           std::size_t steps) {
  const std::size_t pixels = a.order.size();
  EvalCurve curve;
  std::size_t done = 0;
  for (std::size_t i = 0; i <= steps; ++i) {
    const std::size_t target = pixels_at_step(i, steps, pixels);
    a.advance(done, target);
    if (b) b->advance(done, target);
    done = target;
    const Embedding ea = embed(params, a.current);
    const Embedding eb = b ? embed(params, b->current) : fixed_b;
    curve.fractions.push_back(static_cast<double>(i) /
                              static_cast<double>(steps));
    curve.scores.push_back(curve_score(ea, eb));
  }
  curve.auc = trapezoid(curve.fractions, curve.scores);
  return curve;
}

}  // namespace detail

/// Deletion: top-ranked pixels of A are replaced with the fill value. When
/// `map_b` is given, image B is perturbed the same way with its own map.
inline EvalCurve deletion_curve(const ModelParams& params, const Tensor& ia,
                                const Tensor& ib, const SaliencyMap& map_a,
                                std::size_t steps,
                                const FillRule& fill = FillRule::mean(),
                                const SaliencyMap* map_b = nullptr) {
  detail::check_steps(steps);
  detail::check_map_extent(map_a, ia);
  detail::Track a{ia, detail::filled_like(ia, fill.values_for(ia)),
                  rank_pixels(map_a)};
  std::optional<detail::Track> b;
  if (map_b) {
    detail::check_map_extent(*map_b, ib);
    b = detail::Track{ib, detail::filled_like(ib, fill.values_for(ib)),
                      rank_pixels(*map_b)};
  }
  return detail::run_curve(params, std::move(a), std::move(b),
                           embed(params, ib), steps);
}

/// Insertion: starts from a blurred copy of A and restores original pixels
/// in descending saliency order.
inline EvalCurve insertion_curve(const ModelParams& params, const Tensor& ia,
                                 const Tensor& ib, const SaliencyMap& map_a,
                                 std::size_t steps,
                                 std::size_t blur_kernel = 11,
                                 double blur_sigma = 5.0,
                                 const SaliencyMap* map_b = nullptr) {
  detail::check_steps(steps);
  detail::check_map_extent(map_a, ia);
  detail::Track a{blur_image(ia, blur_kernel, blur_sigma), ia,
                  rank_pixels(map_a)};
  std::optional<detail::Track> b;
  if (map_b) {
    detail::check_map_extent(*map_b, ib);
    b = detail::Track{blur_image(ib, blur_kernel, blur_sigma), ib,
                      rank_pixels(*map_b)};
  }
  return detail::run_curve(params, std::move(a), std::move(b),
                           embed(params, ib), steps);
}

// ---------------------------------------------------------------------------
// Dataset evaluation

enum class PairLabel { kGenuine, kImposter };

inline const char* label_name(PairLabel label) {
  return label == PairLabel::kGenuine ? "genuine" : "imposter";
}

struct EvalPair {
  std::string id;
  Tensor image_a;
  Tensor image_b;
  PairLabel label = PairLabel::kGenuine;
};

enum class Explainer { kFggb, kScoreBackprop, kMasked };

inline const char* explainer_name(Explainer e) {
  switch (e) {
    case Explainer::kFggb: return "fggb";
    case Explainer::kScoreBackprop: return "scorebp";
    case Explainer::kMasked: return "masked";
  }
  return "unknown";
}

inline Explainer parse_explainer(const std::string& id) {
  if (id == "fggb") return Explainer::kFggb;
  if (id == "scorebp") return Explainer::kScoreBackprop;
  if (id == "masked") return Explainer::kMasked;
  throw ConfigError("unknown explainer '" + id +
                    "'; valid ids are fggb, scorebp, masked");
}

struct EvalConfig {
  double threshold = 0.5;
  std::size_t steps = 20;
  std::size_t blur_kernel = 11;  // applied to saliency maps before ranking
  double blur_sigma = 2.0;
  std::size_t insertion_kernel = 11;  // insertion start image
  double insertion_sigma = 5.0;
  FillRule fill = FillRule::mean();
  bool perturb_both = false;
  std::size_t mask_count = 64;
  double mask_probability = 0.5;
  std::uint64_t mask_seed = 0;
  std::uint32_t mask_cell = 1;
  std::size_t threads = 1;
};

struct PairResult {
  std::string pair_id;
  PairLabel label = PairLabel::kGenuine;
  Explainer explainer = Explainer::kFggb;
  EvalCurve deletion;
  EvalCurve insertion;
  double deletion_acc = 0.0;   // percent
  double insertion_acc = 0.0;  // percent
};

struct EvalReport {
  std::vector<PairResult> rows;
  double mean_deletion_acc = 0.0;
  double mean_insertion_acc = 0.0;
};

/// Maps used for ranking: S+ on genuine pairs, |S-| on imposter pairs.
inline PairMaps ranking_maps(const ModelParams& params, const EvalPair& pair,
                             Explainer explainer, const EvalConfig& cfg) {
  const bool genuine = pair.label == PairLabel::kGenuine;
  auto pick = [&](const SplitMaps& m) {
    return genuine ? m.plus : magnitude(m.minus);
  };
  switch (explainer) {
    case Explainer::kFggb: {
      const ExplanationSet e = explain_pair(params, pair.image_a, pair.image_b,
                                            cfg.threshold, cfg.threads);
      return genuine ? PairMaps{e.sim_a, e.sim_b}
                     : PairMaps{magnitude(e.dissim_a), magnitude(e.dissim_b)};
    }
    case Explainer::kScoreBackprop: {
      const PairMaps s = score_backprop(params, pair.image_a, pair.image_b);
      return {pick(split(s.a)), pick(split(s.b))};
    }
    case Explainer::kMasked: {
      const MaskSet masks =
          generate_masks(pair.image_a.dim(0), pair.image_a.dim(1),
                         cfg.mask_count, cfg.mask_probability, cfg.mask_seed,
                         cfg.mask_cell);
      const SplitMaps a = masked_saliency(params, pair.image_a, pair.image_b,
                                          masks, cfg.threads);
      if (!cfg.perturb_both) return {pick(a), SaliencyMap()};
      const SplitMaps b = masked_saliency(params, pair.image_b, pair.image_a,
                                          masks, cfg.threads);
      return {pick(a), pick(b)};
    }
  }
  throw ConfigError("unknown explainer");
}

/// Percentage of the curve (trapezoid over fractions) where the decision
/// at `threshold` is correct for the pair's label.
inline double decision_accuracy(const EvalCurve& curve, double threshold,
                                PairLabel label) {
  std::vector<double> correct(curve.scores.size());
  for (std::size_t i = 0; i < correct.size(); ++i) {
    const bool accept = curve.scores[i] >= threshold;
    correct[i] = accept == (label == PairLabel::kGenuine) ? 1.0 : 0.0;
  }
  return 100.0 * trapezoid(curve.fractions, correct);
}

inline PairResult evaluate_pair(const ModelParams& params, const EvalPair& pair,
                                Explainer explainer, const EvalConfig& cfg) {
  const PairMaps raw = ranking_maps(params, pair, explainer, cfg);
  const SaliencyMap map_a = gaussian_blur(raw.a, cfg.blur_kernel, cfg.blur_sigma);
  std::optional<SaliencyMap> map_b;
  if (cfg.perturb_both) {
    map_b = gaussian_blur(raw.b, cfg.blur_kernel, cfg.blur_sigma);
  }
  const SaliencyMap* pb = map_b ? &*map_b : nullptr;
  PairResult r;
  r.pair_id = pair.id;
  r.label = pair.label;
  r.explainer = explainer;
  r.deletion = deletion_curve(params, pair.image_a, pair.image_b, map_a,
                              cfg.steps, cfg.fill, pb);
  r.insertion = insertion_curve(params, pair.image_a, pair.image_b, map_a,
                                cfg.steps, cfg.insertion_kernel,
                                cfg.insertion_sigma, pb);
  r.deletion_acc = decision_accuracy(r.deletion, cfg.threshold, pair.label);
  r.insertion_acc = decision_accuracy(r.insertion, cfg.threshold, pair.label);
  return r;
}

inline EvalReport dataset_eval(const ModelParams& params,
                               const std::vector<EvalPair>& pairs,
                               const std::vector<Explainer>& explainers,
                               const EvalConfig& cfg) {
  if (pairs.empty()) throw ConfigError("dataset_eval: empty pair list");
  if (explainers.empty()) throw ConfigError("dataset_eval: no explainer given");
  if (!(cfg.threshold >= -1.0 && cfg.threshold <= 1.0)) {
    throw ConfigError("threshold must lie in [-1, 1]");
  }
  detail::check_steps(cfg.steps);
  gaussian_kernel(cfg.blur_kernel, cfg.blur_sigma);
  gaussian_kernel(cfg.insertion_kernel, cfg.insertion_sigma);

  EvalReport report;
  for (Explainer e : explainers) {
    for (const EvalPair& pair : pairs) {
      report.rows.push_back(evaluate_pair(params, pair, e, cfg));
    }
  }
  for (const PairResult& r : report.rows) {
    report.mean_deletion_acc += r.deletion_acc;
    report.mean_insertion_acc += r.insertion_acc;
  }
  report.mean_deletion_acc /= static_cast<double>(report.rows.size());
  report.mean_insertion_acc /= static_cast<double>(report.rows.size());
  return report;
}

inline EvalReport dataset_eval(const ModelParams& params,
                               const std::vector<EvalPair>& pairs,
                               Explainer explainer, const EvalConfig& cfg) {
  return dataset_eval(params, pairs, std::vector<Explainer>{explainer}, cfg);
}

inline constexpr const char* kMetricsHeader =
    "pair_id,label,explainer,deletion_auc,insertion_auc,deletion_acc,"
    "insertion_acc";

inline std::string metrics_csv(const EvalReport& report) {
  std::string out = kMetricsHeader;
  out += '\n';
  char buf[160];
  for (const PairResult& r : report.rows) {
    std::snprintf(buf, sizeof buf, ",%s,%s,%.12f,%.12f,%.6f,%.6f\n",
                  label_name(r.label), explainer_name(r.explainer),
                  r.deletion.auc, r.insertion.auc, r.deletion_acc,
                  r.insertion_acc);
    out += r.pair_id;
    out += buf;
  }
  return out;
}

}  // namespace fggb
