#pragma once

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "fggb/embedder.hpp"
#include "fggb/error.hpp"
#include "fggb/eval.hpp"

namespace fggb {

/// Run configuration. Loaded from a flat `key = value` file; CLI flags
/// override individual keys.
struct Config {
  std::string model = "conv";  // conv | linear | blockpool
  std::string model_file;      // serialized model, overrides `model`
  std::uint32_t embedding_dim = 32;
  std::uint32_t block_size = 4;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  std::size_t blur_kernel = 11;
  double blur_sigma = 2.0;
  std::size_t insertion_kernel = 11;
  double insertion_sigma = 5.0;
  std::size_t steps = 20;
  std::string fill = "mean";  // mean | zero
  bool perturb_both = false;
  std::size_t mask_count = 64;
  double mask_probability = 0.5;
  std::uint64_t mask_seed = 0;
  std::uint32_t mask_cell = 1;
  std::string explainer = "fggb";
  std::string out_dir = ".";
  std::size_t threads = 1;
  double heatmap_alpha = 1.0;
  bool shared_scale = false;

  void validate() const {
    if (!(threshold >= -1.0 && threshold <= 1.0)) {
      throw ConfigError("threshold must lie in [-1, 1]");
    }
    if (blur_kernel == 0 || blur_kernel % 2 == 0 || insertion_kernel == 0 ||
        insertion_kernel % 2 == 0) {
      throw ConfigError("blur kernel sizes must be odd and positive");
    }
    if (!(blur_sigma > 0.0) || !(insertion_sigma > 0.0)) {
      throw ConfigError("blur sigmas must be > 0");
    }
    if (steps < 2) throw ConfigError("steps must be at least 2");
    if (embedding_dim < 2) throw ConfigError("embedding_dim must be at least 2");
    if (block_size == 0 || mask_cell == 0 || threads == 0) {
      throw ConfigError("block_size, mask_cell and threads must be positive");
    }
    if (mask_count < 2) throw ConfigError("mask_count must be at least 2");
    if (!(mask_probability >= 0.0 && mask_probability <= 1.0)) {
      throw ConfigError("mask_prob must lie in [0, 1]");
    }
    if (!(heatmap_alpha >= 0.0 && heatmap_alpha <= 1.0)) {
      throw ConfigError("heatmap_alpha must lie in [0, 1]");
    }
    if (fill != "mean" && fill != "zero") {
      throw ConfigError("fill must be 'mean' or 'zero'");
    }
    if (model_file.empty() && model != "conv" && model != "linear" &&
        model != "blockpool") {
      throw ConfigError("unknown model '" + model +
                        "'; valid models are conv, linear, blockpool");
    }
  }

  EvalConfig eval_config() const {
    EvalConfig c;
    c.threshold = threshold;
    c.steps = steps;
    c.blur_kernel = blur_kernel;
    c.blur_sigma = blur_sigma;
    c.insertion_kernel = insertion_kernel;
    c.insertion_sigma = insertion_sigma;
    c.fill = fill == "zero" ? FillRule::zero() : FillRule::mean();
    c.perturb_both = perturb_both;
    c.mask_count = mask_count;
    c.mask_probability = mask_probability;
    c.mask_seed = mask_seed;
    c.mask_cell = mask_cell;
    c.threads = threads;
    return c;
  }

  /// Model for images of shape h x w x c.
  ModelParams build_model(std::size_t h, std::size_t w, std::size_t c) const {
    if (!model_file.empty()) return load_model(model_file);
    if (model == "blockpool") return block_pool_model(h, w, c, block_size);
    if (model == "linear") {
      return init_model(linear_embedder_spec(h, w, c, embedding_dim), seed);
    }
    return init_model(conv_embedder_spec(h, w, c, embedding_dim), seed);
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (!in || !(in >> std::ws).eof()) {
    throw ConfigError(where + ": cannot parse '" + text + "' as a number");
  }
  return v;
}

inline bool parse_bool(const std::string& text, const std::string& where) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(where + ": expected true/false, got '" + text + "'");
}

}  // namespace detail

/// Applies one key to the config; throws ConfigError for unknown keys.
inline void set_config_key(Config& cfg, const std::string& key,
                           const std::string& value, const std::string& where) {
  using detail::parse_number;
  if (key == "model") cfg.model = value;
  else if (key == "model_file") cfg.model_file = value;
  else if (key == "embedding_dim") cfg.embedding_dim = parse_number<std::uint32_t>(value, where);
  else if (key == "block_size") cfg.block_size = parse_number<std::uint32_t>(value, where);
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(value, where);
  else if (key == "threshold") cfg.threshold = parse_number<double>(value, where);
  else if (key == "blur_kernel") cfg.blur_kernel = parse_number<std::size_t>(value, where);
  else if (key == "blur_sigma") cfg.blur_sigma = parse_number<double>(value, where);
  else if (key == "insertion_kernel") cfg.insertion_kernel = parse_number<std::size_t>(value, where);
  else if (key == "insertion_sigma") cfg.insertion_sigma = parse_number<double>(value, where);
  else if (key == "steps") cfg.steps = parse_number<std::size_t>(value, where);
  else if (key == "fill") cfg.fill = value;
  else if (key == "perturb_both") cfg.perturb_both = detail::parse_bool(value, where);
  else if (key == "mask_count") cfg.mask_count = parse_number<std::size_t>(value, where);
  else if (key == "mask_prob") cfg.mask_probability = parse_number<double>(value, where);
  else if (key == "mask_seed") cfg.mask_seed = parse_number<std::uint64_t>(value, where);
  else if (key == "mask_cell") cfg.mask_cell = parse_number<std::uint32_t>(value, where);
  else if (key == "explainer") cfg.explainer = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "threads") cfg.threads = parse_number<std::size_t>(value, where);
  else if (key == "heatmap_alpha") cfg.heatmap_alpha = parse_number<double>(value, where);
  else if (key == "shared_scale") cfg.shared_scale = detail::parse_bool(value, where);
  else throw ConfigError(where + ": unknown key '" + key + "'");
}

inline Config parse_config(const std::string& text, Config cfg = {}) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string where = "config line " + std::to_string(lineno);
    line = detail::trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + ": expected 'key = value'");
    }
    set_config_key(cfg, detail::trim(line.substr(0, eq)),
                   detail::trim(line.substr(eq + 1)), where);
  }
  return cfg;
}

inline Config load_config(const std::string& path, Config cfg = {}) {
  return parse_config(detail::read_file(path), std::move(cfg));
}

// ---------------------------------------------------------------------------
// Pair lists: `pathA pathB genuine|imposter` per line, '#' comments.

struct PairRecord {
  std::string path_a;
  std::string path_b;
  PairLabel label = PairLabel::kGenuine;
};

/// Relative paths are resolved against `base_dir`.
inline std::vector<PairRecord> parse_pair_list(const std::string& text,
                                               const std::string& base_dir = "") {
  std::vector<PairRecord> out;
  std::istringstream in(text);
  std::string line;
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    if (path.is_absolute() || base_dir.empty()) return p;
    return (std::filesystem::path(base_dir) / path).string();
  };
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string body = detail::trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    std::istringstream fields(body);
    std::string a, b, label, extra;
    fields >> a >> b >> label;
    if (label.empty() || (fields >> extra)) {
      throw ParseError("pair list line " + std::to_string(lineno) +
                       ": expected 'pathA pathB genuine|imposter'");
    }
    PairRecord rec{resolve(a), resolve(b), PairLabel::kGenuine};
    if (label == "imposter") {
      rec.label = PairLabel::kImposter;
    } else if (label != "genuine") {
      throw ParseError("pair list line " + std::to_string(lineno) +
                       ": label must be genuine or imposter, got '" + label +
                       "'");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<PairRecord> load_pair_list(const std::string& path) {
  return parse_pair_list(detail::read_file(path),
                         std::filesystem::path(path).parent_path().string());
}

}  // namespace fggb
