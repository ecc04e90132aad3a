#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fggb/baselines.hpp"
#include "fggb/config.hpp"
#include "fggb/embedder.hpp"
#include "fggb/eval.hpp"
#include "fggb/fggb.hpp"
#include "fggb/io.hpp"
#include "fggb/random.hpp"

namespace fggb {

namespace detail {

inline std::string format_double(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline std::vector<Explainer> parse_explainer_list(const std::string& text) {
  if (text == "all") {
    return {Explainer::kFggb, Explainer::kScoreBackprop, Explainer::kMasked};
  }
  std::vector<Explainer> out;
  std::stringstream in(text);
  std::string id;
  while (std::getline(in, id, ',')) out.push_back(parse_explainer(trim(id)));
  if (out.empty()) throw ConfigError("no explainer given");
  return out;
}

struct CliOverrides {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> blur_kernel;
  std::optional<double> blur_sigma;
  std::optional<std::string> explainer;
  std::optional<std::size_t> threads;
  std::optional<std::string> model;
  std::optional<std::string> model_file;
  std::optional<std::uint32_t> embedding_dim;

  Config resolve() const {
    Config cfg = config_path ? load_config(*config_path) : Config{};
    if (seed) cfg.seed = *seed;
    if (threshold) cfg.threshold = *threshold;
    if (out_dir) cfg.out_dir = *out_dir;
    if (steps) cfg.steps = *steps;
    if (blur_kernel) cfg.blur_kernel = *blur_kernel;
    if (blur_sigma) cfg.blur_sigma = *blur_sigma;
    if (explainer) cfg.explainer = *explainer;
    if (threads) cfg.threads = *threads;
    if (model) cfg.model = *model;
    if (model_file) cfg.model_file = *model_file;
    if (embedding_dim) cfg.embedding_dim = *embedding_dim;
    cfg.validate();
    return cfg;
  }
};

inline ModelParams model_for(const Config& cfg, const Tensor& image) {
  ModelParams params = cfg.build_model(image.dim(0), image.dim(1), image.dim(2));
  check_input(params, image);
  return params;
}

inline std::filesystem::path prepare_out_dir(const Config& cfg) {
  std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace detail

/// Entry point of the `fggb` tool. `args` excludes the program name.
/// Returns 0 on success, 2 for usage errors, 1 for runtime failures.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out,
                   std::ostream& err) {
  CLI::App app{"Feature-guided gradient saliency for embedding verification",
               "fggb"};
  app.require_subcommand(1);
  detail::CliOverrides ov;
  app.add_option("--config", ov.config_path, "key = value config file");
  app.add_option("--seed", ov.seed, "model initialisation seed");
  app.add_option("--threshold", ov.threshold, "verification threshold");
  app.add_option("--out-dir", ov.out_dir, "directory for output files");
  app.add_option("--steps", ov.steps, "deletion/insertion steps");
  app.add_option("--blur-kernel", ov.blur_kernel, "saliency blur kernel size");
  app.add_option("--blur-sigma", ov.blur_sigma, "saliency blur sigma");
  app.add_option("--explainer", ov.explainer,
                 "fggb | scorebp | masked (eval also accepts a list or 'all')");
  app.add_option("--threads", ov.threads, "worker threads");
  app.add_option("--model", ov.model, "conv | linear | blockpool");
  app.add_option("--model-file", ov.model_file, "serialized model file");
  app.add_option("--embedding-dim", ov.embedding_dim, "embedding size N");

  auto* embed_cmd = app.add_subcommand("embed", "print the embedding of an image");
  std::string embed_image, save_model_path;
  embed_cmd->add_option("image", embed_image)->required();
  embed_cmd->add_option("--save-model", save_model_path,
                        "also write the model to this file");

  auto* explain_cmd =
      app.add_subcommand("explain", "similarity/dissimilarity maps for a pair");
  std::string image_a, image_b, format = "ppm";
  double alpha = 1.0;
  bool shared_scale = false;
  explain_cmd->add_option("image_a", image_a)->required();
  explain_cmd->add_option("image_b", image_b)->required();
  explain_cmd->add_option("--format", format, "heatmap format: ppm | png")
      ->check(CLI::IsMember({"ppm", "png"}));
  explain_cmd->add_option("--alpha", alpha, "heatmap overlay alpha")
      ->check(CLI::Range(0.0, 1.0));
  explain_cmd->add_flag("--shared-scale", shared_scale,
                        "one colour scale for all four heatmaps");

  auto* eval_cmd = app.add_subcommand("eval", "deletion/insertion metrics");
  std::string pairs_path;
  eval_cmd->add_option("--pairs", pairs_path, "pair list file")->required();

  auto* render_cmd = app.add_subcommand("render", "saliency file to heatmap");
  std::string sal_path, render_out, base_path;
  double render_alpha = 1.0;
  render_cmd->add_option("saliency", sal_path)->required();
  render_cmd->add_option("-o,--output", render_out)->required();
  render_cmd->add_option("--base", base_path, "image to overlay");
  render_cmd->add_option("--alpha", render_alpha)->check(CLI::Range(0.0, 1.0));

  auto* gc_cmd = app.add_subcommand("gradcheck",
                                    "compare gradients with finite differences");
  std::string gc_image;
  double gc_step = 1e-5;
  std::size_t gc_h = 16, gc_w = 16, gc_c = 1;
  gc_cmd->add_option("--image", gc_image, "image (random if omitted)");
  gc_cmd->add_option("--step", gc_step, "central difference step");
  gc_cmd->add_option("--height", gc_h);
  gc_cmd->add_option("--width", gc_w);
  gc_cmd->add_option("--channels", gc_c);

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    const Config cfg = ov.resolve();

    if (*embed_cmd) {
      const Tensor image = load_image(embed_image);
      const ModelParams params = detail::model_for(cfg, image);
      const Embedding e = embed(params, image);
      out << "N=" << e.size() << "\n";
      for (double v : e.values) out << detail::format_double("%.17g", v) << "\n";
      if (!save_model_path.empty()) save_model(params, save_model_path);
      return 0;
    }

    if (*explain_cmd) {
      const Tensor ia = load_image(image_a);
      const Tensor ib = load_image(image_b);
      const ModelParams params = detail::model_for(cfg, ia);
      const ExplanationSet ex =
          explain_pair(params, ia, ib, cfg.threshold, cfg.threads);
      const auto dir = detail::prepare_out_dir(cfg);
      struct Item {
        const char* name;
        const SaliencyMap* map;
        const Tensor* base;
      };
      const Item items[] = {{"simA", &ex.sim_a, &ia},
                            {"dissimA", &ex.dissim_a, &ia},
                            {"simB", &ex.sim_b, &ib},
                            {"dissimB", &ex.dissim_b, &ib}};
      std::optional<ValueRange> range;
      if (shared_scale || cfg.shared_scale) {
        range = value_range({&ex.sim_a, &ex.dissim_a, &ex.sim_b, &ex.dissim_b});
      }
      const double a = explain_cmd->count("--alpha") ? alpha : cfg.heatmap_alpha;
      for (const Item& it : items) {
        save_saliency(*it.map, (dir / (std::string(it.name) + ".sal")).string());
        const Image8 heat =
            render_heatmap(*it.map, a < 1.0 ? it.base : nullptr, a, range);
        write_image8(heat, (dir / (std::string(it.name) + "." + format)).string());
      }
      out << "verdict: " << (ex.verdict.accept ? "accept" : "reject")
          << " score=" << detail::format_double("%.6f", ex.verdict.score)
          << " threshold=" << detail::format_double("%.6f", ex.verdict.threshold)
          << "\n";
      return 0;
    }

    if (*eval_cmd) {
      const std::vector<PairRecord> records = load_pair_list(pairs_path);
      if (records.empty()) throw ConfigError("pair list is empty");
      std::vector<EvalPair> pairs;
      for (std::size_t i = 0; i < records.size(); ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "pair%03zu", i);
        pairs.push_back({id, load_image(records[i].path_a),
                         load_image(records[i].path_b), records[i].label});
      }
      const ModelParams params = detail::model_for(cfg, pairs.front().image_a);
      const std::vector<Explainer> explainers =
          detail::parse_explainer_list(cfg.explainer);
      const EvalReport report =
          dataset_eval(params, pairs, explainers, cfg.eval_config());
      const auto dir = detail::prepare_out_dir(cfg);
      detail::write_file((dir / "metrics.csv").string(), metrics_csv(report));
      for (Explainer e : explainers) {
        double del = 0.0, ins = 0.0, n = 0.0;
        for (const PairResult& r : report.rows) {
          if (r.explainer != e) continue;
          del += r.deletion_acc;
          ins += r.insertion_acc;
          n += 1.0;
        }
        out << explainer_name(e)
            << ": deletion=" << detail::format_double("%.2f", del / n)
            << "% insertion=" << detail::format_double("%.2f", ins / n) << "%\n";
      }
      out << "wrote " << (dir / "metrics.csv").string() << "\n";
      return 0;
    }

    if (*render_cmd) {
      const SaliencyMap s = load_saliency(sal_path);
      std::optional<Tensor> base;
      if (!base_path.empty()) base = load_image(base_path);
      write_image8(render_heatmap(s, base ? &*base : nullptr, render_alpha),
                   render_out);
      return 0;
    }

    if (*gc_cmd) {
      Tensor image;
      if (!gc_image.empty()) {
        image = load_image(gc_image);
      } else {
        image = Tensor::image(gc_h, gc_w, gc_c);
        Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
        for (double& v : image.data()) v = rng.uniform();
      }
      const ModelParams params = detail::model_for(cfg, image);
      out << "max relative error: "
          << detail::format_double("%.3e", grad_check(params, image, gc_step))
          << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace fggb
