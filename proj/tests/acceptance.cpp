// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
// failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fggb/cli.hpp"
#include "oracle.hpp"

namespace fs = std::filesystem;
using namespace fggb;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) { return detail::format_double(f, v); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fggb_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = run_cli(args, o, e);
  if (out) *out = o.str();
  if (code != 0) std::fprintf(stderr, "%s", e.str().c_str());
  return code;
}

Embedding random_embedding(Rng& rng, std::size_t n) {
  Embedding e;
  for (std::size_t i = 0; i < n; ++i) e.values.push_back(rng.normal());
  return e;
}

// 1. backward_channel against central differences of an independent forward.
Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModelParams params = init_model(conv_embedder_spec(16, 16, 1, 8), seed);
    const Tensor image = oracle::random_image(16, 16, 1, 1000 + seed);
    const Trace trace = forward(params, image).trace;
    for (std::size_t k = 0; k < 8; ++k) {
      const Tensor g = backward_channel(trace, k);
      const Tensor fd = oracle::numeric_channel_gradient(params, image, k, 1e-5);
      for (std::size_t i = 0; i < g.size(); ++i) {
        worst = std::max(worst, oracle::rel_err(g[i], fd[i]));
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30.0,
          "max rel err " + fmt("%.3e", worst) + ", " + fmt("%.2f", secs) + " s"};
}

// 2. Channel weights sum to the cosine score.
Outcome weight_sum_identity() {
  Rng rng(2);
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const Embedding a = random_embedding(rng, 128), b = random_embedding(rng, 128);
    const WeightVector w = channel_weights(a, b);
    double sum = 0.0;
    for (double v : w.values) sum += v;
    worst = std::max(worst, std::abs(sum - oracle::cosine(a.values, b.values)));
  }
  return {worst < 1e-9, "max |sum w - cos| " + fmt("%.3e", worst) + " over 1000 pairs"};
}

// 3. Normalised maps have unit norm, zeros stay zero, scale is ignored.
Outcome normalization_invariants() {
  Rng rng(3);
  double norm_err = 0.0, scale_err = 0.0;
  bool zeros_ok = true;
  for (int rep = 0; rep < 200; ++rep) {
    GradientStack g, scaled;
    for (int k = 0; k < 8; ++k) {
      Tensor m = Tensor::image(6, 5, 3);
      if (k != 3) {
        for (double& v : m.data()) v = rng.normal() * std::pow(10.0, rng.uniform(-6, 6));
      }
      Tensor s = m;
      const double c = std::pow(10.0, rng.uniform(-8, 8));
      for (double& v : s.data()) v *= c;
      g.maps.push_back(std::move(m));
      scaled.maps.push_back(std::move(s));
    }
    const NormalizedStack n = normalize_stack(g), ns = normalize_stack(scaled);
    for (std::size_t k = 0; k < n.size(); ++k) {
      const double norm = n.maps[k].frobenius_norm();
      if (g.maps[k].frobenius_norm() == 0.0) {
        for (double v : n.maps[k].data()) zeros_ok = zeros_ok && v == 0.0;
      } else {
        norm_err = std::max(norm_err, std::abs(norm - 1.0));
      }
      for (std::size_t i = 0; i < n.maps[k].size(); ++i) {
        scale_err = std::max(scale_err, std::abs(n.maps[k][i] - ns.maps[k][i]));
      }
    }
  }
  return {norm_err < 1e-9 && scale_err < 1e-12 && zeros_ok,
          "norm err " + fmt("%.3e", norm_err) + ", rescale err " + fmt("%.3e", scale_err) +
              (zeros_ok ? ", zero maps stay zero" : ", zero map changed")};
}

// 4. S+ + S- reconstructs S exactly with disjoint supports.
Outcome decomposition_identity() {
  Rng rng(4);
  std::size_t bad = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    SaliencyMap s(9, 7);
    for (double& v : s.values()) {
      const double u = rng.uniform();
      v = u < 0.15 ? 0.0 : rng.normal() * std::pow(10.0, rng.uniform(-10, 3));
    }
    const SplitMaps parts = split(s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const bool ok = parts.plus[i] + parts.minus[i] == s[i] &&
                      (parts.plus[i] == 0.0 || parts.minus[i] == 0.0) &&
                      parts.plus[i] >= 0.0 && parts.minus[i] <= 0.0 &&
                      (s[i] != 0.0 || parts.minus[i] == 0.0);
      if (!ok) ++bad;
    }
  }
  return {bad == 0, std::to_string(bad) + " violating entries in 1000 maps"};
}

// 5. Same-signed coefficients leave the opposite part empty.
Outcome sign_lemma() {
  Rng rng(5);
  std::size_t cases = 0, bad = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 4 + rep % 5;
    NormalizedStack stack;
    for (std::size_t k = 0; k < n; ++k) {
      Tensor m = Tensor::image(5, 5, 2);
      for (double& v : m.data()) v = std::abs(rng.normal());
      stack.maps.push_back(m);
    }
    const double t = rng.uniform(-0.9, 0.9);
    const bool positive = rep % 2 == 0;
    WeightVector w;
    for (std::size_t k = 0; k < n; ++k) {
      const double off = rng.uniform(0.0, 0.5);
      w.values.push_back(t / static_cast<double>(n) + (positive ? off : -off));
    }
    const SplitMaps parts = split(aggregate(stack, w, t));
    const SaliencyMap& opposite = positive ? parts.minus : parts.plus;
    for (double v : opposite.values()) bad += v != 0.0;
    ++cases;
  }
  // Identical images at threshold 0: every coefficient is fa_k^2 / |fa|^2.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModelParams params = init_model(conv_embedder_spec(12, 12, 3, 16), seed);
    const Tensor image = oracle::random_image(12, 12, 3, 50 + seed);
    const ExplanationSet e = explain_pair(params, image, image, 0.0);
    for (double v : e.dissim_a.values()) bad += v != 0.0;
    for (double v : e.dissim_b.values()) bad += v != 0.0;
    ++cases;
  }
  return {bad == 0, std::to_string(cases) + " instances, " + std::to_string(bad) +
                        " nonzero opposite-sign entries"};
}

// 6. Block-pool embedder localises the shared block.
Outcome localization() {
  const ModelParams params = block_pool_model(16, 16, 1, 4);
  double worst_ratio = 1e300, worst_err = 0.0;
  for (std::size_t keep = 0; keep < 16; ++keep) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const oracle::ImagePair pair = oracle::localization_pair(keep, 100 * keep + seed);
      const ExplanationSet e = explain_pair(params, pair.a, pair.b, 0.0);
      // Each gradient map is the block indicator over 16, so S on block k is
      // w_k / 4 with w_k = a_k b_k / (|a| |b|) on block means.
      const auto fa = oracle::reference_forward(params, pair.a);
      const auto fb = oracle::reference_forward(params, pair.b);
      double na = 0, nb = 0;
      for (std::size_t k = 0; k < 16; ++k) {
        na += fa[k] * fa[k];
        nb += fb[k] * fb[k];
      }
      double inside = 0.0, outside = 0.0;
      for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
          const std::size_t k = (y / 4) * 4 + x / 4;
          const double analytic = fa[k] * fb[k] / std::sqrt(na * nb) / 4.0;
          worst_err = std::max(worst_err, std::abs(e.sim_a.at(y, x) - analytic));
          (k == keep ? inside : outside) += e.sim_a.at(y, x);
        }
      worst_ratio = std::min(worst_ratio, (inside / 16.0) / (outside / 240.0));
    }
  }
  return {worst_ratio >= 1.5 && worst_err < 1e-12,
          "min inside/outside ratio " + fmt("%.3f", worst_ratio) +
              ", max deviation from analytic " + fmt("%.3e", worst_err)};
}

// 7. Curves equal brute-force enumeration; unperturbed endpoints are exact.
Outcome curve_exactness() {
  std::size_t checked = 0, bad = 0;
  for (std::size_t side : {2u, 4u}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const std::size_t c = seed % 2 == 0 ? 1 : 3;
      const ModelParams params = init_model(linear_embedder_spec(side, side, c, 4), seed);
      const Tensor a = oracle::random_image(side, side, c, 10 + seed);
      const Tensor b = oracle::random_image(side, side, c, 20 + seed);
      SaliencyMap s(side, side);
      Rng rng(30 + seed);
      for (double& v : s.values()) v = std::round(rng.uniform(0, 4));  // forces ties
      for (std::size_t steps : {side * side, std::size_t{3}}) {
        const EvalCurve del = deletion_curve(params, a, b, s, steps);
        const EvalCurve ins = insertion_curve(params, a, b, s, steps);
        const double score = verify(embed(params, a), embed(params, b), 0.5).score;
        bad += del.scores != oracle::enumerate_curve(params, a, oracle::mean_filled(a),
                                                     b, s, steps);
        bad += ins.scores != oracle::enumerate_curve(params, blur_image(a, 11, 5.0), a,
                                                     b, s, steps);
        bad += del.scores.front() != score;
        bad += ins.scores.back() != score;
        checked += 4;
      }
    }
  }
  return {bad == 0, std::to_string(checked - bad) + "/" + std::to_string(checked) +
                        " curve checks bit-exact"};
}

// 8. Score backprop is the cosine-weighted sum of channel gradients.
Outcome baseline_consistency() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ModelParams params = init_model(conv_embedder_spec(16, 16, 3, 12), seed);
    const Tensor a = oracle::random_image(16, 16, 3, 60 + seed);
    const Tensor b = oracle::random_image(16, 16, 3, 70 + seed);
    const ScoreGradients g = score_gradients(params, a, b);
    const GradientStack stack = gradient_stack(params, a);
    const auto fa = oracle::reference_forward(params, a);
    const auto fb = oracle::reference_forward(params, b);
    double aa = 0, bb = 0, ab = 0;
    for (std::size_t k = 0; k < fa.size(); ++k) {
      aa += fa[k] * fa[k];
      bb += fb[k] * fb[k];
      ab += fa[k] * fb[k];
    }
    const double cos = ab / std::sqrt(aa * bb);
    for (std::size_t i = 0; i < a.size(); ++i) {
      double combo = 0.0;
      for (std::size_t k = 0; k < fa.size(); ++k) {
        const double dk = fb[k] / std::sqrt(aa * bb) - cos * fa[k] / aa;
        combo += dk * stack.maps[k][i];
      }
      worst = std::max(worst, std::abs(g.grad_a[i] - combo));
    }
  }
  return {worst < 1e-9, "max deviation " + fmt("%.3e", worst)};
}

bool same_files(const fs::path& x, const fs::path& y, const std::vector<std::string>& names) {
  for (const std::string& n : names) {
    if (detail::read_file((x / n).string()) != detail::read_file((y / n).string())) return false;
  }
  return true;
}

// 9. 64x64x3 explain with N = 128: fast, reproducible, thread independent.
Outcome determinism_and_speed() {
  const fs::path dir = fresh_dir("explain");
  save_image(oracle::random_image(64, 64, 3, 90), (dir / "a.ppm").string());
  save_image(oracle::random_image(64, 64, 3, 91), (dir / "b.ppm").string());
  auto explain = [&](const std::string& out, const std::string& threads, double* secs) {
    const auto t0 = std::chrono::steady_clock::now();
    const int code = cli({"--seed", "1", "--embedding-dim", "128", "--threads", threads,
                          "--out-dir", (dir / out).string(), "explain",
                          (dir / "a.ppm").string(), (dir / "b.ppm").string()});
    if (secs) *secs = seconds_since(t0);
    return code;
  };
  double t1 = 0, t2 = 0;
  if (explain("run1", "1", &t1) || explain("run2", "1", &t2) || explain("run4", "4", nullptr)) {
    return {false, "explain exited with an error"};
  }
  const std::vector<std::string> files{"simA.sal", "dissimA.sal", "simB.sal", "dissimB.sal",
                                       "simA.ppm", "dissimA.ppm", "simB.ppm", "dissimB.ppm"};
  const bool repeat = same_files(dir / "run1", dir / "run2", files);
  const bool threads = same_files(dir / "run1", dir / "run4", files);
  fs::remove_all(dir);
  const double worst = std::max(t1, t2);
  return {repeat && threads && worst < 10.0,
          "single-thread " + fmt("%.2f", worst) + " s, reruns " +
              (repeat ? "identical" : "differ") + ", 4 threads " +
              (threads ? "identical" : "differ")};
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream in(line);
  std::string f;
  while (std::getline(in, f, ',')) out.push_back(f);
  return out;
}

// 10. Full eval over 20 synthetic block-pool pairs with every explainer.
Outcome metric_pipeline() {
  const fs::path dir = fresh_dir("eval");
  std::ofstream list(dir / "pairs.txt");
  std::vector<bool> genuine;
  for (std::size_t i = 0; i < 20; ++i) {
    const oracle::ImagePair p = oracle::localization_pair(i % 16, 500 + i);
    const std::string a = "a" + std::to_string(i) + ".pgm", b = "b" + std::to_string(i) + ".pgm";
    save_image(p.a, (dir / a).string());
    if (i < 10) {
      save_image(p.b, (dir / b).string());  // shares block i, opposite elsewhere
    } else {
      save_image(oracle::localization_pair((i + 7) % 16, 900 + i).a, (dir / b).string());
    }
    list << a << " " << b << (i < 10 ? " genuine\n" : " imposter\n");
    genuine.push_back(i < 10);
  }
  list.close();
  const std::string out_dir = (dir / "out").string();
  if (cli({"--model", "blockpool", "--explainer", "all", "--out-dir", out_dir, "eval",
           "--pairs", (dir / "pairs.txt").string()})) {
    return {false, "eval exited with an error"};
  }

  std::istringstream csv(detail::read_file(out_dir + "/metrics.csv"));
  std::string line;
  std::getline(csv, line);
  bool ok = line == "pair_id,label,explainer,deletion_auc,insertion_auc,deletion_acc,insertion_acc";
  std::size_t rows = 0;
  double lo = 1e300, hi = -1e300;
  std::vector<double> fggb_del(20, -1.0);
  while (std::getline(csv, line)) {
    const auto f = split_csv(line);
    if (f.size() != 7) {
      ok = false;
      continue;
    }
    ++rows;
    for (int c : {3, 4}) {
      const double v = std::stod(f[c]);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (int c : {5, 6}) {
      const double v = std::stod(f[c]);
      ok = ok && v >= 0.0 && v <= 100.0;
    }
    if (f[2] == "fggb") fggb_del[std::stoul(f[0].substr(4))] = std::stod(f[3]);
  }
  ok = ok && rows == 60 && lo >= 0.0 && hi <= 1.0;

  // Reversed-ranking control on the genuine block-pool pairs: both orderings
  // are evaluated in full.
  const ModelParams params = block_pool_model(16, 16, 1, 4);
  const EvalConfig cfg;
  std::size_t wins = 0, compared = 0;
  double worst_gap = 1e300;
  for (std::size_t i = 0; i < 20; ++i) {
    if (!genuine[i]) continue;
    const Tensor a = load_image((dir / ("a" + std::to_string(i) + ".pgm")).string());
    const Tensor b = load_image((dir / ("b" + std::to_string(i) + ".pgm")).string());
    const ExplanationSet e = explain_pair(params, a, b, cfg.threshold);
    const SaliencyMap rank = gaussian_blur(e.sim_a, cfg.blur_kernel, cfg.blur_sigma);
    const double ours = deletion_curve(params, a, b, rank, cfg.steps).auc;
    const double reversed = deletion_curve(params, a, b, negated(rank), cfg.steps).auc;
    ok = ok && std::abs(ours - fggb_del[i]) < 1e-11;
    wins += ours <= reversed;
    ++compared;
    worst_gap = std::min(worst_gap, reversed - ours);
  }
  fs::remove_all(dir);
  ok = ok && wins == compared;
  return {ok, std::to_string(rows) + " rows, AUC range [" + fmt("%.4f", lo) + ", " +
                  fmt("%.4f", hi) + "], fggb <= reversed on " + std::to_string(wins) +
                  "/" + std::to_string(compared) + " pairs (min margin " +
                  fmt("%.4f", worst_gap) + ")"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"weight-sum identity", weight_sum_identity},
      {"normalization invariants", normalization_invariants},
      {"decomposition identity", decomposition_identity},
      {"sign lemma", sign_lemma},
      {"localization oracle", localization},
      {"deletion/insertion exactness", curve_exactness},
      {"baseline consistency", baseline_consistency},
      {"determinism and performance", determinism_and_speed},
      {"end-to-end metric pipeline", metric_pipeline},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
