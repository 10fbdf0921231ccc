// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
// The experiment criteria train on the shipped default task and take a while
// on a single core; set ACT_ACCEPTANCE_OUT to keep the run directories.

#include "oracles.hpp"

#include "act/harness.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

using namespace act;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(int id, bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- 1 ---------------------------------------------------------------------------

void gradient_oracle() {
  const auto t0 = Clock::now();
  int cases = 0, checked = 0, skipped = 0;
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 24; ++seed) {
    const int features = 2 + static_cast<int>(seed % 3) * 3;
    const int classes = 2 + static_cast<int>(seed % 4);
    const auto c = oracle::random_grad_case(seed, features, classes);
    const auto r = oracle::check_gradient(c.params, c.image, c.target, 1e-4);
    ++cases;
    checked += r.checked;
    skipped += r.skipped;
    worst = std::max(worst, r.max_rel_error);
  }
  const double elapsed = seconds_since(t0);
  verdict(1, worst < 1e-3 && elapsed < 30.0 && cases >= 20, "gradient oracle",
          fmt("%d cases, %d coordinates, %d skipped at ReLU kinks, max rel error %.2e < 1e-3, %.1f s < 30 s",
              cases, checked, skipped, worst, elapsed));
}

// --- 2 ---------------------------------------------------------------------------

void pseudo_label_oracle() {
  Rng rng(2024);
  int maps = 0, boundary = 0, mismatches = 0;
  for (; maps < 10000; ++maps) {
    const Real eps = maps % 2 == 0 ? 0.5 : std::uniform_real_distribution<Real>(0.05, 0.95)(rng);
    const ProbMap p = oracle::random_prob_map(rng, eps);
    const std::vector<ProbMap> preds{p};
    const std::vector<Image> images{Image::Zero(p.height, p.width)};
    const auto set = build_pseudo_set(preds, images, eps, SegmentorTag::phi);

    bool any = false;
    std::vector<oracle::PixelPseudo> ref;
    for (Index n = 0; n < p.pixels(); ++n) {
      ref.push_back(oracle::scan_pixel(p, n, eps));
      any = any || ref.back().selected;
      boundary += ref.back().confidence == eps;
    }
    if (set.size() != (any ? 1u : 0u)) {
      ++mismatches;
      continue;
    }
    if (!any) continue;
    const auto& pm = set.entries[0].pmap;
    for (Index n = 0; n < p.pixels(); ++n) {
      const auto& r = ref[static_cast<std::size_t>(n)];
      if (pm.labels[n] != r.label || pm.selected(n) != r.selected || pm.confidence(n) != r.confidence) {
        ++mismatches;
        break;
      }
    }
  }
  verdict(2, mismatches == 0 && boundary > 0, "pseudo-label oracle",
          fmt("%d maps up to 32x32, C <= 5, %d pixels exactly at epsilon, %d mismatches", maps, boundary,
              mismatches));
}

// --- 3 ---------------------------------------------------------------------------

void emd_schedule() {
  bool ok = true;
  std::string detail;
  for (const Real lambda0 : {1.0, 0.6, 2.5}) {
    ActConfig c;
    c.lambda0 = lambda0;
    c.total_iterations = 2000;
    const Real start = emd_lambda(0, c), end = emd_lambda(2000, c);
    const Real want_end = std::min(1.0, lambda0 * std::exp(-c.decay_k));
    ok = ok && start == std::min(lambda0, 1.0) && std::abs(end - want_end) < 1e-9;
    // strictly decreasing once the clamp no longer binds
    for (int i = 1; i <= 2000; ++i) {
      const Real prev = emd_lambda(i - 1, c), cur = emd_lambda(i, c);
      if (!(cur < prev) && !(prev == 1.0 && cur == 1.0)) ok = false;
    }
  }

  Rng rng(3);
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  int pairs = 0, bad = 0;
  for (; pairs < 1000; ++pairs) {
    const Index h = 1 + static_cast<Index>(rng() % 16), w = 1 + static_cast<Index>(rng() % 16);
    const int classes = 2 + static_cast<int>(rng() % 4);
    const Real lambda = pairs % 50 == 0 ? 1.0 : pairs % 50 == 1 ? 0.0 : u(rng);
    Image a(h, w), b(h, w);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = u(rng), b.data()[i] = u(rng);
    const LabelMask y = oracle::random_mask(rng, h, w, classes);
    PseudoLabelMap pm;
    pm.labels = oracle::random_mask(rng, h, w, classes);
    pm.confidence.setConstant(h * w, 0.9);
    pm.selected.resize(h * w);
    for (Index n = 0; n < h * w; ++n) pm.selected(n) = u(rng) < 0.5;
    const auto m = mixup_pair(a, y, b, pm, lambda);
    bool pair_ok = m.lambda_used == lambda;
    for (Index i = 0; i < a.size(); ++i) {
      const Real v = m.image.data()[i];
      pair_ok = pair_ok && std::abs(v - (lambda * a.data()[i] + (1 - lambda) * b.data()[i])) < 1e-12 &&
                v >= std::min(a.data()[i], b.data()[i]) - 1e-12 && v <= std::max(a.data()[i], b.data()[i]) + 1e-12;
    }
    for (Index n = 0; n < h * w; ++n) {
      const auto col = m.target.targets.col(n);
      Eigen::VectorXd want = Eigen::VectorXd::Zero(classes);
      if (pm.selected(n)) {
        want(y[n]) += lambda;
        want(pm.labels[n]) += 1 - lambda;
      } else {
        want(y[n]) = 1;
      }
      pair_ok = pair_ok && (col - want).cwiseAbs().maxCoeff() < 1e-12 && std::abs(col.sum() - 1) < 1e-12 &&
                std::abs(m.target.pixel_weights(n) - (lambda + (1 - lambda) * pm.selected(n))) < 1e-12;
    }
    bad += !pair_ok;
  }
  verdict(3, ok && bad == 0, "EMD schedule and mixing",
          fmt("lambda(0) = min(lambda0, 1), lambda(I_max) = lambda0 e^-5 within 1e-9, strictly decreasing; "
              "%d mixed pairs, %d violating convexity or weight invariants",
              pairs, bad));
}

// --- 4 ---------------------------------------------------------------------------

void metric_oracles() {
  Rng rng(4);
  int masks = 0, mismatches = 0;
  for (; masks < 10000; ++masks) {
    const Index h = 1 + static_cast<Index>(rng() % 16), w = 1 + static_cast<Index>(rng() % 16);
    const int classes = 2 + static_cast<int>(rng() % 3);
    const LabelMask a = oracle::random_mask(rng, h, w, classes), b = oracle::random_mask(rng, h, w, classes);
    std::set<int> whole;
    for (int c = 1; c < classes; ++c) whole.insert(c);
    for (const auto& cls : {whole, std::set<int>{1}, std::set<int>{classes - 1}}) {
      if (dsc(a, b, cls) != oracle::brute_dsc(a, b, cls) ||
          hausdorff(a, b, cls) != oracle::brute_hausdorff(a, b, cls)) {
        ++mismatches;
        break;
      }
    }
  }
  LabelMask p(5, 5, 2), q(5, 5, 2);
  p.labels(0, 0) = 1;
  q.labels(3, 4) = 1;
  const Real hd = hausdorff(p, q, {1});
  verdict(4, mismatches == 0 && hd == 5.0, "metric oracles",
          fmt("%d mask pairs up to 16x16 compared exactly, %d mismatches; HD({(0,0)},{(3,4)}) = %.17g", masks,
              mismatches, hd));
}

// --- experiments -----------------------------------------------------------------

struct Runner {
  fs::path root;
  std::map<std::string, ExperimentResult> results;
  std::map<std::string, double> seconds;

  const ExperimentResult& get(const std::string& tag, ExperimentMode mode,
                              const std::vector<std::string>& overrides = {}) {
    if (auto it = results.find(tag); it != results.end()) return it->second;
    auto all = overrides;
    all.push_back("mode=\"" + std::string(to_string(mode)) + "\"");
    RunConfig c = load_run_config(fs::path(ACT_SOURCE_DIR) / "configs" / "default.jsonc", all);
    c.output_dir = root / tag;
    const auto t0 = Clock::now();
    auto r = run_experiment(c);
    seconds[tag] = seconds_since(t0);
    std::printf("  %-14s dsc %s  hd %s  (%.0f s)\n", tag.c_str(), format_mean_std(r.summary.find("dsc", "whole")).c_str(),
                format_mean_std(r.summary.find("hd", "whole")).c_str(), seconds[tag]);
    std::fflush(stdout);
    return results.emplace(tag, std::move(r)).first->second;
  }

  double dsc(const std::string& tag) const { return results.at(tag).summary.find("dsc", "whole").mean; }
};

/// Mean whole-foreground DSC of the saved source-only models on held-out source scenes.
double source_domain_dsc(const Runner& runner) {
  const RunConfig c = load_run_config(fs::path(ACT_SOURCE_DIR) / "configs" / "default.jsonc");
  const DatasetSplits splits = load_data(c);
  if (splits.source_test.empty()) return 0;
  double sum = 0;
  for (const auto& report : runner.results.at("source_only").reports) {
    const auto model = load_snapshot(
        (runner.root / "source_only" / ("params_" + std::to_string(report.seed) + "_model.bin")).string());
    sum += evaluate(model, splits.source_test).back().dsc;
  }
  return sum / static_cast<double>(runner.results.at("source_only").reports.size());
}

void table_ordering(Runner& r) {
  const auto t0 = Clock::now();
  r.get("source_only", ExperimentMode::source_only);
  r.get("uda_branch", ExperimentMode::uda_branch);
  r.get("act", ExperimentMode::act);
  r.get("joint", ExperimentMode::joint);
  const double so = r.dsc("source_only"), uda = r.dsc("uda_branch"), act = r.dsc("act"), joint = r.dsc("joint");
  const double src = source_domain_dsc(r);
  std::printf("  source_only on held-out source scenes: dsc %.1f (domain gap %.1f points)\n", 100 * src,
              100 * (src - so));
  const bool ok = so < uda && uda < act && act <= joint && act - so >= 0.10 && joint - act <= 0.10;
  verdict(5, ok, "baseline ordering on the default task",
          fmt("5-seed whole DSC source_only %.1f < uda_branch %.1f < act %.1f <= joint %.1f; act - source_only = "
              "%.1f >= 10; joint - act = %.1f <= 10; %.0f s for the four modes",
              100 * so, 100 * uda, 100 * act, 100 * joint, 100 * (act - so), 100 * (joint - act),
              seconds_since(t0)));
}

void ablations(Runner& r) {
  r.get("act", ExperimentMode::act);
  r.get("act_no_emd", ExperimentMode::act_no_emd);
  // N^lt = 5 needs N^s >= 50; both points use the same source pool
  r.get("ssda1_ns50", ExperimentMode::act, {"data.n_source=50", "data.n_target_labeled=1"});
  r.get("ssda5_ns50", ExperimentMode::act, {"data.n_source=50", "data.n_target_labeled=5"});
  r.get("pf_0.25", ExperimentMode::act, {"act.pair_fraction=0.25"});
  r.get("pf_0.5", ExperimentMode::act, {"act.pair_fraction=0.5"});
  const double act = r.dsc("act"), no_emd = r.dsc("act_no_emd");
  const double s1 = r.dsc("ssda1_ns50"), s5 = r.dsc("ssda5_ns50");
  const double p25 = r.dsc("pf_0.25"), p50 = r.dsc("pf_0.5"), p100 = act;
  const bool ok = act >= no_emd && s5 >= s1 && p25 <= p50 && p50 <= p100;
  verdict(6, ok, "ablation and sweeps",
          fmt("act %.1f >= act_no_emd %.1f; SSDA:5 %.1f >= SSDA:1 %.1f (N^s = 50); pair_fraction 0.25/0.5/1.0 -> "
              "%.1f / %.1f / %.1f non-decreasing",
              100 * act, 100 * no_emd, 100 * s5, 100 * s1, 100 * p25, 100 * p50, 100 * p100));
}

void consensus_dynamics(Runner& r) {
  const auto& result = r.get("act", ExperimentMode::act);
  const RunConfig c = load_run_config(fs::path(ACT_SOURCE_DIR) / "configs" / "default.jsonc");
  const int last = c.act.total_iterations, early = last / 10;
  double at_early = 0, at_last = 0;
  int found = 0;
  std::string per_seed;
  for (const auto& report : result.reports) {
    std::optional<double> e, l;
    for (const auto& cp : report.checkpoints) {
      if (!cp.consensus) continue;
      if (cp.iteration == early) e = cp.consensus->both;
      if (cp.iteration == last) l = cp.consensus->both;
    }
    if (!e || !l) continue;
    ++found;
    at_early += *e;
    at_last += *l;
    per_seed += fmt(" %.2f->%.2f", *e, *l);
  }
  const auto n = static_cast<double>(std::max(found, 1));
  const bool ok = found == static_cast<int>(result.reports.size()) && at_last / n > at_early / n;
  verdict(7, ok, "consensus dynamics",
          fmt("mean 'both confident' test-pixel fraction %.3f at I = %d -> %.3f at I = %d; per seed:%s",
              at_early / n, early, at_last / n, last, per_seed.c_str()));
}

void determinism(const fs::path& root) {
  const std::vector<std::string> overrides{"runs=2", "act.total_iterations=300", "act.eval_every=100"};
  RunConfig c = load_run_config(fs::path(ACT_SOURCE_DIR) / "configs" / "default.jsonc", overrides);
  c.output_dir = root / "determinism_a";
  run_experiment(c);
  c.output_dir = root / "determinism_b";
  run_experiment(c);
  std::vector<std::string> files{"summary.csv"};
  for (int i = 0; i < c.runs; ++i) files.push_back(report_file_name(run_seed(c, i)));
  int differing = 0;
  for (const auto& f : files) {
    const auto a = slurp(root / "determinism_a" / f), b = slurp(root / "determinism_b" / f);
    differing += a.empty() || a != b;
  }
  verdict(8, differing == 0, "determinism",
          fmt("default act config with runs = 2, I_max = 300 executed twice: %d of %zu files differ", differing,
              files.size()));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  const char* keep = std::getenv("ACT_ACCEPTANCE_OUT");
  const fs::path root = keep ? fs::path(keep) : fs::temp_directory_path() / "act_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  auto guarded = [](int id, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      verdict(id, false, "exception", e.what());
    }
  };

  guarded(1, gradient_oracle);
  guarded(2, pseudo_label_oracle);
  guarded(3, emd_schedule);
  guarded(4, metric_oracles);

  Runner runner{root, {}, {}};
  guarded(5, [&] { table_ordering(runner); });
  guarded(6, [&] { ablations(runner); });
  guarded(7, [&] { consensus_dynamics(runner); });
  guarded(8, [&] { determinism(root); });

  std::printf("%s: %d criteria failed, %.0f s total\n", failures ? "FAIL" : "PASS", failures, seconds_since(t0));
  if (!keep) fs::remove_all(root);
  return failures ? 1 : 0;
}
