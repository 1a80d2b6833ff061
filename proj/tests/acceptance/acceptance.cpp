// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.
// Usage: acceptance [work_dir] [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "modaldx/eval.hpp"
#include "modaldx/hodmd.hpp"
#include "modaldx/model.hpp"
#include "modaldx/synth.hpp"
#include "oracles/jacobi_svd.hpp"
#include "oracles/standard_dmd.hpp"
#include "report.hpp"

using namespace modaldx;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work;

Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

SnapshotMatrix as_snapshots(Matrix data, double dt, int h = 0, int w = 0) {
  SnapshotMatrix s;
  s.data = std::move(data);
  s.dt_s = dt;
  s.height = h;
  s.width = w;
  return s;
}

HodmdConfig hodmd_config(int d, double eps_svd, double eps_amp, double dt) {
  HodmdConfig c;
  c.delay = d;
  c.eps_svd = eps_svd;
  c.eps_amp = eps_amp;
  c.dt_s = dt;
  return c;
}

GroundTruthMode blob(double r, double c, double sigma, double amp, double omega, double delta, double phase) {
  GroundTruthMode m;
  m.center_row = r;
  m.center_col = c;
  m.sigma_row = m.sigma_col = sigma;
  m.amplitude = amp;
  m.frequency_rad_s = omega;
  m.growth_rate_per_s = delta;
  m.phase = phase;
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cli_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int rc = cli::run(args, out, err);
  if (rc != 0) std::cerr << "  command failed (" << rc << "): " << args.front() << "\n" << err.str();
  return rc;
}

// ---- 1 ------------------------------------------------------------------------

Outcome hodmd_exactness() {
  CineConfig cfg;
  cfg.height = 64;
  cfg.width = 64;
  cfg.frames = 200;
  cfg.dt_s = 0.01;
  cfg.noise_sd = 0.0;
  struct Case {
    std::vector<GroundTruthMode> modes;
    double offset;
  };
  // N' counts generator eigenvalues: an oscillating mode is a conjugate pair, a non-oscillating
  // mode a single real eigenvalue, a nonzero offset the static mode.
  const std::vector<Case> cases = {
      {{blob(30, 34, 6, 80, 0.0, 0.3, 0.4)}, 0.0},
      {{blob(22, 40, 5, 70, 2 * std::numbers::pi * 6.0, -0.2, 1.0)}, 0.0},
      {{blob(32, 32, 7, 60, 2 * std::numbers::pi * 5.0, 0.1, 0.5)}, 110.0},
      {{blob(20, 22, 5, 60, 2 * std::numbers::pi * 7.0, -0.3, 0.2), blob(44, 40, 6, 40, 2 * std::numbers::pi * 3.0, 0.2, 2.0)}, 100.0}};
  const std::vector<int> n_prime = {1, 2, 3, 5};

  std::string detail;
  bool pass = true;
  double worst_f = 0.0, worst_d = 0.0, worst_a = 0.0, worst_r = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto expected = expected_spectrum(cases[i].modes, cases[i].offset, cfg);
    const ModeSet ms = hodmd(as_snapshots(render_field(cases[i].modes, cases[i].offset, cfg), cfg.dt_s, 64, 64),
                             hodmd_config(20, 1e-10, 1e-8, cfg.dt_s));
    const bool count_ok = static_cast<int>(expected.size()) == n_prime[i] && ms.spectral_complexity() == n_prime[i];
    pass = pass && count_ok;
    detail += fmt::format("N'={}:{} ", n_prime[i], ms.spectral_complexity());
    std::vector<bool> used(ms.modes.size(), false);
    for (const auto& e : expected) {
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t j = 0; j < ms.modes.size(); ++j) {
        const double d = std::abs(ms.modes[j].frequency_rad_s - e.frequency_rad_s) +
                         std::abs(ms.modes[j].growth_rate_per_s - e.growth_rate_per_s);
        if (!used[j] && d < best_d) {
          best_d = d;
          best = j;
        }
      }
      if (ms.modes.empty()) break;
      used[best] = true;
      const DmdMode& m = ms.modes[best];
      worst_f = std::max(worst_f, std::abs(m.frequency_rad_s - e.frequency_rad_s));
      worst_d = std::max(worst_d, std::abs(m.growth_rate_per_s - e.growth_rate_per_s));
      worst_a = std::max(worst_a, std::abs(m.amplitude - e.amplitude) / e.amplitude);
    }
    worst_r = std::max(worst_r, ms.reconstruction_rrmse);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  pass = pass && worst_f <= 1e-6 && worst_d <= 1e-6 && worst_a <= 1e-6 && worst_r <= 1e-6 && secs < 30.0;
  detail += fmt::format("| max err freq {:.1e} growth {:.1e} amp(rel) {:.1e} rrmse {:.1e} | {:.1f} s", worst_f, worst_d,
                        worst_a, worst_r, secs);
  return {pass, detail};
}

// ---- 2 ------------------------------------------------------------------------

Outcome d1_oracle() {
  std::mt19937_64 rng(2718);
  double worst = 0.0;
  bool counts = true;
  for (int trial = 0; trial < 20; ++trial) {
    const bool tall = trial % 2 == 0;
    const int j = tall ? 40 + static_cast<int>(rng() % 40) : 6 + static_cast<int>(rng() % 10);
    const int k = tall ? 10 + static_cast<int>(rng() % 20) : 40 + static_cast<int>(rng() % 40);
    const Matrix x = random_matrix(j, k, rng());
    const ModeSet ms = hodmd(as_snapshots(x, 0.01), hodmd_config(1, 1e-10, 0.0, 0.01));
    std::vector<std::complex<double>> mine;
    for (const auto& m : ms.modes) mine.push_back(m.eigenvalue);
    const auto ref = oracle::standard_dmd_eigenvalues(x);
    counts = counts && mine.size() == ref.size();
    worst = std::max(worst, oracle::max_matched_relative_error(mine, ref));
  }
  return {counts && worst <= 1e-8, fmt::format("20 cases, max matched relative eigenvalue error {:.2e}", worst)};
}

// ---- 3 ------------------------------------------------------------------------

Outcome svd_oracle() {
  const std::vector<std::pair<int, int>> shapes = {{200, 100}, {100, 200}, {200, 37}, {150, 100}, {64, 64},
                                                   {13, 120}, {120, 13}, {2, 2},    {199, 99},  {100, 100}};
  double worst = 0.0;
  bool ranks = true;
  std::uint64_t seed = 31;
  for (auto [r, c] : shapes) {
    const Matrix a = random_matrix(r, c, seed++);
    const SvdFactors f = truncated_svd(a, 1e-12);
    const auto ref = oracle::jacobi_singular_values(a);
    ranks = ranks && f.rank() == static_cast<int>(ref.size());
    for (int i = 0; i < std::min<int>(f.rank(), static_cast<int>(ref.size())); ++i)
      worst = std::max(worst, std::abs(f.singular_values(i) - ref[i]) / ref[i]);
  }
  return {ranks && worst <= 1e-8,
          fmt::format("{} matrices up to 200x100, max relative singular value error {:.2e}", shapes.size(), worst)};
}

// ---- 4 ------------------------------------------------------------------------

Outcome gradient_check() {
  ModelConfig c;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.n_blocks = 1;
  c.n_heads = 2;
  c.mlp_ratio = 2;
  c.m_modes = 3;
  c.grid_h = 8;
  c.grid_w = 8;
  c.seed = 17;
  Model m = init_model(c);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  m.params.visit([&](const std::string&, Matrix& w) { w = w.unaryExpr([&](double v) { return v + 0.2 * n(rng); }); });
  m.norm.onset_mean = 80.0;
  m.norm.onset_sd = 20.0;
  FeatureTensor x(c.m_modes, c.grid_h, c.grid_w);
  for (double& v : x.mode_images) v = n(rng);
  for (int s = 0; s < c.m_modes; ++s) {
    for (int j = 0; j < kModeScalars; ++j) x.mode_scalars(s, j) = n(rng);
    x.validity_mask[s] = s != 1;
  }
  const Target target{HeartState::SAH, 70.0};
  const LossWeights w{1.0, 1.0 / 400.0};
  const PatchMask mask = sample_mask(c, x, 0.5, rng);
  const Matrix targets = masked_targets(m, x, mask);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> g_sup, g_rec;
  backward(m, x, target, w).grads.visit([&](const std::string&, const Matrix& g) {
    g_sup.insert(g_sup.end(), g.data(), g.data() + g.size());
  });
  backward_masked(m, x, mask, targets).grads.visit([&](const std::string&, const Matrix& g) {
    g_rec.insert(g_rec.end(), g.data(), g.data() + g.size());
  });
  const double h = 1e-5;
  auto rel = [](double a, double f) { return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-6}); };
  double worst = 0.0;
  std::size_t k = 0;
  std::vector<Matrix*> tensors;
  m.params.visit([&](const std::string&, Matrix& t) { tensors.push_back(&t); });
  for (Matrix* t : tensors) {
    for (Eigen::Index i = 0; i < t->size(); ++i, ++k) {
      double& v = t->data()[i];
      const double keep = v;
      v = keep + h;
      const double sp = loss(forward(m, x), target, w).total;
      const double rp = masked_reconstruction_loss(forward(m, x, &mask), targets);
      v = keep - h;
      const double sm = loss(forward(m, x), target, w).total;
      const double rm = masked_reconstruction_loss(forward(m, x, &mask), targets);
      v = keep;
      worst = std::max({worst, rel(g_sup[k], (sp - sm) / (2 * h)), rel(g_rec[k], (rp - rm) / (2 * h))});
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {k == m.parameter_count() && worst <= 1e-4 && secs < 60.0,
          fmt::format("{} parameters, supervised and masked losses, max relative error {:.2e} | {:.1f} s", k, worst, secs)};
}

// ---- 5 ------------------------------------------------------------------------

Outcome leakage_guard() {
  bool exclusive = true, fraction = true;
  int cohorts = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed, ++cohorts) {
    const int animals = 2 + static_cast<int>(seed % 12);
    const int scans = 1 + static_cast<int>((seed / 3) % 6);
    const Dataset ds = generate_cohort(animals, scans, CohortConfig{}, 1000 + seed);
    const SplitPlan plan = split_dataset(ds, SplitRatios{}, seed);
    // Exhaustive (animal, partition) scan.
    std::set<std::string> ids;
    for (const auto& r : ds) ids.insert(r.animal_id);
    for (const auto& id : ids) {
      int used = 0;
      for (int p = 0; p < kNumPartitions; ++p) {
        bool any = false;
        for (std::size_t i = 0; i < ds.size(); ++i) any = any || (ds[i].animal_id == id && plan.assignment[i] == Partition(p));
        used += any;
      }
      exclusive = exclusive && used == 1;
    }
    const auto keys = split_keys(ds);
    for (int g = 0; g < kNumClasses; ++g) {
      const int n = animals * scans;
      const int train = plan.count(Partition::train, heart_state_from_index(g), keys);
      fraction = fraction && std::abs(train - 0.6 * n) <= scans;
    }
  }
  // 193 single-scan sequences at the 118/38/37 proportions.
  std::vector<SplitKey> keys;
  for (int i = 0; i < 193; ++i) keys.push_back({"m" + std::to_string(i), HeartState::CTL});
  const SplitPlan p193 = split_dataset(std::span<const SplitKey>(keys), {118.0 / 193, 38.0 / 193, 37.0 / 193}, 1);
  const bool exact = p193.count(Partition::train) == 118 && p193.count(Partition::val) == 38 && p193.count(Partition::test) == 37;
  return {exclusive && fraction && exact,
          fmt::format("{} cohorts exclusive={} train-within-one-animal={} | 193 -> {}/{}/{}", cohorts, exclusive, fraction,
                      p193.count(Partition::train), p193.count(Partition::val), p193.count(Partition::test))};
}

// ---- 6, 7, 10: CLI pipeline ------------------------------------------------------

struct PipelineRun {
  bool ok = false;
  fs::path root;
  double seconds = 0.0;
};

PipelineRun run_pipeline(const fs::path& root, const std::vector<std::string>& synth_extra,
                         const std::vector<std::string>& decompose_extra, const std::vector<std::string>& fit_extra,
                         const std::string& pretrain_epochs, const std::string& train_epochs) {
  PipelineRun r;
  r.root = root;
  fs::remove_all(root);
  const auto t0 = std::chrono::steady_clock::now();
  const std::string cohort = (root / "cohort").string(), features = (root / "features").string();
  auto with = [](std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  r.ok = cli_run(with({"synth", "--out", cohort}, synth_extra)) == 0 &&
         cli_run(with({"decompose", "--cohort", cohort, "--out", features}, decompose_extra)) == 0 &&
         cli_run(with({"pretrain", "--cohort", cohort, "--features", features, "--epochs", pretrain_epochs, "--out",
                       (root / "pretrain").string()},
                      fit_extra)) == 0 &&
         cli_run(with({"train", "--cohort", cohort, "--features", features, "--epochs", train_epochs, "--init",
                       (root / "pretrain" / "pretrained.mdl").string(), "--out", (root / "train").string()},
                      fit_extra)) == 0 &&
         cli_run({"predict", "--checkpoint", (root / "train" / "model.mdl").string(), "--cohort", cohort, "--features",
                  features, "--split", (root / "train" / "split.csv").string(), "--partition", "test", "--out",
                  (root / "predict").string()}) == 0 &&
         cli_run({"eval", "--predictions", (root / "predict" / "predictions.csv").string(), "--cohort", cohort, "--out",
                  (root / "eval").string()}) == 0;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

const PipelineRun& default_run() {
  static const PipelineRun run =
      run_pipeline(g_work / "synthetic_default", {"--animals", "10", "--scans", "5", "--seed", "1"}, {}, {}, "20", "60");
  return run;
}

Outcome diagnosis() {
  const PipelineRun& r = default_run();
  if (!r.ok) return {false, "pipeline failed"};
  const auto t = report::read_csv(r.root / "eval" / "accuracy.csv");
  double overall = 0.0, worst_class = 1.0;
  std::string per;
  for (const auto& row : t.rows) {
    const double a = row[3].empty() ? 0.0 : std::stod(row[3]);
    if (row[0] == "overall") {
      overall = a;
    } else {
      worst_class = std::min(worst_class, a);
      per += fmt::format(" {}={:.3f}", row[0], a);
    }
  }
  const int n = std::stoi(t.rows.back()[1]);
  return {overall >= 0.90 && worst_class >= 0.80 && r.seconds < 900.0,
          fmt::format("test n={} overall {:.3f} |{} | pipeline {:.0f} s", n, overall, per, r.seconds)};
}

Outcome prognosis() {
  const PipelineRun& r = default_run();
  if (!r.ok) return {false, "pipeline failed"};
  const json s = json::parse(slurp(r.root / "eval" / "summary.json"));
  const double rmse = s.at("rmse_weeks").get<double>();
  // Pooled within-group sd of the true onset ages of the evaluated (test) records.
  const Cohort c = load_cohort(r.root / "cohort");
  std::map<std::string, double> onset;
  std::map<std::string, HeartState> group;
  for (const auto& rec : c.records) {
    onset[rec.video_id] = rec.onset_age_weeks;
    group[rec.video_id] = rec.group;
  }
  std::array<std::vector<double>, kNumClasses> by_group;
  for (const auto& row : report::read_csv(r.root / "predict" / "predictions.csv").rows)
    by_group[static_cast<int>(group.at(row[0]))].push_back(onset.at(row[0]));
  double ss = 0.0;
  int dof = 0;
  for (const auto& v : by_group) {
    if (v.empty()) continue;
    double mean = 0.0;
    for (double x : v) mean += x / static_cast<double>(v.size());
    for (double x : v) ss += (x - mean) * (x - mean);
    dof += static_cast<int>(v.size()) - 1;
  }
  const double pooled = dof > 0 ? std::sqrt(ss / dof) : 0.0;
  return {dof > 0 && rmse <= 0.5 * pooled,
          fmt::format("test RMSE {:.2f} weeks vs 0.5 x pooled within-group sd {:.2f} = {:.2f}", rmse, pooled, 0.5 * pooled)};
}

// ---- 8 ------------------------------------------------------------------------

Outcome metric_identities() {
  std::mt19937_64 rng(8888);
  std::uniform_int_distribution<int> cls(0, kNumClasses - 1);
  std::uniform_real_distribution<double> age(0.0, 160.0), onset(20.0, 140.0), err(-40.0, 40.0);
  int bad_sum = 0, bad_acc = 0, bad_rmse = 0;
  double worst_rmse = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 150);
    std::vector<LabelPair> pairs;
    std::vector<double> ages, truth, pred;
    std::vector<HeartState> groups;
    for (int i = 0; i < n; ++i) {
      pairs.push_back({heart_state_from_index(cls(rng)), heart_state_from_index(cls(rng))});
      ages.push_back(age(rng));
      truth.push_back(onset(rng));
      pred.push_back(truth.back() + err(rng));
      groups.push_back(pairs.back().truth);
    }
    std::vector<double> edges = {0.0};
    const int cuts = static_cast<int>(rng() % 5);
    for (int c = 0; c < cuts; ++c) edges.push_back(edges.back() + 1.0 + age(rng) / 4.0);
    std::vector<AgeInterval> intervals;
    for (std::size_t i = 0; i < edges.size(); ++i)
      intervals.push_back({edges[i], i + 1 < edges.size() ? edges[i + 1] : std::numeric_limits<double>::infinity()});

    const ConfusionMatrix global = confusion_matrix(pairs);
    ConfusionMatrix sum;
    for (const auto& m : stratified_confusion(ages, pairs, intervals).matrices) sum += m;
    bad_sum += !(sum == global);
    long trace = 0;
    for (int i = 0; i < kNumClasses; ++i) trace += global.counts[i][i];
    bad_acc += *global.overall_accuracy() != static_cast<double>(trace) / static_cast<double>(n);

    const RmseReport r = rmse(truth, pred, groups);
    double ss = 0.0;
    std::array<double, kNumClasses> gss{};
    std::array<int, kNumClasses> gn{};
    for (int i = 0; i < n; ++i) {
      const double d = pred[i] - truth[i];
      ss += d * d;
      gss[static_cast<int>(groups[i])] += d * d;
      ++gn[static_cast<int>(groups[i])];
    }
    double e = std::abs(r.overall - std::sqrt(ss / n)) / std::sqrt(ss / n);
    for (int g = 0; g < kNumClasses; ++g) {
      if (gn[g] == 0) {
        bad_rmse += r.per_group[g].has_value();
        continue;
      }
      const double direct = std::sqrt(gss[g] / gn[g]);
      e = std::max(e, std::abs(*r.per_group[g] - direct) / direct);
    }
    worst_rmse = std::max(worst_rmse, e);
    bad_rmse += e > 1e-12;
  }
  return {bad_sum == 0 && bad_acc == 0 && bad_rmse == 0,
          fmt::format("1000 cases: stratified-sum failures {}, trace/total failures {}, RMSE failures {} (max rel {:.1e})",
                      bad_sum, bad_acc, bad_rmse, worst_rmse)};
}

// ---- 9 ------------------------------------------------------------------------

Outcome realtime_budget() {
  const fs::path dir = g_work / "bench";
  fs::remove_all(dir);
  if (cli_run({"bench", "--synthetic", "--repeat", "5", "--seed", "3", "--out", dir.string()}) != 0)
    return {false, "bench failed"};
  const json s = json::parse(slurp(dir / "bench_summary.json"));
  const double mean = s.at("per_frame_s_mean").get<double>();
  return {s.at("pass").get<bool>() && mean < 1.0 && s.at("frames") == 100 && s.at("height") == 64,
          fmt::format("{} frames {}x{}: per-frame p50 {:.2e} s, p95 {:.2e} s, mean {:.2e} s (budget 1 s)",
                      s.at("frames").get<int>(), s.at("height").get<int>(), s.at("width").get<int>(),
                      s.at("per_frame_s_p50").get<double>(), s.at("per_frame_s_p95").get<double>(), mean)};
}

// ---- 10 -----------------------------------------------------------------------

Outcome determinism() {
  const std::vector<std::string> synth = {"--animals", "5", "--scans", "2", "--seed", "21",
                                          "--frames", "40", "--height", "32", "--width", "32"};
  const std::vector<std::string> dec = {"--size", "32", "--grid", "32"};
  const std::vector<std::string> fit = {"--embed-dim", "16", "--blocks", "1", "--heads", "2", "--seed", "4"};
  const PipelineRun a = run_pipeline(g_work / "determinism_a", synth, dec, fit, "3", "5");
  const PipelineRun b = run_pipeline(g_work / "determinism_b", synth, dec, fit, "3", "5");
  if (!a.ok || !b.ok) return {false, "pipeline failed"};
  int compared = 0, differing = 0;
  std::string first_diff;
  for (const auto& e : fs::recursive_directory_iterator(a.root)) {
    if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
    const fs::path rel = fs::relative(e.path(), a.root);
    ++compared;
    if (!fs::exists(b.root / rel) || slurp(e.path()) != slurp(b.root / rel)) {
      ++differing;
      if (first_diff.empty()) first_diff = rel.string();
    }
  }
  int b_count = 0;
  for (const auto& e : fs::recursive_directory_iterator(b.root)) b_count += e.is_regular_file() && e.path().extension() == ".csv";
  return {compared > 0 && differing == 0 && b_count == compared,
          fmt::format("{} CSV files compared across two runs, {} differ{}", compared, differing,
                      first_diff.empty() ? "" : " (first: " + first_diff + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  g_work = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_runs";
  fs::create_directories(g_work);
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::stoi(argv[i]));

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"HODMD exactness", hodmd_exactness},
      {"d=1 standard-DMD oracle", d1_oracle},
      {"SVD Jacobi oracle", svd_oracle},
      {"gradient check", gradient_check},
      {"leakage guard", leakage_guard},
      {"end-to-end diagnosis", diagnosis},
      {"end-to-end prognosis", prognosis},
      {"metric identities", metric_identities},
      {"real-time budget", realtime_budget},
      {"determinism", determinism}};

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << fmt::format("{} {:2d} {}: {}", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
