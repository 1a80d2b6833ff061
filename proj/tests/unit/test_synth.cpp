#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "fixtures.hpp"
#include "modaldx/hodmd.hpp"
#include "modaldx/synth.hpp"

using namespace modaldx;

namespace {

constexpr double kTwoPi = 6.283185307179586;

GroundTruthMode single_mode(double amp, double hz) {
  GroundTruthMode m;
  m.center_row = 15.5;
  m.center_col = 14.0;
  m.sigma_row = 4.0;
  m.sigma_col = 5.0;
  m.amplitude = amp;
  m.frequency_rad_s = kTwoPi * hz;
  m.phase = 0.6;
  return m;
}

CineConfig quiet(int h, int w, int k) {
  CineConfig c;
  c.height = h;
  c.width = w;
  c.frames = k;
  c.noise_sd = 0.0;
  return c;
}

// Raw intensities, no resampling or normalisation.
SnapshotMatrix raw_snapshots(const VideoSequence& v) {
  SnapshotMatrix s;
  s.data.resize(static_cast<Eigen::Index>(v.height()) * v.width(), v.frame_count());
  for (int k = 0; k < v.frame_count(); ++k)
    for (std::size_t p = 0; p < v.frames[k].pixels.size(); ++p) s.data(static_cast<Eigen::Index>(p), k) = v.frames[k].pixels[p];
  s.dt_s = v.frame_interval_s;
  s.height = v.height();
  s.width = v.width();
  return s;
}

const DmdMode& positive_frequency_mode(const ModeSet& ms) {
  for (const auto& m : ms.modes)
    if (m.frequency_rad_s > 0.0) return m;
  FAIL("no oscillating mode");
  return ms.modes.front();
}

}  // namespace

TEST_CASE("Gaussian patterns are unit norm and centred") {
  GroundTruthMode m = single_mode(1.0, 1.0);
  m.correlation = 0.4;
  const Vector p = gaussian_pattern(m, 32, 30);
  CHECK(p.norm() == doctest::Approx(1.0).epsilon(1e-14));
  Eigen::Index arg = 0;
  p.maxCoeff(&arg);
  CHECK(std::abs(static_cast<double>(arg / 30) - 15.5) <= 0.5);
  CHECK(arg % 30 == 14);
  m.sigma_row = 0.0;
  CHECK_THROWS_AS(gaussian_pattern(m, 8, 8), ConfigError);
  m.sigma_row = 1.0;
  m.correlation = 1.0;
  CHECK_THROWS_AS(gaussian_pattern(m, 8, 8), ConfigError);
}

TEST_CASE("zero modes give a constant video at the offset") {
  const CineConfig cfg = quiet(16, 16, 10);
  const SyntheticCine c = generate_cine(std::vector<GroundTruthMode>{}, 97.0, cfg, 3);
  REQUIRE(c.video.frame_count() == 10);
  for (const auto& f : c.video.frames)
    for (auto px : f.pixels) CHECK(px == 97);
}

TEST_CASE("one undamped mode round-trips through HODMD") {
  const CineConfig cfg = quiet(32, 32, 100);
  const std::vector<GroundTruthMode> truth = {single_mode(60.0, 5.0)};

  SUBCASE("rendered field: frequency and amplitude within 1e-6") {
    SnapshotMatrix s;
    s.data = render_field(truth, 0.0, cfg);
    s.dt_s = cfg.dt_s;
    const ModeSet ms = hodmd(s, default_hodmd_config(cfg.frames, cfg.dt_s));
    REQUIRE(ms.spectral_complexity() == 2);
    const DmdMode& m = positive_frequency_mode(ms);
    CHECK(std::abs(m.frequency_rad_s - kTwoPi * 5.0) <= 1e-6);
    CHECK(std::abs(2.0 * m.amplitude - 60.0) <= 1e-6 * 60.0);
    CHECK(std::abs(m.growth_rate_per_s) <= 1e-6);
  }
  SUBCASE("8-bit video: frequency within 1e-6") {
    // 5 Hz at 100 frames/s repeats every 20 frames, so the rounded video is exactly periodic
    // and spans at most 20 eigenvalues; keep all of them.
    const SyntheticCine c = generate_cine(truth, 100.0, cfg, 1);
    HodmdConfig hc = default_hodmd_config(cfg.frames, cfg.dt_s);
    hc.eps_svd = 1e-12;
    const ModeSet ms = hodmd(raw_snapshots(c.video), hc);
    const DmdMode& m = positive_frequency_mode(ms);
    CHECK(std::abs(m.frequency_rad_s - kTwoPi * 5.0) <= 1e-6);
    CHECK(std::abs(m.growth_rate_per_s) <= 1e-6);
  }
}

TEST_CASE("generation is seeded") {
  const auto profiles = default_group_profiles();
  const CineConfig cfg;
  const SyntheticCine a = generate_cine(profiles[2], 50.0, 100.0, cfg, 42);
  const SyntheticCine b = generate_cine(profiles[2], 50.0, 100.0, cfg, 42);
  const SyntheticCine c = generate_cine(profiles[2], 50.0, 100.0, cfg, 43);
  bool same = true, differs = false;
  for (int k = 0; k < cfg.frames; ++k) {
    same = same && a.video.frames[k].pixels == b.video.frames[k].pixels;
    differs = differs || a.video.frames[k].pixels != c.video.frames[k].pixels;
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("render_field matches the closed form and quantize clips") {
  const CineConfig cfg = quiet(8, 8, 6);
  GroundTruthMode m = single_mode(300.0, 3.0);
  m.center_row = m.center_col = 3.5;
  m.growth_rate_per_s = -2.0;
  const Matrix f = render_field({m}, 10.0, cfg);
  const Vector p = gaussian_pattern(m, 8, 8);
  for (int k = 0; k < 6; ++k) {
    const double t = k * cfg.dt_s;
    const Vector col = Vector::Constant(64, 10.0) + 300.0 * std::exp(-2.0 * t) * std::cos(m.frequency_rad_s * t + 0.6) * p;
    CHECK((f.col(k) - col).cwiseAbs().maxCoeff() <= 1e-12);
  }
  const VideoSequence v = quantize_field(Matrix::Constant(64, 6, 400.0), cfg, 0, "x");
  CHECK(v.frames[0].pixels[0] == 255);
  const VideoSequence w = quantize_field(Matrix::Constant(64, 6, -3.0), cfg, 0, "x");
  CHECK(w.frames[5].pixels[63] == 0);
}

TEST_CASE("frame budget and parameter validation") {
  CHECK_THROWS_AS(render_field({single_mode(1, 1), single_mode(1, 2)}, 0.0, quiet(8, 8, 5)), ConfigError);
  CHECK_NOTHROW(render_field({single_mode(1, 1), single_mode(1, 2)}, 0.0, quiet(8, 8, 6)));
  CineConfig c = quiet(8, 8, 10);
  c.noise_sd = -1.0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = quiet(7, 8, 10);
  CHECK_THROWS_AS(validate(c), ConfigError);
  GroupProfile p = default_group_profiles()[0];
  p.onset_sd_weeks = 0.0;
  CHECK_THROWS_AS(validate(p), ConfigError);
  CHECK_THROWS_AS(generate_cohort(0, 5, CohortConfig{}, 1), ConfigError);
  CHECK_THROWS_AS(generate_cohort(5, 0, CohortConfig{}, 1), ConfigError);
}

TEST_CASE("cohort counts") {
  const Dataset ds = generate_cohort(10, 5, CohortConfig{}, 7);
  CHECK(ds.size() == 200);
  std::set<std::string> animals, videos;
  std::set<HeartState> labels;
  std::map<std::string, std::set<double>> onset_by_animal;
  std::map<std::string, HeartState> group_by_animal;
  for (const auto& r : ds) {
    animals.insert(r.animal_id);
    videos.insert(r.video_id);
    labels.insert(r.group);
    onset_by_animal[r.animal_id].insert(r.onset_age_weeks);
    CHECK(r.acquisition_age_weeks >= 0.0);
    CHECK(r.onset_age_weeks >= kMinOnsetWeeks);
    CHECK(r.ground_truth.size() == 3);
  }
  CHECK(animals.size() == 40);
  CHECK(videos.size() == 200);
  CHECK(labels.size() == 4);
  for (const auto& [id, onsets] : onset_by_animal) CHECK(onsets.size() == 1);
}

TEST_CASE("scan schedules straddle onset") {
  const Dataset ds = generate_cohort(3, 5, CohortConfig{}, 9);
  std::map<std::string, std::pair<int, int>> before_after;
  for (const auto& r : ds) {
    auto& ba = before_after[r.animal_id];
    (r.acquisition_age_weeks < r.onset_age_weeks ? ba.first : ba.second)++;
  }
  for (const auto& [id, ba] : before_after) {
    CHECK(ba.first > 0);
    CHECK(ba.second > 0);
  }
}

TEST_CASE("HG onset mean over 1000 animals") {
  CohortConfig cfg;
  const Dataset ds = generate_cohort(1000, 1, cfg, 2024);
  double sum = 0.0;
  int n = 0;
  for (const auto& r : ds)
    if (r.group == HeartState::HG) {
      sum += r.onset_age_weeks;
      ++n;
    }
  REQUIRE(n == 1000);
  CHECK(std::abs(sum / n - 44.3) <= 1.0);
}

TEST_CASE("default onset calibration") {
  const auto p = default_group_profiles();
  CHECK(p[0].label == HeartState::CTL);
  CHECK(p[0].onset_mean_weeks == 103.8);
  CHECK(p[0].onset_sd_weeks == 22.7);
  CHECK(p[1].onset_mean_weeks == 44.3);
  CHECK(p[1].onset_sd_weeks == 6.7);
  CHECK(p[2].onset_mean_weeks == 103.33);
  CHECK(p[2].onset_sd_weeks == 17.91);
  CHECK(p[3].onset_mean_weeks == 85.0);
  CHECK(p[3].onset_sd_weeks == 15.0);
}

TEST_CASE("onset sampling is truncated at four weeks") {
  CohortConfig cfg;
  for (auto& p : cfg.profiles) {
    p.onset_mean_weeks = 5.0;
    p.onset_sd_weeks = 10.0;
  }
  for (const auto& r : generate_cohort(200, 1, cfg, 1)) CHECK(r.onset_age_weeks >= kMinOnsetWeeks);
}

TEST_CASE("cohort generation is seeded") {
  const Dataset a = generate_cohort(3, 2, CohortConfig{}, 11);
  const Dataset b = generate_cohort(3, 2, CohortConfig{}, 11);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].video_id == b[i].video_id);
    CHECK(a[i].acquisition_age_weeks == b[i].acquisition_age_weeks);
    CHECK(a[i].onset_age_weeks == b[i].onset_age_weeks);
    CHECK(a[i].noise_seed == b[i].noise_seed);
    REQUIRE(a[i].ground_truth.size() == b[i].ground_truth.size());
    for (std::size_t m = 0; m < a[i].ground_truth.size(); ++m) {
      CHECK(a[i].ground_truth[m].frequency_rad_s == b[i].ground_truth[m].frequency_rad_s);
      CHECK(a[i].ground_truth[m].amplitude == b[i].ground_truth[m].amplitude);
    }
  }
  // Adding animals leaves the existing ones untouched.
  const Dataset c = generate_cohort(4, 2, CohortConfig{}, 11);
  CHECK(c[0].onset_age_weeks == a[0].onset_age_weeks);
  CHECK(c[0].ground_truth[0].phase == a[0].ground_truth[0].phase);
}

TEST_CASE("group frequencies are separated by at least five jitter widths") {
  const auto p = default_group_profiles();
  for (int g = 0; g < kNumClasses; ++g)
    for (int h = g + 1; h < kNumClasses; ++h) {
      REQUIRE(p[g].modes.size() == p[h].modes.size());
      const double jitter = std::max(p[g].frequency_jitter_hz, p[h].frequency_jitter_hz);
      for (std::size_t m = 0; m < p[g].modes.size(); ++m)
        CHECK(std::abs(p[g].modes[m].frequency_hz - p[h].modes[m].frequency_hz) >= 5.0 * jitter - 1e-12);
    }
}

TEST_CASE("age effect is monotone and bounded") {
  double last = 0.0;
  for (double age = 0.0; age <= 300.0; age += 2.5) {
    const double e = age_effect(age, 100.0);
    CHECK(e >= 0.4);
    CHECK(e <= 1.0);
    CHECK(e >= last);
    last = e;
  }
}

TEST_CASE("progression modes encode age and onset") {
  const GroupProfile p = default_group_profiles()[1];
  const CineConfig cfg;
  double last_amp = 0.0;
  for (double age : {10.0, 20.0, 30.0, 45.0, 60.0}) {
    const auto modes = draw_modes(p, age, 45.0, cfg, 5);
    CHECK(modes[2].amplitude > last_amp);
    last_amp = modes[2].amplitude;
    CHECK(modes[0].growth_rate_per_s == 0.0);
  }
  const double early = draw_modes(p, 30.0, 30.0, cfg, 5)[2].growth_rate_per_s;
  const double late = draw_modes(p, 30.0, 60.0, cfg, 5)[2].growth_rate_per_s;
  CHECK(late - early == doctest::Approx(30.0 * p.growth_per_onset_week).epsilon(1e-12));
}

TEST_CASE("frequency error does not shrink as noise grows") {
  // Commensurate frequency, so the noise-free rounded video carries no frequency bias that
  // noise could dither away. Rounding makes single realisations non-monotone; the error is
  // averaged over the same seeds at every noise level.
  const CineConfig base = quiet(32, 32, 100);
  const std::vector<GroundTruthMode> truth = {single_mode(600.0, 5.0)};
  const double omega = kTwoPi * 5.0;
  double last = -1.0;
  for (double sd : {0.0, 0.5, 2.0, 8.0}) {
    double mean_err = 0.0;
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
      CineConfig cfg = base;
      cfg.noise_sd = sd;
      const SyntheticCine c = generate_cine(truth, 128.0, cfg, seed);
      const ModeSet ms = hodmd(raw_snapshots(c.video), default_hodmd_config(cfg.frames, cfg.dt_s));
      double err = std::numeric_limits<double>::infinity();
      for (const auto& m : ms.modes) err = std::min(err, std::abs(m.frequency_rad_s - omega));
      mean_err += err / 8.0;
    }
    CHECK_MESSAGE(mean_err >= last, "noise_sd " << sd);
    last = mean_err;
  }
}

TEST_CASE("cohort directories round-trip") {
  fixtures::TempDir dir;
  CohortConfig cfg;
  cfg.cine.frames = 12;
  cfg.cine.height = cfg.cine.width = 16;
  cfg.profiles[3].onset_mean_weeks = 70.0;
  const Dataset ds = generate_cohort(2, 2, cfg, 3);
  write_cohort(ds, cfg, dir.path());
  const Cohort back = load_cohort(dir.path());
  REQUIRE(back.records.size() == ds.size());
  CHECK(back.config.cine.frames == 12);
  CHECK(back.config.profiles[3].onset_mean_weeks == 70.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const StudyRecord& r = back.records[i];
    CHECK(r.video_id == ds[i].video_id);
    CHECK(r.animal_id == ds[i].animal_id);
    CHECK(r.group == ds[i].group);
    CHECK(r.acquisition_age_weeks == ds[i].acquisition_age_weeks);
    CHECK(r.onset_age_weeks == ds[i].onset_age_weeks);
    CHECK(r.noise_seed == ds[i].noise_seed);
    CHECK(r.video_path.is_absolute());
    const VideoSequence on_disk = load_video(r.video_path);
    const VideoSequence again = render_record(r, back.config.cine);
    for (int k = 0; k < 12; ++k) CHECK(on_disk.frames[k].pixels == again.frames[k].pixels);
  }
  CHECK_THROWS_AS(load_cohort(dir / "nowhere"), DataError);
}

TEST_CASE("profile JSON round-trip and ordering") {
  const auto p = default_group_profiles();
  const auto back = profiles_from_json(profiles_to_json(p));
  for (int g = 0; g < kNumClasses; ++g) {
    CHECK(back[g].label == p[g].label);
    CHECK(back[g].modes.size() == p[g].modes.size());
    CHECK(back[g].modes[0].frequency_hz == p[g].modes[0].frequency_hz);
    CHECK(back[g].growth_per_onset_week == p[g].growth_per_onset_week);
  }
  auto j = profiles_to_json(p);
  std::swap(j[0], j[1]);
  CHECK_THROWS_AS(profiles_from_json(j), ConfigError);
  j = profiles_to_json(p);
  j.erase(3);
  CHECK_THROWS_AS(profiles_from_json(j), ConfigError);
  j = profiles_to_json(p);
  j[2].erase("modes");
  CHECK_THROWS_AS(profiles_from_json(j), ConfigError);
}
