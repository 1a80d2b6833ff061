#include "modaldx/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace modaldx {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

json mode_to_json(const GroundTruthMode& m) {
  return {{"center_row", m.center_row},   {"center_col", m.center_col},
          {"sigma_row", m.sigma_row},     {"sigma_col", m.sigma_col},
          {"correlation", m.correlation}, {"amplitude", m.amplitude},
          {"frequency_rad_s", m.frequency_rad_s}, {"growth_rate_per_s", m.growth_rate_per_s},
          {"phase", m.phase}};
}

GroundTruthMode mode_from_json(const json& j) {
  GroundTruthMode m;
  m.center_row = j.at("center_row").get<double>();
  m.center_col = j.at("center_col").get<double>();
  m.sigma_row = j.at("sigma_row").get<double>();
  m.sigma_col = j.at("sigma_col").get<double>();
  m.correlation = j.at("correlation").get<double>();
  m.amplitude = j.at("amplitude").get<double>();
  m.frequency_rad_s = j.at("frequency_rad_s").get<double>();
  m.growth_rate_per_s = j.at("growth_rate_per_s").get<double>();
  m.phase = j.at("phase").get<double>();
  return m;
}

json profile_to_json(const GroupProfile& p) {
  json modes = json::array();
  for (const auto& t : p.modes)
    modes.push_back({{"center_row_frac", t.center_row_frac}, {"center_col_frac", t.center_col_frac},
                     {"sigma_frac", t.sigma_frac}, {"amplitude", t.amplitude},
                     {"frequency_hz", t.frequency_hz}, {"progression", t.progression}});
  return {{"label", std::string(to_string(p.label))},
          {"onset_mean_weeks", p.onset_mean_weeks},
          {"onset_sd_weeks", p.onset_sd_weeks},
          {"modes", modes},
          {"frequency_jitter_hz", p.frequency_jitter_hz},
          {"amplitude_jitter", p.amplitude_jitter},
          {"growth_per_onset_week", p.growth_per_onset_week},
          {"growth_reference_weeks", p.growth_reference_weeks},
          {"growth_jitter_per_s", p.growth_jitter_per_s}};
}

GroupProfile profile_from_json(const json& j) {
  GroupProfile p;
  p.label = parse_heart_state(j.at("label").get<std::string>());
  p.onset_mean_weeks = j.at("onset_mean_weeks").get<double>();
  p.onset_sd_weeks = j.at("onset_sd_weeks").get<double>();
  for (const auto& t : j.at("modes")) {
    ModeTemplate m;
    m.center_row_frac = t.at("center_row_frac").get<double>();
    m.center_col_frac = t.at("center_col_frac").get<double>();
    m.sigma_frac = t.at("sigma_frac").get<double>();
    m.amplitude = t.at("amplitude").get<double>();
    m.frequency_hz = t.at("frequency_hz").get<double>();
    m.progression = t.at("progression").get<bool>();
    p.modes.push_back(m);
  }
  p.frequency_jitter_hz = j.at("frequency_jitter_hz").get<double>();
  p.amplitude_jitter = j.at("amplitude_jitter").get<double>();
  p.growth_per_onset_week = j.at("growth_per_onset_week").get<double>();
  p.growth_reference_weeks = j.at("growth_reference_weeks").get<double>();
  p.growth_jitter_per_s = j.at("growth_jitter_per_s").get<double>();
  return p;
}

json cine_to_json(const CineConfig& c) {
  return {{"height", c.height}, {"width", c.width}, {"frames", c.frames},
          {"dt_s", c.dt_s},     {"noise_sd", c.noise_sd}, {"offset", c.offset}};
}

CineConfig cine_from_json(const json& j) {
  CineConfig c;
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.frames = j.at("frames").get<int>();
  c.dt_s = j.at("dt_s").get<double>();
  c.noise_sd = j.at("noise_sd").get<double>();
  c.offset = j.at("offset").get<double>();
  return c;
}

}  // namespace

json profiles_to_json(const std::array<GroupProfile, kNumClasses>& profiles) {
  json arr = json::array();
  for (const auto& p : profiles) arr.push_back(profile_to_json(p));
  return arr;
}

std::array<GroupProfile, kNumClasses> profiles_from_json(const json& j) {
  if (!j.is_array() || j.size() != kNumClasses) throw ConfigError("profiles must be an array of four group profiles");
  std::array<GroupProfile, kNumClasses> out;
  try {
    for (int g = 0; g < kNumClasses; ++g) {
      out[g] = profile_from_json(j[g]);
      if (out[g].label != heart_state_from_index(g)) throw ConfigError("profiles must be listed in CTL, HG, OB, SAH order");
      validate(out[g]);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad profile: ") + e.what());
  }
  return out;
}

Vector gaussian_pattern(const GroundTruthMode& mode, int height, int width) {
  if (!(mode.sigma_row > 0.0 && mode.sigma_col > 0.0) || !(std::abs(mode.correlation) < 1.0))
    throw ConfigError("Gaussian pattern needs positive widths and |correlation| < 1");
  Vector p(static_cast<Eigen::Index>(height) * width);
  const double rho = mode.correlation;
  const double scale = -0.5 / (1.0 - rho * rho);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double x = (r - mode.center_row) / mode.sigma_row;
      const double y = (c - mode.center_col) / mode.sigma_col;
      p(r * width + c) = std::exp(scale * (x * x - 2.0 * rho * x * y + y * y));
    }
  }
  const double norm = p.norm();
  if (!(norm > 0.0)) throw ConfigError("Gaussian pattern vanishes on the grid");
  return p / norm;
}

void validate(const CineConfig& cfg) {
  if (cfg.height < 8 || cfg.width < 8) throw ConfigError("cine frames must be at least 8x8");
  if (cfg.frames < 2) throw ConfigError("cine needs at least 2 frames");
  if (!(cfg.dt_s > 0.0)) throw ConfigError("dt_s must be > 0");
  if (!(cfg.noise_sd >= 0.0)) throw ConfigError("noise_sd must be >= 0");
  if (!std::isfinite(cfg.offset)) throw ConfigError("offset must be finite");
}

double age_effect(double acquisition_age_weeks, double onset_age_weeks) {
  const double frac = std::clamp(acquisition_age_weeks / onset_age_weeks, 0.0, 1.5);
  return 0.4 + 0.6 * frac / 1.5;
}

std::array<GroupProfile, kNumClasses> default_group_profiles() {
  // Group base rates 1 Hz apart with +-0.1 Hz jitter; the wall-motion blob moves with the group.
  const std::array<double, kNumClasses> base_hz = {5.0, 6.0, 7.0, 8.0};
  const std::array<double, kNumClasses> progression_hz = {1.5, 2.0, 2.5, 3.0};
  const std::array<double, kNumClasses> mean = {103.8, 44.3, 103.33, 85.0};
  const std::array<double, kNumClasses> sd = {22.7, 6.7, 17.91, 15.0};
  std::array<GroupProfile, kNumClasses> out;
  for (int g = 0; g < kNumClasses; ++g) {
    GroupProfile& p = out[g];
    p.label = heart_state_from_index(g);
    p.onset_mean_weeks = mean[g];
    p.onset_sd_weeks = sd[g];
    p.modes = {
        {0.3, 0.2 + 0.2 * g, 0.09, 1200.0, base_hz[g], false},  // wall motion
        {0.75, 0.25, 0.09, 600.0, 2.0 * base_hz[g], false},      // second harmonic
        {0.75, 0.75, 0.09, 480.0, progression_hz[g], true},      // remodelling
    };
  }
  return out;
}

void validate(const GroupProfile& profile) {
  if (!(profile.onset_sd_weeks > 0.0)) throw ConfigError("onset_sd_weeks must be > 0");
  if (!(profile.onset_mean_weeks > 0.0)) throw ConfigError("onset_mean_weeks must be > 0");
  if (!(profile.frequency_jitter_hz >= 0.0) || !(profile.amplitude_jitter >= 0.0 && profile.amplitude_jitter < 1.0))
    throw ConfigError("jitter parameters out of range");
  for (const auto& t : profile.modes)
    if (!(t.amplitude > 0.0) || !(t.sigma_frac > 0.0) || t.frequency_hz < 0.0)
      throw ConfigError("mode template parameters out of range");
}

Matrix render_field(const std::vector<GroundTruthMode>& modes, double offset, const CineConfig& cfg) {
  validate(cfg);
  if (cfg.frames < 2 * static_cast<int>(modes.size()) + 2) throw ConfigError("need K >= 2*(modes)+2 frames");
  const Eigen::Index j = static_cast<Eigen::Index>(cfg.height) * cfg.width;
  Matrix field = Matrix::Constant(j, cfg.frames, offset);
  for (const auto& m : modes) {
    if (!(m.amplitude > 0.0)) throw ConfigError("mode amplitude must be > 0");
    const Vector p = gaussian_pattern(m, cfg.height, cfg.width);
    for (int k = 0; k < cfg.frames; ++k) {
      const double t = k * cfg.dt_s;
      field.col(k) += (m.amplitude * std::exp(m.growth_rate_per_s * t) * std::cos(m.frequency_rad_s * t + m.phase)) * p;
    }
  }
  return field;
}

VideoSequence quantize_field(const Matrix& field, const CineConfig& cfg, std::uint64_t noise_seed, std::string source_id) {
  validate(cfg);
  if (field.rows() != static_cast<Eigen::Index>(cfg.height) * cfg.width || field.cols() != cfg.frames)
    throw ConfigError("field shape does not match the cine config");
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  VideoSequence video;
  video.frame_interval_s = cfg.dt_s;
  video.source_id = std::move(source_id);
  video.frames.resize(cfg.frames);
  for (int k = 0; k < cfg.frames; ++k) {
    Frame& f = video.frames[k];
    f.height = cfg.height;
    f.width = cfg.width;
    f.pixels.resize(static_cast<std::size_t>(field.rows()));
    for (Eigen::Index p = 0; p < field.rows(); ++p) {
      double v = field(p, k);
      if (cfg.noise_sd > 0.0) v += cfg.noise_sd * noise(rng);
      f.pixels[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }
  return video;
}

std::vector<GroundTruthMode> draw_modes(const GroupProfile& profile, double acquisition_age_weeks, double onset_age_weeks,
                                        const CineConfig& cfg, std::uint64_t seed) {
  validate(profile);
  if (!(acquisition_age_weeks >= 0.0) || !(onset_age_weeks > 0.0)) throw ConfigError("ages out of range");
  std::mt19937_64 rng(seed);
  std::vector<GroundTruthMode> modes;
  for (const auto& t : profile.modes) {
    GroundTruthMode m;
    m.center_row = t.center_row_frac * (cfg.height - 1);
    m.center_col = t.center_col_frac * (cfg.width - 1);
    m.sigma_row = t.sigma_frac * cfg.height;
    m.sigma_col = t.sigma_frac * cfg.width;
    m.amplitude = t.amplitude * (1.0 + uniform(rng, -profile.amplitude_jitter, profile.amplitude_jitter));
    m.frequency_rad_s = kTwoPi * (t.frequency_hz + uniform(rng, -profile.frequency_jitter_hz, profile.frequency_jitter_hz));
    m.phase = uniform(rng, 0.0, kTwoPi);
    if (t.progression) {
      m.amplitude *= age_effect(acquisition_age_weeks, onset_age_weeks);
      m.growth_rate_per_s = profile.growth_per_onset_week * (onset_age_weeks - profile.growth_reference_weeks) +
                            uniform(rng, -profile.growth_jitter_per_s, profile.growth_jitter_per_s);
    }
    modes.push_back(m);
  }
  return modes;
}

SyntheticCine generate_cine(const std::vector<GroundTruthMode>& modes, double offset, const CineConfig& cfg,
                            std::uint64_t seed) {
  SyntheticCine out;
  out.modes = modes;
  out.offset = offset;
  out.video = quantize_field(render_field(modes, offset, cfg), cfg, seed, "synthetic");
  return out;
}

SyntheticCine generate_cine(const GroupProfile& profile, double acquisition_age_weeks, double onset_age_weeks,
                            const CineConfig& cfg, std::uint64_t seed) {
  auto modes = draw_modes(profile, acquisition_age_weeks, onset_age_weeks, cfg, mix_seed(seed, 0));
  return generate_cine(modes, cfg.offset, cfg, mix_seed(seed, 1));
}

std::vector<ExpectedMode> expected_spectrum(const std::vector<GroundTruthMode>& modes, double offset,
                                            const CineConfig& cfg) {
  std::vector<ExpectedMode> out;
  auto push = [&](double growth, double freq, double amp) {
    ExpectedMode e;
    e.growth_rate_per_s = growth;
    e.frequency_rad_s = freq;
    e.amplitude = amp;
    e.eigenvalue = std::exp(std::complex<double>(growth, freq) * cfg.dt_s);
    out.push_back(e);
  };
  if (offset != 0.0) push(0.0, 0.0, std::abs(offset) * std::sqrt(static_cast<double>(cfg.height) * cfg.width));
  for (const auto& m : modes) {
    if (m.frequency_rad_s == 0.0) {
      push(m.growth_rate_per_s, 0.0, std::abs(m.amplitude * std::cos(m.phase)));
    } else {
      push(m.growth_rate_per_s, m.frequency_rad_s, 0.5 * m.amplitude);
      push(m.growth_rate_per_s, -m.frequency_rad_s, 0.5 * m.amplitude);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const ExpectedMode& a, const ExpectedMode& b) {
    if (a.amplitude != b.amplitude) return a.amplitude > b.amplitude;
    return a.frequency_rad_s < b.frequency_rad_s;
  });
  return out;
}

Dataset generate_cohort(int n_animals_per_group, int scans_per_animal, const CohortConfig& cfg, std::uint64_t seed) {
  if (n_animals_per_group < 1 || scans_per_animal < 1) throw ConfigError("animal and scan counts must be positive");
  validate(cfg.cine);
  for (const auto& p : cfg.profiles) validate(p);

  Dataset out;
  out.reserve(static_cast<std::size_t>(kNumClasses) * n_animals_per_group * scans_per_animal);
  for (int g = 0; g < kNumClasses; ++g) {
    const GroupProfile& profile = cfg.profiles[g];
    for (int a = 0; a < n_animals_per_group; ++a) {
      const std::uint64_t animal_seed = mix_seed(seed, static_cast<std::uint64_t>(g) * 1000003ULL + a);
      std::mt19937_64 rng(animal_seed);
      std::normal_distribution<double> onset_dist(profile.onset_mean_weeks, profile.onset_sd_weeks);
      double onset = onset_dist(rng);
      while (onset < kMinOnsetWeeks) onset = onset_dist(rng);

      char animal_id[32];
      std::snprintf(animal_id, sizeof animal_id, "%s-%03d", std::string(to_string(profile.label)).c_str(), a);
      for (int s = 0; s < scans_per_animal; ++s) {
        const double frac = scans_per_animal == 1 ? 0.85 : 0.4 + 0.9 * s / (scans_per_animal - 1);
        const double age = onset * frac * (1.0 + uniform(rng, -0.05, 0.05));
        const std::uint64_t scan_seed = mix_seed(animal_seed, static_cast<std::uint64_t>(s) + 1);

        StudyRecord r;
        r.animal_id = animal_id;
        r.video_id = std::string(animal_id) + "-s" + std::to_string(s);
        r.group = profile.label;
        r.acquisition_age_weeks = age;
        r.onset_age_weeks = onset;
        r.ground_truth = draw_modes(profile, age, onset, cfg.cine, mix_seed(scan_seed, 0));
        r.offset = cfg.cine.offset;
        r.noise_seed = mix_seed(scan_seed, 1);
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

VideoSequence render_record(const StudyRecord& record, const CineConfig& cfg) {
  return quantize_field(render_field(record.ground_truth, record.offset, cfg), cfg, record.noise_seed, record.video_id);
}

void write_cohort(const Dataset& dataset, const CohortConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir / "videos");
  json records = json::array();
  for (const auto& r : dataset) {
    const fs::path rel = fs::path("videos") / r.video_id;
    save_video(render_record(r, cfg.cine), dir / rel);
    json modes = json::array();
    for (const auto& m : r.ground_truth) modes.push_back(mode_to_json(m));
    records.push_back({{"video_id", r.video_id},
                       {"animal_id", r.animal_id},
                       {"group", std::string(to_string(r.group))},
                       {"acquisition_age_weeks", r.acquisition_age_weeks},
                       {"onset_age_weeks", r.onset_age_weeks},
                       {"video_dir", rel.generic_string()},
                       {"noise_seed", r.noise_seed},
                       {"ground_truth", {{"offset", r.offset}, {"modes", modes}}}});
  }
  json profiles = json::array();
  for (const auto& p : cfg.profiles) profiles.push_back(profile_to_json(p));
  json doc = {{"format", kCohortFormat},
              {"cine", cine_to_json(cfg.cine)},
              {"profiles", profiles},
              {"records", records}};
  std::ofstream out(dir / "cohort.json");
  out << doc.dump(1) << '\n';
  if (!out) throw DataError("cannot write " + (dir / "cohort.json").string());
}

Cohort load_cohort(const fs::path& dir) {
  const fs::path path = dir / "cohort.json";
  std::ifstream in(path);
  if (!in) throw DataError("missing cohort manifest: " + path.string());
  Cohort c;
  try {
    const json doc = json::parse(in);
    if (doc.at("format").get<std::string>() != kCohortFormat) throw DataError("unexpected cohort format in " + path.string());
    c.config.cine = cine_from_json(doc.at("cine"));
    const auto& profiles = doc.at("profiles");
    if (profiles.size() != kNumClasses) throw DataError("cohort manifest must list four group profiles");
    for (int g = 0; g < kNumClasses; ++g) c.config.profiles[g] = profile_from_json(profiles[g]);
    for (const auto& j : doc.at("records")) {
      StudyRecord r;
      r.video_id = j.at("video_id").get<std::string>();
      r.animal_id = j.at("animal_id").get<std::string>();
      r.group = parse_heart_state(j.at("group").get<std::string>());
      r.acquisition_age_weeks = j.at("acquisition_age_weeks").get<double>();
      r.onset_age_weeks = j.at("onset_age_weeks").get<double>();
      r.video_path = fs::absolute(dir / j.at("video_dir").get<std::string>());
      r.noise_seed = j.value("noise_seed", std::uint64_t{0});
      if (j.contains("ground_truth")) {
        r.offset = j["ground_truth"].at("offset").get<double>();
        for (const auto& m : j["ground_truth"].at("modes")) r.ground_truth.push_back(mode_from_json(m));
      }
      c.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw DataError("malformed cohort manifest " + path.string() + ": " + e.what());
  }
  return c;
}

}  // namespace modaldx
