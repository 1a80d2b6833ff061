#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modaldx/common.hpp"
#include "modaldx/ingest.hpp"

namespace modaldx {

/// A real damped oscillation over a 2-D Gaussian blob:
/// amplitude * pattern * exp(growth * t) * cos(frequency * t + phase).
struct GroundTruthMode {
  double center_row = 0.0;  // pixels
  double center_col = 0.0;
  double sigma_row = 1.0;   // pixels
  double sigma_col = 1.0;
  double correlation = 0.0; // in (-1, 1)
  double amplitude = 0.0;
  double frequency_rad_s = 0.0;
  double growth_rate_per_s = 0.0;
  double phase = 0.0;
};

/// Unit-norm flattened (row-major) Gaussian pattern.
Vector gaussian_pattern(const GroundTruthMode& mode, int height, int width);

struct CineConfig {
  int height = 64;
  int width = 64;
  int frames = 100;
  double dt_s = 0.01;
  double noise_sd = 0.5;  // intensity units, before clipping and 8-bit rounding
  double offset = 128.0;  // uniform background intensity
};

void validate(const CineConfig& cfg);

/// Mode template in relative units; instances are jittered per scan.
struct ModeTemplate {
  double center_row_frac = 0.5;
  double center_col_frac = 0.5;
  double sigma_frac = 0.09;
  double amplitude = 0.0;
  double frequency_hz = 0.0;
  bool progression = false;  // amplitude follows the age effect, growth rate encodes onset
};

struct GroupProfile {
  HeartState label = HeartState::CTL;
  double onset_mean_weeks = 0.0;
  double onset_sd_weeks = 1.0;
  std::vector<ModeTemplate> modes;
  double frequency_jitter_hz = 0.1;  // uniform half-width
  double amplitude_jitter = 0.05;    // uniform relative half-width
  double growth_per_onset_week = 0.01;  // progression growth rate slope (1/s per week)
  double growth_reference_weeks = 80.0;
  double growth_jitter_per_s = 0.01;
};

/// Monotone amplitude multiplier of progression modes, in [0.4, 1].
double age_effect(double acquisition_age_weeks, double onset_age_weeks);

/// Default CTL, HG, OB, SAH profiles. Onset (mean, sd) in weeks: CTL (103.8, 22.7),
/// HG (44.3, 6.7), OB (103.33, 17.91), SAH (85, 15); the SAH values are a configuration
/// default with no measured counterpart.
std::array<GroupProfile, kNumClasses> default_group_profiles();

void validate(const GroupProfile& profile);

/// The "profiles" array of a cohort manifest.
nlohmann::json profiles_to_json(const std::array<GroupProfile, kNumClasses>& profiles);
std::array<GroupProfile, kNumClasses> profiles_from_json(const nlohmann::json& j);

struct SyntheticCine {
  VideoSequence video;
  std::vector<GroundTruthMode> modes;
  double offset = 0.0;
};

/// Noise-free, unclipped intensities (J x K) of offset + sum of modes.
Matrix render_field(const std::vector<GroundTruthMode>& modes, double offset, const CineConfig& cfg);

/// Clips to [0,255] after adding seeded Gaussian noise and rounds to 8 bits.
VideoSequence quantize_field(const Matrix& field, const CineConfig& cfg, std::uint64_t noise_seed, std::string source_id);

/// Draws the scan's modes from the profile (jitter, age effect, onset-coded growth).
std::vector<GroundTruthMode> draw_modes(const GroupProfile& profile, double acquisition_age_weeks, double onset_age_weeks,
                                        const CineConfig& cfg, std::uint64_t seed);

SyntheticCine generate_cine(const GroupProfile& profile, double acquisition_age_weeks, double onset_age_weeks,
                            const CineConfig& cfg, std::uint64_t seed);

/// Modes rendered directly (no profile), e.g. for recovery tests.
SyntheticCine generate_cine(const std::vector<GroundTruthMode>& modes, double offset, const CineConfig& cfg,
                            std::uint64_t seed);

/// A DMD eigenvalue/amplitude pair implied by ground-truth modes.
struct ExpectedMode {
  std::complex<double> eigenvalue;
  double amplitude = 0.0;
  double frequency_rad_s = 0.0;
  double growth_rate_per_s = 0.0;
};

/// DMD spectrum of render_field: a pair (a/2 each) per oscillating mode, |a cos(phase)|
/// per non-oscillating mode, offset * sqrt(J) for a nonzero offset.
std::vector<ExpectedMode> expected_spectrum(const std::vector<GroundTruthMode>& modes, double offset,
                                            const CineConfig& cfg);

struct StudyRecord {
  std::string video_id;
  std::string animal_id;
  HeartState group = HeartState::CTL;
  double acquisition_age_weeks = 0.0;
  double onset_age_weeks = 0.0;
  std::filesystem::path video_path;  // empty until written / when loaded from disk it is absolute
  std::vector<GroundTruthMode> ground_truth;
  double offset = 0.0;
  std::uint64_t noise_seed = 0;
};

using Dataset = std::vector<StudyRecord>;

struct CohortConfig {
  CineConfig cine;
  std::array<GroupProfile, kNumClasses> profiles = default_group_profiles();
};

/// Draws `n_animals_per_group` animals per group with `scans_per_animal` scans each.
/// Onset ages ~ Normal(mean, sd) truncated below at 4 weeks; scan ages follow a per-animal
/// schedule from 0.4x to 1.3x the onset age.
Dataset generate_cohort(int n_animals_per_group, int scans_per_animal, const CohortConfig& cfg, std::uint64_t seed);

inline constexpr double kMinOnsetWeeks = 4.0;

/// Renders the record's video (deterministic in the record's seeds).
VideoSequence render_record(const StudyRecord& record, const CineConfig& cfg);

inline constexpr const char* kCohortFormat = "MODALDX-COHORT-1";

/// One ingest-format directory per video under dir/videos plus dir/cohort.json.
void write_cohort(const Dataset& dataset, const CohortConfig& cfg, const std::filesystem::path& dir);

struct Cohort {
  Dataset records;
  CohortConfig config;
};

Cohort load_cohort(const std::filesystem::path& dir);

}  // namespace modaldx
