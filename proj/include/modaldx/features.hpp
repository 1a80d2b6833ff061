#pragma once

#include <filesystem>
#include <vector>

#include "modaldx/common.hpp"
#include "modaldx/hodmd.hpp"

namespace modaldx {

struct FeatureConfig {
  int m_modes = 8;
  int patch_h = 64;
  int patch_w = 64;
  // Phase is undefined where the mode has (almost) no support; pixels whose magnitude is
  // below phase_floor * max|u| get phase 0.
  double phase_floor = 1e-2;
};

void validate(const FeatureConfig& cfg);

inline constexpr int kImageChannels = 2;  // magnitude, phase
inline constexpr int kModeScalars = 3;    // a/a_max, omega (rad/s), delta (1/s)

/// Fixed-shape encoding of a ModeSet: one slot per conjugate pair (omega >= 0 member).
struct FeatureTensor {
  int m_modes = 0;
  int height = 0;
  int width = 0;
  std::vector<double> mode_images;  // m_modes x 2 x height x width, row-major
  Matrix mode_scalars;              // m_modes x 3
  std::vector<bool> validity_mask;  // false for padded slots

  FeatureTensor() = default;
  FeatureTensor(int m, int h, int w);

  double& pixel(int slot, int channel, int r, int c) {
    return mode_images[((static_cast<std::size_t>(slot) * kImageChannels + channel) * height + r) * width + c];
  }
  double pixel(int slot, int channel, int r, int c) const {
    return mode_images[((static_cast<std::size_t>(slot) * kImageChannels + channel) * height + r) * width + c];
  }
  int valid_slots() const;
};

/// Rotates u so its largest-magnitude entry (lowest index on ties) is real positive.
CVector fix_gauge(const CVector& u);

FeatureTensor modes_to_features(const ModeSet& mode_set, const FeatureConfig& cfg);

inline constexpr const char* kFeatureFormat = "MODALDX-FEAT-1";

void save_features(const FeatureTensor& x, const std::filesystem::path& path);
FeatureTensor load_features(const std::filesystem::path& path);

}  // namespace modaldx
