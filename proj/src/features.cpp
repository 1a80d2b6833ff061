#include "modaldx/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "modaldx/container.hpp"

namespace modaldx {

FeatureTensor::FeatureTensor(int m, int h, int w)
    : m_modes(m),
      height(h),
      width(w),
      mode_images(static_cast<std::size_t>(m) * kImageChannels * h * w, 0.0),
      mode_scalars(Matrix::Zero(m, kModeScalars)),
      validity_mask(static_cast<std::size_t>(m), false) {}

int FeatureTensor::valid_slots() const {
  return static_cast<int>(std::count(validity_mask.begin(), validity_mask.end(), true));
}

void validate(const FeatureConfig& cfg) {
  if (cfg.m_modes < 1) throw ConfigError("m_modes must be >= 1");
  if (cfg.patch_h < 1 || cfg.patch_w < 1) throw ConfigError("feature grid must be positive");
  if (!(cfg.phase_floor >= 0.0 && cfg.phase_floor < 1.0)) throw ConfigError("phase_floor must lie in [0,1)");
}

CVector fix_gauge(const CVector& u) {
  Eigen::Index best = 0;
  double best_mag = -1.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double mag = std::abs(u(i));
    if (mag > best_mag) {
      best_mag = mag;
      best = i;
    }
  }
  if (!(best_mag > 0.0)) return u;
  return u * std::polar(1.0, -std::arg(u(best)));
}

FeatureTensor modes_to_features(const ModeSet& mode_set, const FeatureConfig& cfg) {
  validate(cfg);
  if (mode_set.modes.empty()) throw ConfigError("modes_to_features needs a nonempty ModeSet");
  const int h = mode_set.height;
  const int w = mode_set.width;
  if (h <= 0 || w <= 0 || static_cast<Eigen::Index>(h) * w != mode_set.modes.front().spatial_shape.size())
    throw ConfigError("ModeSet is missing spatial shape metadata");

  std::vector<DmdMode> modes = mode_set.modes;
  sort_modes(modes);

  FeatureTensor x(cfg.m_modes, cfg.patch_h, cfg.patch_w);
  const double a_max = modes.front().amplitude;

  int slot = 0;
  for (std::size_t i = 0; i < modes.size() && slot < cfg.m_modes; ++i) {
    const DmdMode& m = modes[i];
    if (m.frequency_rad_s < 0.0 && conjugate_partner(modes, i)) continue;

    const CVector u = fix_gauge(m.spatial_shape);
    Matrix mag(h, w), re(h, w), im(h, w);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const std::complex<double> z = u(r * w + c);
        mag(r, c) = std::abs(z);
        re(r, c) = z.real();
        im(r, c) = z.imag();
      }
    }
    const Matrix mag_s = resample_grid(mag, cfg.patch_h, cfg.patch_w);
    const Matrix re_s = resample_grid(re, cfg.patch_h, cfg.patch_w);
    const Matrix im_s = resample_grid(im, cfg.patch_h, cfg.patch_w);
    const double floor = cfg.phase_floor * mag_s.maxCoeff();
    for (int r = 0; r < cfg.patch_h; ++r) {
      for (int c = 0; c < cfg.patch_w; ++c) {
        x.pixel(slot, 0, r, c) = mag_s(r, c);
        double phase = 0.0;
        if (mag_s(r, c) >= floor && mag_s(r, c) > 0.0) {
          phase = std::atan2(im_s(r, c), re_s(r, c));
          if (phase <= -std::numbers::pi) phase = std::numbers::pi;
        }
        x.pixel(slot, 1, r, c) = phase;
      }
    }
    x.mode_scalars(slot, 0) = a_max > 0.0 ? m.amplitude / a_max : 0.0;
    x.mode_scalars(slot, 1) = m.frequency_rad_s;
    x.mode_scalars(slot, 2) = m.growth_rate_per_s;
    x.validity_mask[slot] = true;
    ++slot;
  }
  return x;
}

void save_features(const FeatureTensor& x, const std::filesystem::path& path) {
  NamedArray images{"mode_images", {x.m_modes, kImageChannels, x.height, x.width}, x.mode_images};
  NamedArray scalars{"mode_scalars", {x.m_modes, kModeScalars}, {}};
  NamedArray mask{"validity_mask", {x.m_modes}, {}};
  for (int s = 0; s < x.m_modes; ++s) {
    for (int j = 0; j < kModeScalars; ++j) scalars.values.push_back(x.mode_scalars(s, j));
    mask.values.push_back(x.validity_mask[s] ? 1.0 : 0.0);
  }
  nlohmann::json header = {{"m_modes", x.m_modes},
                           {"height", x.height},
                           {"width", x.width},
                           {"channels", {"magnitude", "phase"}},
                           {"scalars", {"amplitude_ratio", "frequency_rad_s", "growth_rate_per_s"}}};
  write_container(path, kFeatureFormat, header, {images, scalars, mask});
}

FeatureTensor load_features(const std::filesystem::path& path) {
  const Container c = read_container(path, kFeatureFormat);
  int m = 0, h = 0, w = 0;
  try {
    m = c.header.at("m_modes").get<int>();
    h = c.header.at("height").get<int>();
    w = c.header.at("width").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad feature header: " + e.what());
  }
  if (m < 1 || h < 1 || w < 1) throw DataError(path.string() + ": bad feature dimensions");
  FeatureTensor x(m, h, w);
  const auto& images = c.array("mode_images");
  const auto& scalars = c.array("mode_scalars");
  const auto& mask = c.array("validity_mask");
  if (images.values.size() != x.mode_images.size() || scalars.values.size() != static_cast<std::size_t>(m) * kModeScalars ||
      mask.values.size() != static_cast<std::size_t>(m))
    throw DataError(path.string() + ": feature arrays do not match the header");
  x.mode_images = images.values;
  for (int s = 0; s < m; ++s) {
    for (int j = 0; j < kModeScalars; ++j) x.mode_scalars(s, j) = scalars.values[static_cast<std::size_t>(s) * kModeScalars + j];
    x.validity_mask[s] = mask.values[s] != 0.0;
  }
  return x;
}

}  // namespace modaldx
