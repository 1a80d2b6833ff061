#include <cmath>

#include "modaldx/container.hpp"
#include "modaldx/hodmd.hpp"

using nlohmann::json;

namespace modaldx {

void save_mode_set(const ModeSet& mode_set, const std::filesystem::path& path) {
  const auto n = static_cast<std::int64_t>(mode_set.modes.size());
  const auto j = static_cast<std::int64_t>(mode_set.pixels());

  NamedArray shapes{"spatial_shapes", {n, j, 2}, {}};
  NamedArray amplitudes{"amplitudes", {n}, {}};
  NamedArray eigenvalues{"eigenvalues", {n, 2}, {}};
  shapes.values.reserve(static_cast<std::size_t>(n * j * 2));
  for (const auto& m : mode_set.modes) {
    for (Eigen::Index p = 0; p < m.spatial_shape.size(); ++p) {
      shapes.values.push_back(m.spatial_shape(p).real());
      shapes.values.push_back(m.spatial_shape(p).imag());
    }
    amplitudes.values.push_back(m.amplitude);
    eigenvalues.values.push_back(m.eigenvalue.real());
    eigenvalues.values.push_back(m.eigenvalue.imag());
  }

  json header = {
      {"config",
       {{"d", mode_set.config.delay},
        {"eps_svd", mode_set.config.eps_svd},
        {"eps_amp", mode_set.config.eps_amp},
        {"dt_s", mode_set.config.dt_s}}},
      {"K", mode_set.k_snapshots},
      {"N", n},
      {"J", j},
      {"height", mode_set.height},
      {"width", mode_set.width},
      {"spatial_complexity", mode_set.spatial_complexity},
      {"rrmse", std::isfinite(mode_set.reconstruction_rrmse) ? json(mode_set.reconstruction_rrmse) : json(nullptr)},
      {"amplitude_condition",
       std::isfinite(mode_set.amplitude_condition) ? json(mode_set.amplitude_condition) : json(nullptr)},
      {"warnings", mode_set.ill_conditioned ? json::array({"ill_conditioned_amplitudes"}) : json::array()},
  };
  write_container(path, kDecompositionFormat, header, {shapes, amplitudes, eigenvalues});
}

ModeSet load_mode_set(const std::filesystem::path& path) {
  const Container c = read_container(path, kDecompositionFormat);
  ModeSet ms;
  try {
    const auto& cfg = c.header.at("config");
    ms.config.delay = cfg.at("d").get<int>();
    ms.config.eps_svd = cfg.at("eps_svd").get<double>();
    ms.config.eps_amp = cfg.at("eps_amp").get<double>();
    ms.config.dt_s = cfg.at("dt_s").get<double>();
    ms.k_snapshots = c.header.at("K").get<int>();
    ms.height = c.header.at("height").get<int>();
    ms.width = c.header.at("width").get<int>();
    ms.spatial_complexity = c.header.at("spatial_complexity").get<int>();
    const auto& rr = c.header.at("rrmse");
    ms.reconstruction_rrmse = rr.is_null() ? std::nan("") : rr.get<double>();
    const auto& cond = c.header.at("amplitude_condition");
    ms.amplitude_condition = cond.is_null() ? INFINITY : cond.get<double>();
    for (const auto& w : c.header.at("warnings"))
      if (w == "ill_conditioned_amplitudes") ms.ill_conditioned = true;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": bad decomposition header: " + e.what());
  }

  const auto& shapes = c.array("spatial_shapes");
  const auto& amps = c.array("amplitudes");
  const auto& eigs = c.array("eigenvalues");
  if (shapes.shape.size() != 3 || amps.shape.size() != 1 || eigs.shape.size() != 2)
    throw DataError(path.string() + ": bad decomposition array ranks");
  const auto n = amps.shape[0];
  const auto j = shapes.shape[1];
  if (shapes.shape[0] != n || eigs.shape[0] != n) throw DataError(path.string() + ": inconsistent mode counts");
  for (std::int64_t m = 0; m < n; ++m) {
    CVector u(j);
    for (std::int64_t p = 0; p < j; ++p)
      u(p) = {shapes.values[(m * j + p) * 2], shapes.values[(m * j + p) * 2 + 1]};
    const std::complex<double> mu(eigs.values[m * 2], eigs.values[m * 2 + 1]);
    ms.modes.push_back(make_mode(mu, ms.config.dt_s, std::move(u), amps.values[m]));
  }
  return ms;
}

}  // namespace modaldx
