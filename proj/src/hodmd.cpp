#include "modaldx/hodmd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace modaldx {

namespace {

constexpr double kConjugateTol = 1e-8;

int retained_rank(const Vector& sigma, double eps) {
  if (sigma.size() == 0 || !(sigma(0) > 0.0)) return 0;
  int n = 0;
  while (n < sigma.size() && sigma(n) / sigma(0) >= eps) ++n;
  return n;
}

// Thin SVD with an orthogonal reduction first when the matrix is tall.
struct ThinSvd {
  Matrix u;
  Vector sigma;
  Matrix v;
};

ThinSvd thin_svd(const Matrix& a) {
  ThinSvd out;
  if (a.rows() > a.cols()) {
    Eigen::HouseholderQR<Matrix> qr(a);
    const Eigen::Index k = a.cols();
    Matrix r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    Eigen::BDCSVD<Matrix> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    out.u = qr.householderQ() * (Matrix(a.rows(), k) << svd.matrixU(), Matrix::Zero(a.rows() - k, k)).finished();
    out.sigma = svd.singularValues();
    out.v = svd.matrixV();
  } else {
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.u = svd.matrixU();
    out.sigma = svd.singularValues();
    out.v = svd.matrixV();
  }
  return out;
}

}  // namespace

HodmdConfig default_hodmd_config(int k_snapshots, double dt_s) {
  HodmdConfig cfg;
  cfg.delay = std::max(2, static_cast<int>(std::lround(k_snapshots / 10.0)));
  cfg.delay = std::max(1, std::min(cfg.delay, k_snapshots - 1));
  cfg.dt_s = dt_s;
  return cfg;
}

void validate(const HodmdConfig& cfg, int k_snapshots) {
  if (k_snapshots < 2) throw ConfigError("HODMD needs K >= 2 snapshots");
  if (cfg.delay < 1 || cfg.delay > k_snapshots - 1)
    throw ConfigError("delay d=" + std::to_string(cfg.delay) + " out of range [1, K-1]");
  if (!(cfg.eps_svd > 0.0 && cfg.eps_svd < 1.0)) throw ConfigError("eps_svd must lie in (0,1)");
  if (!(cfg.eps_amp >= 0.0 && cfg.eps_amp < 1.0)) throw ConfigError("eps_amp must lie in [0,1)");
  if (!(cfg.dt_s > 0.0) || !std::isfinite(cfg.dt_s)) throw ConfigError("dt_s must be > 0");
}

DmdMode make_mode(std::complex<double> eigenvalue, double dt_s, CVector shape, double amplitude) {
  DmdMode m;
  m.eigenvalue = eigenvalue;
  m.growth_rate_per_s = std::log(std::abs(eigenvalue)) / dt_s;
  m.frequency_rad_s = std::arg(eigenvalue) / dt_s;
  m.spatial_shape = std::move(shape);
  m.amplitude = amplitude;
  return m;
}

SvdFactors truncated_svd(const Matrix& snapshots, double eps_svd) {
  if (snapshots.rows() < 1 || snapshots.cols() < 2) throw ConfigError("truncated_svd needs J >= 1 and K >= 2");
  if (!snapshots.allFinite()) throw DataError("snapshot matrix has non-finite entries");
  if (!(eps_svd > 0.0 && eps_svd < 1.0)) throw ConfigError("eps_svd must lie in (0,1)");
  if (snapshots.isZero(0.0)) throw DataError("zero snapshot matrix");

  const ThinSvd svd = thin_svd(snapshots);
  const int n = retained_rank(svd.sigma, eps_svd);
  if (n == 0) throw DataError("zero snapshot matrix");

  SvdFactors f;
  f.left_modes = svd.u.leftCols(n);
  f.singular_values = svd.sigma.head(n);
  f.reduced_snapshots = f.singular_values.asDiagonal() * svd.v.leftCols(n).transpose();
  return f;
}

Matrix delay_embed(const Matrix& reduced, int d) {
  const Eigen::Index n = reduced.rows();
  const Eigen::Index k = reduced.cols();
  if (d < 1 || d > k - 1) throw ConfigError("delay d=" + std::to_string(d) + " out of range [1, K-1]");
  const Eigen::Index cols = k - d + 1;
  Matrix out(d * n, cols);
  for (int block = 0; block < d; ++block) out.middleRows(block * n, n) = reduced.middleCols(block, cols);
  return out;
}

std::vector<ReducedMode> solve_reduced_operator(const Matrix& enlarged, int block_rows, double eps_svd) {
  if (enlarged.cols() < 2) throw DataError("rank collapse: enlarged matrix needs at least 2 columns");
  if (block_rows < 1 || block_rows > enlarged.rows()) throw ConfigError("block_rows out of range");

  const ThinSvd svd = thin_svd(enlarged);
  const int r = retained_rank(svd.sigma, eps_svd);
  if (r == 0) throw DataError("rank collapse: no singular value survives the second truncation");

  const Matrix basis = svd.u.leftCols(r);
  const Matrix reduced = svd.sigma.head(r).asDiagonal() * svd.v.leftCols(r).transpose();
  const Eigen::Index l = reduced.cols();

  // R = V2 * pinv(V1) is only determined on range(V1); its eigenpairs with mu != 0 are
  // those of the projection U1^T V2 W S^-1 (exact DMD), lifted back as V2 W S^-1 y.
  const Matrix v1 = reduced.leftCols(l - 1);
  const Matrix v2 = reduced.rightCols(l - 1);
  const ThinSvd s1 = thin_svd(v1);
  const double range_tol = s1.sigma(0) * std::numeric_limits<double>::epsilon() * static_cast<double>(std::max(v1.rows(), v1.cols()));
  Eigen::Index q = 0;
  while (q < s1.sigma.size() && s1.sigma(q) > range_tol) ++q;
  if (q == 0) throw DataError("rank collapse: propagator has an empty range");
  const Matrix back = v2 * s1.v.leftCols(q) * s1.sigma.head(q).cwiseInverse().asDiagonal();
  const Matrix projected = s1.u.leftCols(q).transpose() * back;

  Eigen::EigenSolver<Matrix> eig(projected, true);
  if (eig.info() != Eigen::Success) throw DataError("eigensolve of the reduced operator failed");

  std::vector<ReducedMode> modes;
  modes.reserve(r);
  const CMatrix lifted = (basis * back).cast<std::complex<double>>() * eig.eigenvectors();
  for (Eigen::Index m = 0; m < q; ++m) {
    const std::complex<double> mu = eig.eigenvalues()(m);
    if (std::abs(mu) < 1e-14) continue;  // no finite growth rate
    CVector head = lifted.col(m).head(block_rows);
    const double norm = head.norm();
    if (!(norm > 1e-14)) continue;
    modes.push_back({mu, head / norm});
  }
  if (modes.empty()) throw DataError("rank collapse: reduced operator has no usable eigenpairs");
  return modes;
}

AmplitudeSolution fit_amplitudes(const CMatrix& shapes, const CVector& eigenvalues, const Matrix& snapshots) {
  const Eigen::Index rows = shapes.rows();
  const Eigen::Index n_modes = shapes.cols();
  const Eigen::Index k_count = snapshots.cols();
  if (n_modes == 0) throw ConfigError("fit_amplitudes needs at least one mode");
  if (snapshots.rows() != rows || eigenvalues.size() != n_modes) throw ConfigError("fit_amplitudes shape mismatch");

  CMatrix system(rows * k_count, n_modes);
  CVector rhs(rows * k_count);
  CVector powers = CVector::Ones(n_modes);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    system.middleRows(k * rows, rows) = shapes * powers.asDiagonal();
    rhs.segment(k * rows, rows) = snapshots.col(k).cast<std::complex<double>>();
    powers = powers.cwiseProduct(eigenvalues);
  }

  AmplitudeSolution sol;
  Eigen::HouseholderQR<CMatrix> qr(system);
  const Eigen::Index p = std::min(system.rows(), n_modes);
  const CMatrix r = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
  const CVector qtb = (qr.householderQ().adjoint() * rhs).head(p);
  Eigen::JacobiSVD<CMatrix> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector& s = svd.singularValues();
  sol.condition = s(s.size() - 1) > 0.0 ? s(0) / s(s.size() - 1) : std::numeric_limits<double>::infinity();
  sol.ill_conditioned = !(sol.condition <= kIllConditionedLimit);

  // Pseudo-inverse solve; singular values below machine precision relative to s(0) are dropped.
  CVector utb = svd.matrixU().adjoint() * qtb;
  const double cut = s(0) * 1e-15 * static_cast<double>(std::max(system.rows(), n_modes));
  for (Eigen::Index i = 0; i < utb.size(); ++i) utb(i) = s(i) > cut ? utb(i) / s(i) : 0.0;
  sol.coefficients = svd.matrixV() * utb;
  if (p < n_modes) sol.coefficients.conservativeResize(n_modes);
  return sol;
}

std::optional<std::size_t> conjugate_partner(const std::vector<DmdMode>& modes, std::size_t i) {
  const auto& mi = modes[i];
  if (mi.eigenvalue.imag() == 0.0) return std::nullopt;
  std::optional<std::size_t> best;
  double best_err = kConjugateTol;
  for (std::size_t j = 0; j < modes.size(); ++j) {
    if (j == i || modes[j].eigenvalue.imag() == 0.0) continue;
    const double err = std::abs(modes[j].eigenvalue - std::conj(mi.eigenvalue)) / std::max(1.0, std::abs(mi.eigenvalue));
    if (err <= best_err) {
      best_err = err;
      best = j;
    }
  }
  return best;
}

void sort_modes(std::vector<DmdMode>& modes) {
  std::stable_sort(modes.begin(), modes.end(), [](const DmdMode& a, const DmdMode& b) {
    if (a.amplitude != b.amplitude) return a.amplitude > b.amplitude;
    if (a.frequency_rad_s != b.frequency_rad_s) return a.frequency_rad_s < b.frequency_rad_s;
    return a.growth_rate_per_s < b.growth_rate_per_s;
  });
}

AmplitudeFit compute_amplitudes(const std::vector<ReducedMode>& reduced, const SvdFactors& factors, double dt_s) {
  if (reduced.empty()) throw ConfigError("compute_amplitudes needs at least one mode");
  const int n = factors.rank();
  const Eigen::Index count = static_cast<Eigen::Index>(reduced.size());

  CMatrix shapes(n, count);
  CVector mus(count);
  for (Eigen::Index m = 0; m < count; ++m) {
    if (reduced[m].shape.size() != n) throw ConfigError("reduced mode dimension does not match the SVD rank");
    shapes.col(m) = reduced[m].shape;
    mus(m) = reduced[m].eigenvalue;
  }

  // U has orthonormal columns, so the fit in reduced coordinates has the same minimiser
  // as the fit against the full snapshots.
  const AmplitudeSolution sol = fit_amplitudes(shapes, mus, factors.reduced_snapshots);

  // Enforce exact conjugate symmetry: mu_j = conj(mu_i) implies b_j = conj(b_i) for real data.
  std::vector<int> partner(count, -1);
  for (Eigen::Index i = 0; i < count; ++i) {
    if (partner[i] >= 0 || mus(i).imag() == 0.0) continue;
    for (Eigen::Index j = i + 1; j < count; ++j) {
      if (partner[j] < 0 && mus(j) == std::conj(mus(i))) {
        partner[i] = static_cast<int>(j);
        partner[j] = static_cast<int>(i);
        break;
      }
    }
  }

  const CMatrix basis = factors.left_modes.cast<std::complex<double>>();
  AmplitudeFit fit;
  fit.condition = sol.condition;
  fit.ill_conditioned = sol.ill_conditioned;
  fit.modes.resize(count);
  std::vector<bool> done(count, false);
  for (Eigen::Index i = 0; i < count; ++i) {
    if (done[i]) continue;
    std::complex<double> b = sol.coefficients(i);
    const int j = partner[i];
    if (j >= 0) b = 0.5 * (b + std::conj(sol.coefficients(j)));
    const double amp = std::abs(b);
    const std::complex<double> phase = amp > 0.0 ? b / amp : std::complex<double>(1.0, 0.0);
    CVector u = basis * (phase * shapes.col(i));
    u /= u.norm();
    fit.modes[i] = make_mode(mus(i), dt_s, u, amp);
    done[i] = true;
    if (j >= 0) {
      fit.modes[j] = make_mode(mus(j), dt_s, u.conjugate(), amp);
      done[j] = true;
    }
  }
  sort_modes(fit.modes);
  return fit;
}

ModeSet select_modes(const ModeSet& mode_set, double eps_amp) {
  if (mode_set.modes.empty()) throw ConfigError("select_modes needs a nonempty ModeSet");
  if (!(eps_amp >= 0.0 && eps_amp < 1.0)) throw ConfigError("eps_amp must lie in [0,1)");

  double a_max = 0.0;
  for (const auto& m : mode_set.modes) a_max = std::max(a_max, m.amplitude);
  const double cut = eps_amp * a_max;

  const auto& modes = mode_set.modes;
  std::vector<bool> keep(modes.size(), false);
  for (std::size_t i = 0; i < modes.size(); ++i) {
    if (modes[i].amplitude >= cut) {
      keep[i] = true;
      if (auto j = conjugate_partner(modes, i)) keep[*j] = true;
    }
  }

  ModeSet out = mode_set;
  out.modes.clear();
  for (std::size_t i = 0; i < modes.size(); ++i)
    if (keep[i]) out.modes.push_back(modes[i]);
  if (out.modes.empty()) out.modes.push_back(modes.front());
  sort_modes(out.modes);
  out.config.eps_amp = eps_amp;
  return out;
}

Matrix reconstruct(const ModeSet& mode_set, int k_snapshots) {
  if (mode_set.modes.empty()) throw ConfigError("reconstruct needs a nonempty ModeSet");
  const Eigen::Index j = mode_set.pixels();
  const Eigen::Index count = mode_set.spectral_complexity();
  CMatrix weighted(j, count);
  CMatrix dynamics(count, k_snapshots);
  for (Eigen::Index m = 0; m < count; ++m) {
    const auto& mode = mode_set.modes[m];
    weighted.col(m) = mode.amplitude * mode.spatial_shape;
    std::complex<double> p(1.0, 0.0);
    for (int k = 0; k < k_snapshots; ++k) {
      dynamics(m, k) = p;
      p *= mode.eigenvalue;
    }
  }
  return (weighted * dynamics).real();
}

double relative_error(const Matrix& reference, const Matrix& approx) {
  const double denom = reference.norm();
  if (!(denom > 0.0)) throw DataError("relative error of a zero reference");
  return (reference - approx).norm() / denom;
}

ModeSet hodmd(const SnapshotMatrix& snap, const HodmdConfig& cfg) {
  const int k_count = snap.snapshots();
  HodmdConfig resolved = cfg;
  if (!(resolved.dt_s > 0.0)) resolved.dt_s = snap.dt_s;
  validate(resolved, k_count);

  const SvdFactors factors = truncated_svd(snap.data, resolved.eps_svd);
  const Matrix enlarged = delay_embed(factors.reduced_snapshots, resolved.delay);
  const auto reduced = solve_reduced_operator(enlarged, factors.rank(), resolved.eps_svd);
  AmplitudeFit fit = compute_amplitudes(reduced, factors, resolved.dt_s);

  ModeSet all;
  all.modes = std::move(fit.modes);
  all.config = resolved;
  all.k_snapshots = k_count;
  if (static_cast<Eigen::Index>(snap.height) * snap.width == snap.data.rows()) {
    all.height = snap.height;
    all.width = snap.width;
  }
  all.spatial_complexity = factors.rank();
  all.amplitude_condition = fit.condition;
  all.ill_conditioned = fit.ill_conditioned;

  ModeSet selected = select_modes(all, resolved.eps_amp);
  selected.reconstruction_rrmse = relative_error(snap.data, reconstruct(selected, k_count));
  return selected;
}

}  // namespace modaldx
