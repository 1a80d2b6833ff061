#pragma once

#include <complex>
#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

#include "modaldx/common.hpp"
#include "modaldx/ingest.hpp"

namespace modaldx {

/// Parameters of the higher-order (delay-embedded) DMD.
struct HodmdConfig {
  int delay = 2;           // d: reduced snapshots stacked per enlarged column
  double eps_svd = 1e-3;   // relative singular-value cut, used by both SVD truncations
  double eps_amp = 1e-3;   // relative amplitude cut
  double dt_s = 0.0;
};

/// d = max(2, round(K/10)) clamped to K-1, eps_svd = eps_amp = 1e-3.
HodmdConfig default_hodmd_config(int k_snapshots, double dt_s);

void validate(const HodmdConfig& cfg, int k_snapshots);

struct SvdFactors {
  Matrix left_modes;         // J x n, orthonormal columns
  Vector singular_values;    // n, nonincreasing, positive
  Matrix reduced_snapshots;  // n x K, Sigma * T^T

  int rank() const { return static_cast<int>(singular_values.size()); }
};

/// An eigenpair of the reduced propagator; `shape` is the first delay block of the
/// enlarged eigenvector, in the n-dimensional reduced coordinates, unit norm.
struct ReducedMode {
  std::complex<double> eigenvalue;
  CVector shape;
};

struct DmdMode {
  CVector spatial_shape;  // length J, unit norm, carries the phase of the fitted coefficient
  double amplitude = 0.0;
  double frequency_rad_s = 0.0;
  double growth_rate_per_s = 0.0;
  std::complex<double> eigenvalue;
};

/// Builds a mode from its eigenvalue, filling the rate fields (delta = ln|mu|/dt, omega = arg(mu)/dt).
DmdMode make_mode(std::complex<double> eigenvalue, double dt_s, CVector shape, double amplitude);

struct ModeSet {
  std::vector<DmdMode> modes;  // amplitude descending, then frequency ascending
  HodmdConfig config;
  int k_snapshots = 0;
  int height = 0;  // source grid of the spatial shapes; 0 when unknown
  int width = 0;
  int spatial_complexity = 0;
  double reconstruction_rrmse = std::numeric_limits<double>::quiet_NaN();
  double amplitude_condition = 1.0;
  bool ill_conditioned = false;

  int spectral_complexity() const { return static_cast<int>(modes.size()); }
  int pixels() const { return modes.empty() ? 0 : static_cast<int>(modes.front().spatial_shape.size()); }
};

/// Thin SVD of a J x K matrix truncated to n = max{i : sigma_i / sigma_1 >= eps_svd}.
SvdFactors truncated_svd(const Matrix& snapshots, double eps_svd);
inline SvdFactors truncated_svd(const SnapshotMatrix& snap, double eps_svd) { return truncated_svd(snap.data, eps_svd); }

/// Column k of the result stacks reduced columns k..k+d-1; shape (d*n) x (K-d+1).
Matrix delay_embed(const Matrix& reduced, int d);

/// Second truncated SVD of the enlarged matrix, least-squares one-step propagator in
/// that basis, and its eigenpairs restricted to the first `block_rows` rows.
std::vector<ReducedMode> solve_reduced_operator(const Matrix& enlarged, int block_rows, double eps_svd);

struct AmplitudeSolution {
  CVector coefficients;
  double condition = 1.0;
  bool ill_conditioned = false;
};

/// Joint least squares of v_k ~ sum_m b_m * shapes.col(m) * mu_m^k over all k = 0..K-1.
AmplitudeSolution fit_amplitudes(const CMatrix& shapes, const CVector& eigenvalues, const Matrix& snapshots);

inline constexpr double kIllConditionedLimit = 1e12;

struct AmplitudeFit {
  std::vector<DmdMode> modes;  // sorted, conjugate pairs made exactly symmetric
  double condition = 1.0;
  bool ill_conditioned = false;
};

/// Fits amplitudes in the reduced space and lifts the shapes to J dimensions via U.
AmplitudeFit compute_amplitudes(const std::vector<ReducedMode>& reduced, const SvdFactors& factors, double dt_s);

/// Index of the conjugate partner of modes[i], if any.
std::optional<std::size_t> conjugate_partner(const std::vector<DmdMode>& modes, std::size_t i);

void sort_modes(std::vector<DmdMode>& modes);

/// Keeps modes with a_m >= eps_amp * a_max; conjugate partners go together.
ModeSet select_modes(const ModeSet& mode_set, double eps_amp);

/// Re(sum_m a_m u_m mu_m^k), k = 0..K-1, as a J x K matrix.
Matrix reconstruct(const ModeSet& mode_set, int k_snapshots);

/// ||reference - approx||_F / ||reference||_F
double relative_error(const Matrix& reference, const Matrix& approx);

/// Full pipeline: truncated SVD, delay embedding, reduced eigensolve, amplitude fit,
/// amplitude truncation and reconstruction error.
ModeSet hodmd(const SnapshotMatrix& snap, const HodmdConfig& cfg);

inline constexpr const char* kDecompositionFormat = "MODALDX-DEC-1";

/// Decomposition file: container header (config, K, N, rrmse, warning flags) plus
/// spatial shapes (N x J x 2, re/im interleaved), amplitudes (N) and eigenvalues (N x 2).
void save_mode_set(const ModeSet& mode_set, const std::filesystem::path& path);
ModeSet load_mode_set(const std::filesystem::path& path);

}  // namespace modaldx
