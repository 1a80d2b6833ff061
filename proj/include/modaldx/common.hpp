#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace modaldx {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated an operation's contract (bad parameter, bad shape).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data could not be read or is numerically unusable.
class DataError : public Error {
 public:
  using Error::Error;
};

// Heart-state classes, in class-index order.
enum class HeartState : int { CTL = 0, HG = 1, OB = 2, SAH = 3 };

inline constexpr int kNumClasses = 4;
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {"CTL", "HG", "OB", "SAH"};

inline std::string_view to_string(HeartState s) { return kClassNames[static_cast<int>(s)]; }

inline HeartState heart_state_from_index(int i) {
  if (i < 0 || i >= kNumClasses) throw ConfigError("class index out of range: " + std::to_string(i));
  return static_cast<HeartState>(i);
}

inline HeartState parse_heart_state(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (kClassNames[i] == name) return static_cast<HeartState>(i);
  throw ConfigError("unknown group label: " + std::string(name));
}

/// splitmix64 step; used to derive independent sub-seeds from a root seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace modaldx
