#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "modaldx/pipeline.hpp"
#include "modaldx/synth.hpp"

namespace fixtures {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("modaldx_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct SyntheticSet {
  modaldx::Dataset records;
  std::vector<modaldx::FeatureTensor> features;
};

/// Decomposed features of a small synthetic cohort.
inline SyntheticSet synthetic_features(int animals_per_group, int scans, std::uint64_t seed) {
  const modaldx::CohortConfig cfg;
  SyntheticSet s;
  s.records = modaldx::generate_cohort(animals_per_group, scans, cfg, seed);
  for (const auto& r : s.records)
    s.features.push_back(modaldx::decompose_video(modaldx::render_record(r, cfg.cine), {}).features);
  return s;
}

}  // namespace fixtures
