#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "modaldx/common.hpp"

namespace modaldx {

/// One 8-bit grayscale frame, row-major.
struct Frame {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
};

struct VideoSequence {
  std::vector<Frame> frames;
  double frame_interval_s = 0.0;
  std::string source_id;

  int height() const { return frames.empty() ? 0 : frames.front().height; }
  int width() const { return frames.empty() ? 0 : frames.front().width; }
  int frame_count() const { return static_cast<int>(frames.size()); }
};

enum class Normalization { unit_interval, zero_mean_unit_var };

struct PreprocessConfig {
  int target_h = 64;
  int target_w = 64;
  Normalization normalize = Normalization::unit_interval;
};

/// J x K snapshot matrix; column k is the row-major flattening of frame k.
struct SnapshotMatrix {
  Matrix data;
  double dt_s = 0.0;
  int height = 0;
  int width = 0;

  int pixels() const { return static_cast<int>(data.rows()); }
  int snapshots() const { return static_cast<int>(data.cols()); }
};

/// Throws DataError when a VideoSequence breaks its invariants.
void validate_video(const VideoSequence& video);

Frame read_pgm(const std::filesystem::path& path);
void write_pgm(const Frame& frame, const std::filesystem::path& path);

/// Reads a video directory: manifest.json ({frame_interval_s, frame_glob}) plus
/// binary PGM frames taken in lexicographic filename order.
VideoSequence load_video(const std::filesystem::path& dir);

/// Writes `video` in the format load_video reads (frame_%05d.pgm + manifest.json).
void save_video(const VideoSequence& video, const std::filesystem::path& dir);

/// Resamples an H x W grid. Each axis uses area averaging when shrinking and
/// bilinear interpolation (pixel-centre aligned) when growing.
Matrix resample_grid(const Matrix& grid, int target_h, int target_w);

SnapshotMatrix preprocess(const VideoSequence& video, const PreprocessConfig& cfg);

Normalization parse_normalization(const std::string& name);
std::string to_string(Normalization n);

}  // namespace modaldx
