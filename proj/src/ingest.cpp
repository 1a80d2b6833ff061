#include "modaldx/ingest.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace modaldx {

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

int parse_positive(const std::string& tok, const fs::path& path) {
  try {
    std::size_t used = 0;
    int v = std::stoi(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError("unreadable PGM header in " + path.string());
  }
}

// Per-axis resampling weights: out[i] = sum_j w[i][j] * in[j].
std::vector<std::vector<std::pair<int, double>>> axis_weights(int src, int dst) {
  std::vector<std::vector<std::pair<int, double>>> w(dst);
  if (src == dst) {
    for (int i = 0; i < dst; ++i) w[i] = {{i, 1.0}};
  } else if (dst < src) {
    const double scale = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
      const double lo = i * scale;
      const double hi = (i + 1) * scale;
      for (int j = static_cast<int>(std::floor(lo)); j < src && j < hi; ++j) {
        const double overlap = std::min(hi, j + 1.0) - std::max(lo, static_cast<double>(j));
        if (overlap > 0) w[i].emplace_back(j, overlap / scale);
      }
    }
  } else {
    const double scale = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
      double x = (i + 0.5) * scale - 0.5;
      x = std::clamp(x, 0.0, static_cast<double>(src - 1));
      const int j0 = static_cast<int>(std::floor(x));
      const int j1 = std::min(j0 + 1, src - 1);
      const double t = x - j0;
      if (j1 == j0 || t == 0.0) {
        w[i] = {{j0, 1.0}};
      } else {
        w[i] = {{j0, 1.0 - t}, {j1, t}};
      }
    }
  }
  return w;
}

}  // namespace

void validate_video(const VideoSequence& video) {
  if (video.frames.size() < 2) throw DataError("video needs at least 2 frames (K < 2)");
  if (!(video.frame_interval_s > 0.0) || !std::isfinite(video.frame_interval_s))
    throw DataError("frame_interval_s must be > 0");
  const int h = video.frames.front().height;
  const int w = video.frames.front().width;
  if (h < 8 || w < 8) throw DataError("frames must be at least 8x8");
  for (const auto& f : video.frames) {
    if (f.height != h || f.width != w) throw DataError("inconsistent frame dimensions");
    if (f.pixels.size() != static_cast<std::size_t>(h) * w) throw DataError("frame pixel buffer has wrong size");
  }
}

Frame read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("unreadable PGM: cannot open " + path.string());
  if (next_token(in) != "P5") throw DataError("unreadable PGM: not a binary P5 file: " + path.string());
  Frame f;
  f.width = parse_positive(next_token(in), path);
  f.height = parse_positive(next_token(in), path);
  if (parse_positive(next_token(in), path) != 255) throw DataError("unreadable PGM: maxval must be 255: " + path.string());
  f.pixels.resize(static_cast<std::size_t>(f.width) * f.height);
  in.read(reinterpret_cast<char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(f.pixels.size()))
    throw DataError("unreadable PGM: truncated pixel data in " + path.string());
  return f;
}

void write_pgm(const Frame& frame, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << frame.width << ' ' << frame.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.pixels.data()), static_cast<std::streamsize>(frame.pixels.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

VideoSequence load_video(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::is_regular_file(manifest_path)) throw DataError("missing manifest: " + manifest_path.string());

  json manifest;
  try {
    std::ifstream in(manifest_path);
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.contains("frame_interval_s") || !manifest["frame_interval_s"].is_number() ||
      !manifest.contains("frame_glob") || !manifest["frame_glob"].is_string())
    throw DataError("manifest must contain frame_interval_s (number) and frame_glob (string)");

  const std::string pattern = manifest["frame_glob"].get<std::string>();
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (fnmatch(pattern.c_str(), name.c_str(), 0) == 0) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });

  VideoSequence video;
  video.frame_interval_s = manifest["frame_interval_s"].get<double>();
  video.source_id = manifest.value("source_id", dir.filename().string());
  video.frames.reserve(files.size());
  for (const auto& f : files) video.frames.push_back(read_pgm(f));
  validate_video(video);
  return video;
}

void save_video(const VideoSequence& video, const fs::path& dir) {
  validate_video(video);
  fs::create_directories(dir);
  for (std::size_t k = 0; k < video.frames.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%05zu.pgm", k);
    write_pgm(video.frames[k], dir / name);
  }
  json manifest = {{"frame_interval_s", video.frame_interval_s},
                   {"frame_glob", "frame_*.pgm"},
                   {"source_id", video.source_id}};
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw DataError("cannot write manifest in " + dir.string());
}

Matrix resample_grid(const Matrix& grid, int target_h, int target_w) {
  if (target_h <= 0 || target_w <= 0) throw ConfigError("degenerate target dims");
  const int h = static_cast<int>(grid.rows());
  const int w = static_cast<int>(grid.cols());
  if (h == target_h && w == target_w) return grid;

  const auto wr = axis_weights(h, target_h);
  const auto wc = axis_weights(w, target_w);
  Matrix rows = Matrix::Zero(target_h, w);
  for (int i = 0; i < target_h; ++i)
    for (const auto& [j, wt] : wr[i]) rows.row(i) += wt * grid.row(j);
  Matrix out = Matrix::Zero(target_h, target_w);
  for (int i = 0; i < target_w; ++i)
    for (const auto& [j, wt] : wc[i]) out.col(i) += wt * rows.col(j);
  return out;
}

SnapshotMatrix preprocess(const VideoSequence& video, const PreprocessConfig& cfg) {
  validate_video(video);
  if (cfg.target_h <= 0 || cfg.target_w <= 0) throw ConfigError("degenerate target dims");

  const int h = video.height();
  const int w = video.width();
  const int k_count = video.frame_count();
  SnapshotMatrix snap;
  snap.dt_s = video.frame_interval_s;
  snap.height = cfg.target_h;
  snap.width = cfg.target_w;
  snap.data.resize(static_cast<Eigen::Index>(cfg.target_h) * cfg.target_w, k_count);

  Matrix grid(h, w);
  for (int k = 0; k < k_count; ++k) {
    const Frame& f = video.frames[k];
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) grid(r, c) = f.at(r, c);
    const Matrix res = resample_grid(grid, cfg.target_h, cfg.target_w);
    for (int r = 0; r < cfg.target_h; ++r)
      for (int c = 0; c < cfg.target_w; ++c) snap.data(r * cfg.target_w + c, k) = res(r, c);
  }

  switch (cfg.normalize) {
    case Normalization::unit_interval: {
      // Min-max over the whole sequence; a constant sequence falls back to the 8-bit full scale.
      const double lo = snap.data.minCoeff();
      const double hi = snap.data.maxCoeff();
      if (hi > lo) {
        snap.data = (snap.data.array() - lo) / (hi - lo);
      } else {
        snap.data /= 255.0;
      }
      break;
    }
    case Normalization::zero_mean_unit_var: {
      const double mean = snap.data.mean();
      const double var = (snap.data.array() - mean).square().mean();
      if (!(var > 0.0)) throw DataError("degenerate sequence: zero variance");
      snap.data = (snap.data.array() - mean) / std::sqrt(var);
      break;
    }
  }
  return snap;
}

Normalization parse_normalization(const std::string& name) {
  if (name == "unit_interval") return Normalization::unit_interval;
  if (name == "zero_mean_unit_var") return Normalization::zero_mean_unit_var;
  throw ConfigError("unknown normalization: " + name);
}

std::string to_string(Normalization n) {
  return n == Normalization::unit_interval ? "unit_interval" : "zero_mean_unit_var";
}

}  // namespace modaldx
