#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "modaldx/eval.hpp"
#include "modaldx/pipeline.hpp"
#include "modaldx/synth.hpp"
#include "report.hpp"

namespace modaldx::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

// ---- option bundles -------------------------------------------------------

struct SynthOptions {
  int animals = 10;
  int scans = 5;
  std::uint64_t seed = 0;
  std::string out;
  int frames = 100;
  double dt = 0.01;
  int height = 64;
  int width = 64;
  double noise_sd = 0.5;
  double offset = 128.0;
  std::string ratios = "0.6,0.2,0.2";
  std::string profiles;
};

struct DecomposeFlags {
  int size = 64;
  std::string normalize = "unit_interval";
  int delay = 0;
  double eps_svd = 1e-3;
  double eps_amp = 1e-3;
  int m_modes = 8;
  int grid = 64;
  double phase_floor = 1e-2;
};

struct DecomposeOptions {
  std::string cohort;
  std::vector<std::string> videos;
  std::string out;
  DecomposeFlags flags;
};

struct FitOptions {
  std::string cohort;
  std::string features;
  std::string out;
  std::string init;
  std::string ratios = "0.6,0.2,0.2";
  std::uint64_t split_seed = 0;
  std::uint64_t seed = 0;
  int epochs = 60;
  double lr = 1e-3;
  int batch = 8;
  int patience = 15;
  double lambda_cls = 1.0;
  double lambda_reg = 1.0 / 400.0;
  double mask_ratio = 0.5;
  int embed_dim = 64;
  int blocks = 2;
  int heads = 4;
  int mlp_ratio = 2;
  int patch = 16;
};

struct PredictOptions {
  std::string checkpoint;
  std::string cohort;
  std::string features;
  std::string split;
  std::string partition = "all";
  std::vector<std::string> videos;
  std::vector<double> ages;
  std::string out;
  DecomposeFlags flags;
};

struct EvalOptions {
  std::string predictions;
  std::string cohort;
  std::string out;
  std::string age_edges = "0,64,104";
  std::string decompositions;
};

struct BenchOptions {
  std::string video;
  bool synthetic = false;
  std::string checkpoint;
  int repeat = 5;
  std::string out;
  std::uint64_t seed = 0;
  double budget_s = 1.0;
  DecomposeFlags flags;
};

struct ReportOptions {
  std::string cohort;
  std::string split;
  std::string ratios = "0.6,0.2,0.2";
  std::uint64_t split_seed = 0;
  std::string decompositions;
  std::string out;
};

// ---- helpers -------------------------------------------------------------

SplitRatios parse_ratios(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("bad ratio '" + tok + "'");
    }
  }
  if (v.size() != 3) throw ConfigError("ratios need three values (train,val,test)");
  SplitRatios r{v[0], v[1], v[2]};
  validate(r);
  return r;
}

void require_dir(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " is required");
  if (!fs::is_directory(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " is required");
  if (!fs::is_regular_file(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

fs::path make_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw ConfigError("cannot create output directory " + out);
  return fs::path(out);
}

Cohort open_cohort(const std::string& dir) {
  require_dir(dir, "cohort directory");
  try {
    return load_cohort(dir);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

json option_value(const CLI::Option* opt) {
  auto typed = [](const std::string& s) -> json {
    if (s == "true") return true;
    if (s == "false") return false;
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size() && !s.empty()) {
        if (s.find_first_of(".eE") == std::string::npos) return json::parse(s);
        return v;
      }
    } catch (const std::exception&) {
    }
    return s;
  };
  if (opt->get_expected_max() == 0) return opt->count() > 0;
  if (opt->count() == 0) {
    const std::string d = opt->get_default_str();
    if (d.empty()) return nullptr;
    return typed(d);
  }
  const auto& res = opt->results();
  if (opt->get_expected_max() > 1) {
    json arr = json::array();
    for (const auto& r : res) arr.push_back(typed(r));
    return arr;
  }
  return typed(res.back());
}

/// Every output directory gets the fully resolved configuration and format versions.
void write_run_config(const fs::path& dir, const CLI::App* sub) {
  json options = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_name() == "--help" || opt->get_name() == "--config") continue;
    std::string name = opt->get_name();
    while (!name.empty() && name.front() == '-') name.erase(0, 1);
    options[name] = option_value(opt);
  }
  const json doc = {{"tool", "modaldx"},
                    {"version", kVersion},
                    {"command", sub->get_name()},
                    {"formats",
                     {{"cohort", kCohortFormat},
                      {"decomposition", kDecompositionFormat},
                      {"features", kFeatureFormat},
                      {"checkpoint", kCheckpointFormat}}},
                    {"options", options}};
  report::write_json(dir / "run_config.json", doc);
}

void add_decompose_flags(CLI::App* sub, DecomposeFlags& f) {
  sub->add_option("--size", f.size, "Preprocessing grid (pixels per side)")->capture_default_str()->check(CLI::Range(8, 4096));
  sub->add_option("--normalize", f.normalize, "unit_interval | zero_mean_unit_var")
      ->capture_default_str()
      ->check(CLI::IsMember({"unit_interval", "zero_mean_unit_var"}));
  sub->add_option("--delay", f.delay, "HODMD delay d (0 = automatic)")->capture_default_str()->check(CLI::NonNegativeNumber);
  sub->add_option("--eps-svd", f.eps_svd, "Relative singular value cut")->capture_default_str();
  sub->add_option("--eps-amp", f.eps_amp, "Relative amplitude cut")->capture_default_str();
  sub->add_option("--m-modes", f.m_modes, "Feature slots")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--grid", f.grid, "Feature image grid")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--phase-floor", f.phase_floor, "Relative magnitude below which phase is 0")->capture_default_str();
}

modaldx::DecomposeOptions to_pipeline(const DecomposeFlags& f, int k_snapshots, double dt) {
  modaldx::DecomposeOptions o;
  o.preprocess.target_h = o.preprocess.target_w = f.size;
  o.preprocess.normalize = parse_normalization(f.normalize);
  if (f.delay > 0 || f.eps_svd != 1e-3 || f.eps_amp != 1e-3) {
    HodmdConfig h = default_hodmd_config(k_snapshots, dt);
    if (f.delay > 0) h.delay = f.delay;
    h.eps_svd = f.eps_svd;
    h.eps_amp = f.eps_amp;
    validate(h, k_snapshots);
    o.hodmd = h;
  }
  o.features.m_modes = f.m_modes;
  o.features.patch_h = o.features.patch_w = f.grid;
  o.features.phase_floor = f.phase_floor;
  validate(o.features);
  return o;
}

void validate_flags(const DecomposeFlags& f) {
  if (!(f.eps_svd > 0.0 && f.eps_svd < 1.0)) throw ConfigError("eps-svd must lie in (0,1)");
  if (!(f.eps_amp >= 0.0 && f.eps_amp < 1.0)) throw ConfigError("eps-amp must lie in [0,1)");
  FeatureConfig fc;
  fc.m_modes = f.m_modes;
  fc.patch_h = fc.patch_w = f.grid;
  fc.phase_floor = f.phase_floor;
  validate(fc);
  parse_normalization(f.normalize);
}

// ---- split files -----------------------------------------------------------

void write_split(const fs::path& path, const Dataset& records, const SplitPlan& plan) {
  std::vector<report::Row> rows;
  for (std::size_t i = 0; i < records.size(); ++i)
    rows.push_back({records[i].video_id, records[i].animal_id, std::string(to_string(records[i].group)),
                    std::string(to_string(plan.assignment[i]))});
  report::write_csv(path, {"video_id", "animal_id", "group", "partition"}, rows);
}

std::map<std::string, Partition> read_split(const std::string& path) {
  require_file(path, "split file");
  const report::Table t = report::read_csv(path);
  const auto col = std::find(t.header.begin(), t.header.end(), "partition") - t.header.begin();
  if (t.header.empty() || t.header[0] != "video_id" || col == static_cast<long>(t.header.size()))
    throw ConfigError(path + ": not a split file");
  std::map<std::string, Partition> out;
  for (const auto& r : t.rows) out[r[0]] = parse_partition(r[static_cast<std::size_t>(col)]);
  return out;
}

// ---- synth -----------------------------------------------------------------

int cmd_synth(const SynthOptions& o, const CLI::App* sub, std::ostream& out) {
  CohortConfig cfg;
  cfg.cine.height = o.height;
  cfg.cine.width = o.width;
  cfg.cine.frames = o.frames;
  cfg.cine.dt_s = o.dt;
  cfg.cine.noise_sd = o.noise_sd;
  cfg.cine.offset = o.offset;
  validate(cfg.cine);
  const SplitRatios ratios = parse_ratios(o.ratios);
  if (!o.profiles.empty()) {
    require_file(o.profiles, "profiles file");
    // Same schema as the "profiles" array of a cohort manifest.
    std::ifstream in(o.profiles);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(o.profiles + ": " + e.what());
    }
    cfg.profiles = profiles_from_json(doc.is_object() ? doc.value("profiles", json()) : doc);
  }
  for (const auto& p : cfg.profiles) validate(p);
  if (o.animals < 1 || o.scans < 1) throw ConfigError("animals and scans must be positive");

  const fs::path dir = make_out_dir(o.out);
  write_run_config(dir, sub);
  const Dataset ds = generate_cohort(o.animals, o.scans, cfg, o.seed);
  write_cohort(ds, cfg, dir);
  const SplitPlan plan = split_dataset(ds, ratios, o.seed);
  write_split(dir / "split.csv", ds, plan);
  for (const auto& w : plan.warnings) out << "warning: " << w << '\n';
  out << fmt::format("wrote {} videos ({} animals) to {}\n", ds.size(), o.animals * kNumClasses, dir.string());
  return kSuccess;
}

// ---- decompose ---------------------------------------------------------------

int cmd_decompose(const DecomposeOptions& o, const CLI::App* sub, std::ostream& out, std::ostream& err) {
  validate_flags(o.flags);
  std::vector<std::pair<std::string, fs::path>> items;
  if (!o.cohort.empty()) {
    const Cohort c = open_cohort(o.cohort);
    for (const auto& r : c.records) items.emplace_back(r.video_id, r.video_path);
  }
  for (const auto& v : o.videos) {
    if (!fs::exists(v)) throw ConfigError("video directory not found: " + v);
    items.emplace_back(fs::path(v).lexically_normal().filename().string(), fs::path(v));
  }
  if (items.empty()) throw ConfigError("nothing to decompose: give --cohort or --video");
  std::set<std::string> seen;
  for (const auto& [id, p] : items)
    if (!seen.insert(id).second) throw ConfigError("duplicate video id " + id);

  const fs::path dir = make_out_dir(o.out);
  write_run_config(dir, sub);
  std::vector<report::Row> index;
  int failed = 0;
  for (const auto& [id, path] : items) {
    try {
      const VideoSequence video = load_video(path);
      const auto opts = to_pipeline(o.flags, video.frame_count(), video.frame_interval_s);
      const Decomposition d = decompose_video(video, opts);
      save_mode_set(d.modes, dir / (id + ".dec"));
      save_features(d.features, dir / (id + ".feat"));
      const report::Table t = report::spectrum_table(d.modes);
      report::write_csv(dir / (id + "_spectrum.csv"), t.header, t.rows);
      index.push_back({id, "ok", std::to_string(d.modes.spectral_complexity()),
                       std::to_string(d.modes.spatial_complexity), report::real(d.modes.reconstruction_rrmse),
                       d.modes.ill_conditioned ? "ill_conditioned_amplitudes" : ""});
    } catch (const Error& e) {
      ++failed;
      err << "error: " << id << ": " << e.what() << '\n';
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      index.push_back({id, "failed", "", "", "", msg});
    }
  }
  report::write_csv(dir / "index.csv", {"video_id", "status", "spectral_complexity", "spatial_complexity", "rrmse", "note"},
                    index);
  out << fmt::format("decomposed {} of {} videos into {}\n", items.size() - failed, items.size(), dir.string());
  return failed > 0 ? kPartialFailure : kSuccess;
}

// ---- pretrain / train --------------------------------------------------------

struct Partitions {
  std::vector<FeatureTensor> x[kNumPartitions];
  std::vector<Target> y[kNumPartitions];
};

struct FitData {
  Cohort cohort;
  SplitPlan plan;
  Partitions parts;
};

FeatureTensor read_features(const fs::path& dir, const std::string& id) {
  const fs::path p = dir / (id + ".feat");
  if (!fs::is_regular_file(p)) throw ConfigError("missing decomposition input " + p.string());
  try {
    return load_features(p);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

FitData load_fit_data(const FitOptions& o, bool need_targets) {
  FitData d;
  d.cohort = open_cohort(o.cohort);
  require_dir(o.features, "features directory");
  const SplitRatios ratios = parse_ratios(o.ratios);
  if (d.cohort.records.empty()) throw ConfigError("cohort has no records");
  d.plan = split_dataset(d.cohort.records, ratios, o.split_seed);
  for (std::size_t i = 0; i < d.cohort.records.size(); ++i) {
    const StudyRecord& r = d.cohort.records[i];
    const int p = static_cast<int>(d.plan.assignment[i]);
    if (!need_targets && p != static_cast<int>(Partition::train)) continue;
    if (p == static_cast<int>(Partition::test)) continue;
    d.parts.x[p].push_back(read_features(o.features, r.video_id));
    d.parts.y[p].push_back({r.group, r.onset_age_weeks});
  }
  if (d.parts.x[0].empty()) throw ConfigError("empty training partition");
  if (need_targets && d.parts.x[1].empty()) throw ConfigError("empty validation partition");
  return d;
}

Model initial_model(const FitOptions& o, const FeatureTensor& like) {
  if (!o.init.empty()) {
    require_file(o.init, "initial checkpoint");
    Model m;
    try {
      m = load_checkpoint(o.init);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    if (m.config.m_modes != like.m_modes || m.config.grid_h != like.height || m.config.grid_w != like.width)
      throw ConfigError("initial checkpoint does not match the feature geometry");
    return m;
  }
  ModelConfig c;
  c.patch_size = o.patch;
  c.embed_dim = o.embed_dim;
  c.n_blocks = o.blocks;
  c.n_heads = o.heads;
  c.mlp_ratio = o.mlp_ratio;
  c.mask_ratio = o.mask_ratio;
  c.seed = o.seed;
  c.m_modes = like.m_modes;
  c.grid_h = like.height;
  c.grid_w = like.width;
  return init_model(c);
}

TrainConfig train_config(const FitOptions& o) {
  TrainConfig tc;
  tc.learning_rate = o.lr;
  tc.batch_size = o.batch;
  tc.epochs = o.epochs;
  tc.patience = o.patience;
  tc.weights = {o.lambda_cls, o.lambda_reg};
  tc.seed = o.seed;
  validate(tc);
  return tc;
}

void add_fit_options(CLI::App* sub, FitOptions& o, int default_epochs) {
  o.epochs = default_epochs;
  sub->add_option("--cohort", o.cohort, "Cohort directory (labels, ages, animal ids)");
  sub->add_option("--features", o.features, "Directory of <video_id>.feat files from decompose");
  sub->add_option("--out", o.out, "Output directory");
  sub->add_option("--init", o.init, "Start from this checkpoint instead of a fresh initialisation");
  sub->add_option("--ratios", o.ratios, "Split ratios train,val,test")->capture_default_str();
  sub->add_option("--split-seed", o.split_seed, "Seed of the animal-level split")->capture_default_str();
  sub->add_option("--seed", o.seed, "Seed of initialisation, shuffling and masking")->capture_default_str();
  sub->add_option("--epochs", o.epochs, "Epochs")->capture_default_str()->check(CLI::NonNegativeNumber);
  sub->add_option("--lr", o.lr, "Learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
  sub->add_option("--batch", o.batch, "Mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--patience", o.patience, "Early-stopping patience (epochs)")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--lambda-cls", o.lambda_cls, "Classification loss weight")->capture_default_str();
  sub->add_option("--lambda-reg", o.lambda_reg, "Onset regression loss weight")->capture_default_str();
  sub->add_option("--mask-ratio", o.mask_ratio, "Masked patch fraction for pretraining")->capture_default_str();
  sub->add_option("--embed-dim", o.embed_dim, "Embedding width")->capture_default_str();
  sub->add_option("--blocks", o.blocks, "Attention blocks")->capture_default_str();
  sub->add_option("--heads", o.heads, "Attention heads")->capture_default_str();
  sub->add_option("--mlp-ratio", o.mlp_ratio, "Feed-forward width multiplier")->capture_default_str();
  sub->add_option("--patch", o.patch, "Patch size")->capture_default_str();
}

int cmd_pretrain(const FitOptions& o, const CLI::App* sub, std::ostream& out) {
  const TrainConfig tc = train_config(o);
  FitData d = load_fit_data(o, false);
  Model model = initial_model(o, d.parts.x[0].front());
  if (model.config.mask_ratio != o.mask_ratio && o.init.empty()) model.config.mask_ratio = o.mask_ratio;
  validate(model.config);
  const fs::path dir = make_out_dir(o.out);
  write_run_config(dir, sub);
  write_split(dir / "split.csv", d.cohort.records, d.plan);

  out << fmt::format("pretraining on {} tensors, {} parameters\n", d.parts.x[0].size(), model.parameter_count());
  const PretrainResult r = pretrain_masked(std::move(model), d.parts.x[0], tc);
  std::vector<report::Row> rows;
  for (std::size_t e = 0; e < r.history.size(); ++e) {
    rows.push_back({std::to_string(e + 1), report::real(r.history[e])});
    out << fmt::format("epoch {:3d}  masked loss {:.6f}\n", e + 1, r.history[e]);
  }
  report::write_csv(dir / "pretrain_history.csv", {"epoch", "masked_loss"}, rows);
  save_checkpoint(r.model, dir / "pretrained.mdl");
  return kSuccess;
}

int cmd_train(const FitOptions& o, const CLI::App* sub, std::ostream& out) {
  const TrainConfig tc = train_config(o);
  FitData d = load_fit_data(o, true);
  const Model model = initial_model(o, d.parts.x[0].front());
  const fs::path dir = make_out_dir(o.out);
  write_run_config(dir, sub);
  write_split(dir / "split.csv", d.cohort.records, d.plan);
  for (const auto& w : d.plan.warnings) out << "warning: " << w << '\n';

  out << fmt::format("training on {} / validating on {} tensors, {} parameters\n", d.parts.x[0].size(),
                     d.parts.x[1].size(), model.parameter_count());
  const TrainResult r = train(model, d.parts.x[0], d.parts.y[0], d.parts.x[1], d.parts.y[1], tc);
  std::vector<report::Row> rows;
  for (const auto& h : r.history) {
    rows.push_back({std::to_string(h.epoch), report::real(h.train_loss), report::real(h.val_loss),
                    report::real(h.val_accuracy), report::real(h.val_rmse)});
    out << fmt::format("epoch {:3d}  train {:.5f}  val {:.5f}  val acc {:.3f}  val rmse {:.2f}\n", h.epoch, h.train_loss,
                       h.val_loss, h.val_accuracy, h.val_rmse);
  }
  report::write_csv(dir / "history.csv", {"epoch", "train_loss", "val_loss", "val_accuracy", "val_rmse_weeks"}, rows);
  save_checkpoint(r.model, dir / "model.mdl");
  if (!r.history.empty()) out << fmt::format("best epoch {}\n", r.best_epoch);
  return kSuccess;
}

// ---- predict -----------------------------------------------------------------

report::Row prediction_row(const std::string& id, const std::string& animal, std::optional<double> age, const Prediction& p) {
  report::Row row{id, animal, report::real(age), std::string(to_string(p.label))};
  for (double q : p.probabilities) row.push_back(report::real(q));
  row.push_back(report::real(p.onset_age_weeks));
  row.push_back(age ? report::real(p.time_to_onset_weeks) : std::string());
  return row;
}

const report::Row kPredictionHeader = {"video_id", "animal_id", "acquisition_age_weeks", "label", "p_CTL", "p_HG",
                                       "p_OB", "p_SAH", "onset_age_weeks", "time_to_onset_weeks"};

int cmd_predict(const PredictOptions& o, const CLI::App* sub, std::ostream& out, std::ostream& err) {
  require_file(o.checkpoint, "checkpoint");
  validate_flags(o.flags);
  Model model;
  try {
    model = load_checkpoint(o.checkpoint);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  if (o.cohort.empty() == o.videos.empty()) throw ConfigError("give either --cohort with --features or --video");
  if (!o.ages.empty() && o.ages.size() != 1 && o.ages.size() != o.videos.size())
    throw ConfigError("--age takes one value or one per --video");

  std::vector<report::Row> rows;
  int failed = 0;
  auto check_geometry = [&](const FeatureTensor& x) {
    if (x.m_modes != model.config.m_modes || x.height != model.config.grid_h || x.width != model.config.grid_w)
      throw ConfigError("features do not match the checkpoint geometry");
  };

  if (!o.cohort.empty()) {
    const Cohort c = open_cohort(o.cohort);
    require_dir(o.features, "features directory");
    std::map<std::string, Partition> split;
    std::optional<Partition> want;
    if (o.partition != "all") {
      want = parse_partition(o.partition);
      split = read_split(o.split);
    }
    std::vector<const StudyRecord*> selected;
    for (const auto& r : c.records) {
      if (want) {
        auto it = split.find(r.video_id);
        if (it == split.end()) throw ConfigError("record " + r.video_id + " is missing from the split file");
        if (it->second != *want) continue;
      }
      selected.push_back(&r);
    }
    if (selected.empty()) throw ConfigError("no records selected for prediction");
    std::vector<FeatureTensor> xs;
    for (const StudyRecord* r : selected) {
      xs.push_back(read_features(o.features, r->video_id));
      check_geometry(xs.back());
    }
    const fs::path dir = make_out_dir(o.out);
    write_run_config(dir, sub);
    for (std::size_t i = 0; i < selected.size(); ++i) {
      const StudyRecord& r = *selected[i];
      rows.push_back(prediction_row(r.video_id, r.animal_id, r.acquisition_age_weeks,
                                    predict(model, xs[i], r.acquisition_age_weeks)));
    }
    report::write_csv(dir / "predictions.csv", kPredictionHeader, rows);
  } else {
    for (const auto& v : o.videos)
      if (!fs::exists(v)) throw ConfigError("video directory not found: " + v);
    const fs::path dir = make_out_dir(o.out);
    write_run_config(dir, sub);
    for (std::size_t i = 0; i < o.videos.size(); ++i) {
      const std::string id = fs::path(o.videos[i]).lexically_normal().filename().string();
      std::optional<double> age;
      if (!o.ages.empty()) age = o.ages.size() == 1 ? o.ages[0] : o.ages[i];
      try {
        const VideoSequence video = load_video(o.videos[i]);
        const Decomposition d = decompose_video(video, to_pipeline(o.flags, video.frame_count(), video.frame_interval_s));
        check_geometry(d.features);
        rows.push_back(prediction_row(id, "", age, predict(model, d.features, age.value_or(0.0))));
      } catch (const DataError& e) {
        ++failed;
        err << "error: " << id << ": " << e.what() << '\n';
      }
    }
    report::write_csv(dir / "predictions.csv", kPredictionHeader, rows);
  }
  out << fmt::format("wrote {} predictions\n", rows.size());
  return failed > 0 ? kPartialFailure : kSuccess;
}

// ---- eval --------------------------------------------------------------------

int cmd_eval(const EvalOptions& o, const CLI::App* sub, std::ostream& out) {
  require_file(o.predictions, "predictions file");
  const Cohort c = open_cohort(o.cohort);
  const auto intervals = parse_age_edges(o.age_edges);
  std::map<std::string, const StudyRecord*> by_id;
  for (const auto& r : c.records) by_id[r.video_id] = &r;

  const report::Table t = report::read_csv(o.predictions);
  if (t.header != kPredictionHeader) throw ConfigError(o.predictions + ": not a predictions file");
  if (t.rows.empty()) throw ConfigError("empty test partition: no predictions to evaluate");
  std::vector<EvalRecord> records;
  std::vector<std::string> ids;
  for (const auto& row : t.rows) {
    auto it = by_id.find(row[0]);
    if (it == by_id.end()) throw ConfigError("prediction for unknown video " + row[0]);
    EvalRecord e;
    e.truth = it->second->group;
    e.predicted = parse_heart_state(row[3]);
    e.acquisition_age_weeks = it->second->acquisition_age_weeks;
    e.onset_true_weeks = it->second->onset_age_weeks;
    try {
      e.onset_pred_weeks = std::stod(row[8]);
    } catch (const std::exception&) {
      throw ConfigError("bad onset value for " + row[0]);
    }
    records.push_back(e);
    ids.push_back(row[0]);
  }
  const EvalReport rep = evaluate(records, intervals);
  const fs::path dir = make_out_dir(o.out);
  write_run_config(dir, sub);
  report::write_eval_report(rep, records, dir);

  if (!o.decompositions.empty()) {
    require_dir(o.decompositions, "decompositions directory");
    fs::create_directories(dir / "spectra");
    for (const auto& id : ids) {
      const fs::path p = fs::path(o.decompositions) / (id + ".dec");
      if (!fs::exists(p)) continue;
      report::write_text(dir / "spectra" / (id + "_spectrum.svg"), report::spectrum_svg(load_mode_set(p), id));
    }
  }
  out << fmt::format("evaluated {} predictions: accuracy {}  rmse {} weeks\n", records.size(),
                     report::real(rep.confusion.overall_accuracy()), report::real(rep.onset.overall));
  return kSuccess;
}

// ---- bench -------------------------------------------------------------------

int cmd_bench(const BenchOptions& o, const CLI::App* sub, std::ostream& out) {
  validate_flags(o.flags);
  if (o.video.empty() && !o.synthetic) throw ConfigError("give --video or --synthetic");
  if (!o.video.empty() && !fs::is_directory(o.video)) throw ConfigError("video directory not found: " + o.video);
  if (o.repeat < 1) throw ConfigError("--repeat must be positive");

  VideoSequence video;
  if (!o.video.empty()) {
    try {
      video = load_video(o.video);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
  } else {
    const auto profiles = default_group_profiles();
    video = generate_cine(profiles[0], 60.0, 100.0, CineConfig{}, o.seed).video;
  }
  const auto opts = to_pipeline(o.flags, video.frame_count(), video.frame_interval_s);
  Model model;
  if (!o.checkpoint.empty()) {
    require_file(o.checkpoint, "checkpoint");
    model = load_checkpoint(o.checkpoint);
  } else {
    model = init_model(model_config_for(opts.features));
  }
  const fs::path dir = make_out_dir(o.out);
  write_run_config(dir, sub);

  using clock = std::chrono::steady_clock;
  std::vector<report::Row> rows;
  std::vector<double> per_frame;
  const int k = video.frame_count();
  for (int i = 0; i < o.repeat; ++i) {
    const auto t0 = clock::now();
    const Decomposition d = decompose_video(video, opts);
    const auto t1 = clock::now();
    const Prediction p = predict(model, d.features, 0.0);
    const auto t2 = clock::now();
    (void)p;
    const double dec = std::chrono::duration<double>(t1 - t0).count();
    const double pre = std::chrono::duration<double>(t2 - t1).count();
    per_frame.push_back((dec + pre) / k);
    rows.push_back({std::to_string(i + 1), std::to_string(k), std::to_string(video.height()), std::to_string(video.width()),
                    report::real(dec), report::real(pre), report::real(dec + pre), report::real(per_frame.back())});
  }
  report::write_csv(dir / "bench.csv",
                    {"repeat", "frames", "height", "width", "decompose_s", "predict_s", "total_s", "per_frame_s"}, rows);
  const double p50 = percentile(per_frame, 0.50), p95 = percentile(per_frame, 0.95);
  const double mean = std::accumulate(per_frame.begin(), per_frame.end(), 0.0) / static_cast<double>(per_frame.size());
  const bool pass = mean < o.budget_s;
  report::write_json(dir / "bench_summary.json", {{"frames", k},
                                                   {"height", video.height()},
                                                   {"width", video.width()},
                                                   {"repeat", o.repeat},
                                                   {"per_frame_s_mean", mean},
                                                   {"per_frame_s_p50", p50},
                                                   {"per_frame_s_p95", p95},
                                                   {"budget_s", o.budget_s},
                                                   {"pass", pass}});
  out << fmt::format("{} frames at {}x{}: per-frame p50 {:.3e} s  p95 {:.3e} s  mean {:.3e} s  budget {} s  {}\n", k,
                     video.height(), video.width(), p50, p95, mean, o.budget_s, pass ? "PASS" : "FAIL");
  return kSuccess;
}

// ---- report ------------------------------------------------------------------

int cmd_report(const ReportOptions& o, const CLI::App* sub, std::ostream& out) {
  const Cohort c = open_cohort(o.cohort);
  if (c.records.empty()) throw ConfigError("cohort has no records");
  std::vector<Partition> assignment;
  if (!o.split.empty()) {
    const auto split = read_split(o.split);
    for (const auto& r : c.records) {
      auto it = split.find(r.video_id);
      if (it == split.end()) throw ConfigError("record " + r.video_id + " is missing from the split file");
      assignment.push_back(it->second);
    }
  } else {
    assignment = split_dataset(c.records, parse_ratios(o.ratios), o.split_seed).assignment;
  }
  if (!o.decompositions.empty()) require_dir(o.decompositions, "decompositions directory");
  const fs::path dir = make_out_dir(o.out);
  write_run_config(dir, sub);

  std::array<std::array<int, kNumPartitions>, kNumClasses> counts{};
  std::array<std::set<std::string>, kNumClasses> animals;
  std::array<std::vector<double>, kNumClasses> onset, age;
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    const int g = static_cast<int>(c.records[i].group);
    ++counts[g][static_cast<int>(assignment[i])];
    animals[g].insert(c.records[i].animal_id);
    onset[g].push_back(c.records[i].onset_age_weeks);
    age[g].push_back(c.records[i].acquisition_age_weeks);
  }
  std::vector<report::Row> rows;
  std::array<int, kNumPartitions> totals{};
  for (int g = 0; g < kNumClasses; ++g) {
    const int n = counts[g][0] + counts[g][1] + counts[g][2];
    const OnsetSummary os = summarize(onset[g]);
    const auto [amin, amax] = std::minmax_element(age[g].begin(), age[g].end());
    report::Row row{std::string(kClassNames[g]), std::to_string(animals[g].size()), std::to_string(n)};
    for (int p = 0; p < kNumPartitions; ++p) {
      row.push_back(std::to_string(counts[g][p]));
      totals[p] += counts[g][p];
    }
    if (n > 0)
      row.insert(row.end(), {report::real(os.mean), report::real(os.sd), report::real(*amin), report::real(*amax)});
    else
      row.insert(row.end(), 4, std::string());
    rows.push_back(std::move(row));
  }
  rows.push_back({"total", std::to_string(animals[0].size() + animals[1].size() + animals[2].size() + animals[3].size()),
                  std::to_string(c.records.size()), std::to_string(totals[0]), std::to_string(totals[1]),
                  std::to_string(totals[2]), "", "", "", ""});
  report::write_csv(dir / "dataset_summary.csv",
                    {"group", "animals", "sequences", "train", "val", "test", "onset_mean_weeks", "onset_sd_weeks",
                     "age_min_weeks", "age_max_weeks"},
                    rows);
  std::vector<std::string> cats(kClassNames.begin(), kClassNames.end());
  std::vector<report::BarSeries> series;
  for (int p = 0; p < kNumPartitions; ++p) {
    report::BarSeries s{std::string(kPartitionNames[p]), {}};
    for (int g = 0; g < kNumClasses; ++g) s.values.push_back(counts[g][p]);
    series.push_back(std::move(s));
  }
  report::write_text(dir / "dataset_summary.svg", report::stacked_bar_svg(cats, series, "Sequences per group and partition", "sequences"));

  int spectra = 0;
  if (!o.decompositions.empty()) {
    fs::create_directories(dir / "spectra");
    for (const auto& r : c.records) {
      const fs::path p = fs::path(o.decompositions) / (r.video_id + ".dec");
      if (!fs::exists(p)) continue;
      report::write_text(dir / "spectra" / (r.video_id + "_spectrum.svg"),
                         report::spectrum_svg(load_mode_set(p), r.video_id + " (" + std::string(to_string(r.group)) + ")"));
      ++spectra;
    }
  }
  out << fmt::format("dataset summary of {} sequences, {} spectra, in {}\n", c.records.size(), spectra, dir.string());
  return kSuccess;
}

// ---- JSON configuration files --------------------------------------------------

bool given_on_command_line(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

/// Options from --config FILE that the command line did not set are appended as flags,
/// so command-line values always win. Keys may be flat or nested under the subcommand name.
std::vector<std::string> merge_json_config(const std::vector<std::string>& args, CLI::App& app) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;
  std::string sub_name;
  for (const auto& a : args)
    if (!a.empty() && a[0] != '-') {
      sub_name = a;
      break;
    }
  CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(sub_name);
  } catch (const CLI::OptionNotFound&) {
    return args;
  }
  std::ifstream in(config_path);
  if (!in) throw ConfigError("cannot read config file " + config_path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + config_path + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");

  std::vector<std::pair<std::string, json>> entries;
  std::set<std::string> subcommands;
  for (const CLI::App* s : app.get_subcommands({})) subcommands.insert(s->get_name());
  for (const auto& [k, v] : doc.items()) {
    if (subcommands.count(k)) {
      if (k != sub_name) continue;
      if (!v.is_object()) throw ConfigError("config section '" + k + "' must be an object");
      for (const auto& [k2, v2] : v.items()) entries.emplace_back(k2, v2);
    } else {
      entries.emplace_back(k, v);
    }
  }

  std::vector<std::string> merged = args;
  for (auto& [key, value] : entries) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    const std::string flag = "--" + name;
    const CLI::Option* opt = sub->get_option_no_throw(flag);
    if (!opt || flag == "--config") {
      if (flag == "--config") continue;
      throw ConfigError("config file: '" + key + "' is not an option of " + sub_name);
    }
    if (given_on_command_line(args, flag)) continue;
    if (opt->get_expected_max() == 0) {
      if (!value.is_boolean()) throw ConfigError("config file: '" + key + "' must be true or false");
      if (value.get<bool>()) merged.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& item : value) {
        merged.push_back(flag);
        merged.push_back(scalar_text(item));
      }
    } else if (!value.is_null()) {
      merged.push_back(flag);
      merged.push_back(scalar_text(value));
    }
  }
  return merged;
}

}  // namespace

double percentile(std::vector<double> values, double p) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cardiac cine decomposition, diagnosis and onset prognosis", "modaldx"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SynthOptions so;
  DecomposeOptions dopt;
  FitOptions po, to;
  PredictOptions pr;
  EvalOptions eo;
  BenchOptions bo;
  ReportOptions ro;
  std::string config_file;
  auto add_config = [&](CLI::App* s) { s->add_option("--config", config_file, "JSON file of option values (flags win)"); };

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic labelled cohort");
  synth->add_option("--animals", so.animals, "Animals per group")->capture_default_str();
  synth->add_option("--scans", so.scans, "Scans per animal")->capture_default_str();
  synth->add_option("--seed", so.seed, "Root seed")->capture_default_str();
  synth->add_option("--out", so.out, "Output cohort directory");
  synth->add_option("--frames", so.frames, "Frames per video")->capture_default_str();
  synth->add_option("--dt", so.dt, "Frame interval (s)")->capture_default_str();
  synth->add_option("--height", so.height, "Frame height")->capture_default_str();
  synth->add_option("--width", so.width, "Frame width")->capture_default_str();
  synth->add_option("--noise-sd", so.noise_sd, "Additive noise sd (intensity units)")->capture_default_str();
  synth->add_option("--offset", so.offset, "Background intensity")->capture_default_str();
  synth->add_option("--ratios", so.ratios, "Split ratios for the bundled split.csv")->capture_default_str();
  synth->add_option("--profiles", so.profiles, "JSON file with four group profiles");
  add_config(synth);

  CLI::App* dec = app.add_subcommand("decompose", "HODMD of every video plus feature tensors");
  dec->add_option("--cohort", dopt.cohort, "Cohort directory");
  dec->add_option("--video", dopt.videos, "Video directory (repeatable)");
  dec->add_option("--out", dopt.out, "Output directory");
  add_decompose_flags(dec, dopt.flags);
  add_config(dec);

  CLI::App* pre = app.add_subcommand("pretrain", "Masked-patch pretraining on the training partition");
  add_fit_options(pre, po, 20);
  add_config(pre);

  CLI::App* tr = app.add_subcommand("train", "Supervised training of both heads");
  add_fit_options(tr, to, 60);
  add_config(tr);

  CLI::App* pred = app.add_subcommand("predict", "Diagnosis and onset prediction");
  pred->add_option("--checkpoint", pr.checkpoint, "Model checkpoint");
  pred->add_option("--cohort", pr.cohort, "Cohort directory");
  pred->add_option("--features", pr.features, "Directory of .feat files");
  pred->add_option("--split", pr.split, "split.csv written by train");
  pred->add_option("--partition", pr.partition, "all | train | val | test")
      ->capture_default_str()
      ->check(CLI::IsMember({"all", "train", "val", "test"}));
  pred->add_option("--video", pr.videos, "Video directory (repeatable; decomposed on the fly)");
  pred->add_option("--age", pr.ages, "Acquisition age in weeks (one, or one per video)");
  pred->add_option("--out", pr.out, "Output directory");
  add_decompose_flags(pred, pr.flags);
  add_config(pred);

  CLI::App* ev = app.add_subcommand("eval", "Metrics, tables and plots from predictions");
  ev->add_option("--predictions", eo.predictions, "predictions.csv");
  ev->add_option("--cohort", eo.cohort, "Cohort directory (ground truth)");
  ev->add_option("--out", eo.out, "Output directory");
  ev->add_option("--age-edges", eo.age_edges, "Age interval edges in weeks")->capture_default_str();
  ev->add_option("--decompositions", eo.decompositions, "Directory of .dec files for spectrum charts");
  add_config(ev);

  CLI::App* bench = app.add_subcommand("bench", "Per-frame latency of decompose + predict");
  bench->add_option("--video", bo.video, "Video directory");
  bench->add_flag("--synthetic", bo.synthetic, "Benchmark a generated 100-frame cine");
  bench->add_option("--checkpoint", bo.checkpoint, "Model checkpoint (fresh model if omitted)");
  bench->add_option("--repeat", bo.repeat, "Timing samples")->capture_default_str();
  bench->add_option("--seed", bo.seed, "Seed of the generated cine")->capture_default_str();
  bench->add_option("--budget", bo.budget_s, "Per-frame budget (s)")->capture_default_str();
  bench->add_option("--out", bo.out, "Output directory");
  add_decompose_flags(bench, bo.flags);
  add_config(bench);

  CLI::App* rep = app.add_subcommand("report", "Dataset summary and spectrum charts");
  rep->add_option("--cohort", ro.cohort, "Cohort directory");
  rep->add_option("--split", ro.split, "split.csv (recomputed from --ratios/--split-seed if omitted)");
  rep->add_option("--ratios", ro.ratios, "Split ratios")->capture_default_str();
  rep->add_option("--split-seed", ro.split_seed, "Split seed")->capture_default_str();
  rep->add_option("--decompositions", ro.decompositions, "Directory of .dec files");
  rep->add_option("--out", ro.out, "Output directory");
  add_config(rep);

  try {
    std::vector<std::string> merged = merge_json_config(args, app);
    std::reverse(merged.begin(), merged.end());
    app.parse(merged);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return kSuccess;
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
  for (CLI::App* s : app.get_subcommands()) {
    if (!s->parsed()) continue;
    if (s->count("--help")) {
      out << s->help();
      return kSuccess;
    }
  }

  try {
    if (synth->parsed()) return cmd_synth(so, synth, out);
    if (dec->parsed()) return cmd_decompose(dopt, dec, out, err);
    if (pre->parsed()) return cmd_pretrain(po, pre, out);
    if (tr->parsed()) return cmd_train(to, tr, out);
    if (pred->parsed()) return cmd_predict(pr, pred, out, err);
    if (ev->parsed()) return cmd_eval(eo, ev, out);
    if (bench->parsed()) return cmd_bench(bo, bench, out);
    if (rep->parsed()) return cmd_report(ro, rep, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kPartialFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kPartialFailure;
  }
  return kConfigError;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace modaldx::cli
