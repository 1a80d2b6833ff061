#include <sstream>

#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "modaldx/eval.hpp"
#include "modaldx/features.hpp"
#include "modaldx/hodmd.hpp"
#include "modaldx/ingest.hpp"
#include "modaldx/model.hpp"
#include "modaldx/pipeline.hpp"
#include "modaldx/synth.hpp"

#ifdef MODALDX_WITH_CLI
#include "cli.hpp"
#endif

namespace py = pybind11;
using namespace modaldx;

namespace {

HodmdConfig make_hodmd(int k, double dt, int delay, double eps_svd, double eps_amp) {
  HodmdConfig c = default_hodmd_config(k, dt);
  if (delay > 0) c.delay = delay;
  c.eps_svd = eps_svd;
  c.eps_amp = eps_amp;
  return c;
}

py::dict features_dict(const FeatureTensor& x) {
  py::array_t<double> images({x.m_modes, kImageChannels, x.height, x.width});
  std::copy(x.mode_images.begin(), x.mode_images.end(), images.mutable_data());
  py::array_t<bool> mask(x.m_modes);
  for (int s = 0; s < x.m_modes; ++s) mask.mutable_at(s) = x.validity_mask[s];
  py::dict d;
  d["mode_images"] = images;
  d["mode_scalars"] = Matrix(x.mode_scalars);
  d["validity_mask"] = mask;
  return d;
}

std::vector<HeartState> parse_labels(const std::vector<std::string>& names) {
  std::vector<HeartState> out;
  for (const auto& n : names) out.push_back(parse_heart_state(n));
  return out;
}

}  // namespace

PYBIND11_MODULE(_modaldx, m) {
  m.doc() = "HODMD decomposition, features, diagnosis/prognosis model and metrics";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  static py::exception<DataError> data_error(m, "DataError", error.ptr());
  static py::exception<ConfigError> config_error(m, "ConfigError", error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      py::set_error(config_error, e.what());
    } catch (const DataError& e) {
      py::set_error(data_error, e.what());
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.attr("CLASS_NAMES") = std::vector<std::string>(kClassNames.begin(), kClassNames.end());

  py::class_<ModeSet>(m, "ModeSet")
      .def_property_readonly("spectral_complexity", &ModeSet::spectral_complexity)
      .def_readonly("spatial_complexity", &ModeSet::spatial_complexity)
      .def_readonly("reconstruction_rrmse", &ModeSet::reconstruction_rrmse)
      .def_readonly("ill_conditioned", &ModeSet::ill_conditioned)
      .def_readonly("k_snapshots", &ModeSet::k_snapshots)
      .def_property_readonly("delay", [](const ModeSet& s) { return s.config.delay; })
      .def_property_readonly("amplitudes",
                             [](const ModeSet& s) {
                               Vector v(s.spectral_complexity());
                               for (int i = 0; i < v.size(); ++i) v(i) = s.modes[i].amplitude;
                               return v;
                             })
      .def_property_readonly("frequencies_rad_s",
                             [](const ModeSet& s) {
                               Vector v(s.spectral_complexity());
                               for (int i = 0; i < v.size(); ++i) v(i) = s.modes[i].frequency_rad_s;
                               return v;
                             })
      .def_property_readonly("growth_rates_per_s",
                             [](const ModeSet& s) {
                               Vector v(s.spectral_complexity());
                               for (int i = 0; i < v.size(); ++i) v(i) = s.modes[i].growth_rate_per_s;
                               return v;
                             })
      .def_property_readonly("eigenvalues",
                             [](const ModeSet& s) {
                               CVector v(s.spectral_complexity());
                               for (int i = 0; i < v.size(); ++i) v(i) = s.modes[i].eigenvalue;
                               return v;
                             })
      .def_property_readonly("shapes",
                             [](const ModeSet& s) {
                               CMatrix u(s.pixels(), s.spectral_complexity());
                               for (int i = 0; i < u.cols(); ++i) u.col(i) = s.modes[i].spatial_shape;
                               return u;
                             })
      .def("reconstruct", [](const ModeSet& s, int k) { return reconstruct(s, k); }, py::arg("k_snapshots"))
      .def("save", [](const ModeSet& s, const std::filesystem::path& p) { save_mode_set(s, p); })
      .def("__repr__", [](const ModeSet& s) {
        std::ostringstream o;
        o << "<ModeSet N=" << s.spectral_complexity() << " n=" << s.spatial_complexity
          << " rrmse=" << s.reconstruction_rrmse << ">";
        return o.str();
      });

  m.def(
      "hodmd",
      [](const Matrix& data, double dt, int delay, double eps_svd, double eps_amp, int height, int width) {
        SnapshotMatrix s{data, dt, height, width};
        return hodmd(s, make_hodmd(static_cast<int>(data.cols()), dt, delay, eps_svd, eps_amp));
      },
      py::arg("snapshots"), py::arg("dt"), py::arg("delay") = 0, py::arg("eps_svd") = 1e-3, py::arg("eps_amp") = 1e-3,
      py::arg("height") = 0, py::arg("width") = 0,
      "HODMD of a J x K snapshot matrix; delay 0 picks max(2, round(K/10)).");

  m.def("load_mode_set", [](const std::filesystem::path& p) { return load_mode_set(p); });

  m.def(
      "load_video",
      [](const std::filesystem::path& dir) {
        const VideoSequence v = load_video(dir);
        py::array_t<std::uint8_t> frames({v.frame_count(), v.height(), v.width()});
        std::uint8_t* out = frames.mutable_data();
        for (const auto& f : v.frames) out = std::copy(f.pixels.begin(), f.pixels.end(), out);
        return py::make_tuple(frames, v.frame_interval_s);
      },
      py::arg("path"), "Returns (frames[K, H, W] uint8, frame_interval_s).");

  m.def(
      "decompose_video",
      [](const std::filesystem::path& dir, int size, int delay, double eps_svd, double eps_amp, int m_modes, int grid) {
        const VideoSequence v = load_video(dir);
        DecomposeOptions o;
        o.preprocess.target_h = o.preprocess.target_w = size;
        o.hodmd = make_hodmd(v.frame_count(), v.frame_interval_s, delay, eps_svd, eps_amp);
        o.features.m_modes = m_modes;
        o.features.patch_h = o.features.patch_w = grid;
        const Decomposition d = decompose_video(v, o);
        return py::make_tuple(d.modes, features_dict(d.features));
      },
      py::arg("path"), py::arg("size") = 64, py::arg("delay") = 0, py::arg("eps_svd") = 1e-3, py::arg("eps_amp") = 1e-3,
      py::arg("m_modes") = 8, py::arg("grid") = 64, "Returns (ModeSet, feature dict).");

  m.def("load_features", [](const std::filesystem::path& p) { return features_dict(load_features(p)); });

  m.def(
      "write_cohort",
      [](const std::filesystem::path& dir, int animals, int scans, std::uint64_t seed) {
        const CohortConfig cfg;
        const Dataset ds = generate_cohort(animals, scans, cfg, seed);
        write_cohort(ds, cfg, dir);
        return ds.size();
      },
      py::arg("path"), py::arg("animals_per_group"), py::arg("scans_per_animal"), py::arg("seed") = 0,
      "Writes a synthetic cohort with the default profiles; returns the number of videos.");

  m.def(
      "load_cohort",
      [](const std::filesystem::path& dir) {
        py::list out;
        for (const auto& r : load_cohort(dir).records) {
          py::dict d;
          d["video_id"] = r.video_id;
          d["animal_id"] = r.animal_id;
          d["group"] = std::string(to_string(r.group));
          d["acquisition_age_weeks"] = r.acquisition_age_weeks;
          d["onset_age_weeks"] = r.onset_age_weeks;
          d["video_path"] = r.video_path;
          out.append(d);
        }
        return out;
      },
      py::arg("path"));

  m.def(
      "split",
      [](const std::vector<std::string>& animals, const std::vector<std::string>& groups, std::array<double, 3> ratios,
         std::uint64_t seed) {
        if (animals.size() != groups.size()) throw ConfigError("animals and groups differ in length");
        std::vector<SplitKey> keys;
        for (std::size_t i = 0; i < animals.size(); ++i) keys.push_back({animals[i], parse_heart_state(groups[i])});
        const SplitPlan plan = split_dataset(std::span<const SplitKey>(keys), {ratios[0], ratios[1], ratios[2]}, seed);
        std::vector<std::string> out;
        for (Partition p : plan.assignment) out.emplace_back(to_string(p));
        return py::make_tuple(out, plan.warnings);
      },
      py::arg("animal_ids"), py::arg("groups"), py::arg("ratios") = std::array<double, 3>{0.6, 0.2, 0.2},
      py::arg("seed") = 0, "Returns (partition per record, warnings).");

  m.def(
      "confusion_matrix",
      [](const std::vector<std::string>& truth, const std::vector<std::string>& predicted) {
        if (truth.size() != predicted.size()) throw ConfigError("label lists differ in length");
        std::vector<LabelPair> pairs;
        for (std::size_t i = 0; i < truth.size(); ++i)
          pairs.push_back({parse_heart_state(truth[i]), parse_heart_state(predicted[i])});
        const ConfusionMatrix cm = confusion_matrix(pairs);
        py::array_t<long> counts({kNumClasses, kNumClasses});
        for (int r = 0; r < kNumClasses; ++r)
          for (int c = 0; c < kNumClasses; ++c) counts.mutable_at(r, c) = cm.counts[r][c];
        std::vector<std::optional<double>> per_class;
        for (int c = 0; c < kNumClasses; ++c) per_class.push_back(cm.class_accuracy(c));
        return py::make_tuple(counts, cm.overall_accuracy(), per_class);
      },
      py::arg("truth"), py::arg("predicted"), "Returns (counts[4, 4], overall accuracy, per-class accuracy).");

  m.def(
      "rmse",
      [](const std::vector<double>& truth, const std::vector<double>& predicted, const std::vector<std::string>& groups) {
        const auto g = parse_labels(groups);
        const RmseReport r = rmse(truth, predicted, g);
        py::dict per_group;
        for (int c = 0; c < kNumClasses; ++c) per_group[py::str(std::string(kClassNames[c]))] = r.per_group[c];
        return py::make_tuple(r.overall, per_group);
      },
      py::arg("truth_weeks"), py::arg("predicted_weeks"), py::arg("groups"));

  m.def(
      "predict",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& features, double age) {
        const Model model = load_checkpoint(checkpoint);
        const Prediction p = predict(model, load_features(features), age);
        py::dict d;
        d["label"] = std::string(to_string(p.label));
        d["probabilities"] = std::vector<double>(p.probabilities.begin(), p.probabilities.end());
        d["onset_age_weeks"] = p.onset_age_weeks;
        d["time_to_onset_weeks"] = p.time_to_onset_weeks;
        return d;
      },
      py::arg("checkpoint"), py::arg("features"), py::arg("acquisition_age_weeks"));

#ifdef MODALDX_WITH_CLI
  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one modaldx-cli subcommand in-process; returns (exit code, stdout, stderr).");
#endif
}
