#include "report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

namespace modaldx::report {

namespace fs = std::filesystem;

std::string real(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{}", v);
}

std::string real(const std::optional<double>& v) { return v ? real(*v) : std::string(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void write_csv(const fs::path& path, const Row& header, const std::vector<Row>& rows) {
  std::string text;
  auto line = [&](const Row& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) text += ',';
      text += r[i];
    }
    text += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  write_text(path, text);
}

Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  Table t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Row r;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) r.push_back(cell);
    if (line.back() == ',') r.emplace_back();
    if (first) {
      t.header = std::move(r);
      first = false;
    } else {
      if (r.size() != t.header.size()) throw DataError(path.string() + ": ragged row: " + line);
      t.rows.push_back(std::move(r));
    }
  }
  if (first) throw DataError(path.string() + ": empty CSV");
  return t;
}

std::string interval_label(const AgeInterval& iv) {
  if (std::isinf(iv.hi)) return fmt::format("[{},inf)", real(iv.lo));
  return fmt::format("[{},{})", real(iv.lo), real(iv.hi));
}

Table accuracy_table(const ConfusionMatrix& m) {
  Table t{{"class", "n", "correct", "accuracy"}, {}};
  for (int c = 0; c < kNumClasses; ++c)
    t.rows.push_back({std::string(kClassNames[c]), std::to_string(m.row_total(c)), std::to_string(m.counts[c][c]),
                      real(m.class_accuracy(c))});
  t.rows.push_back({"overall", std::to_string(m.total()), std::to_string(m.trace()), real(m.overall_accuracy())});
  return t;
}

Table confusion_table(const ConfusionMatrix& m) {
  Table t{{"true\\predicted"}, {}};
  for (auto n : kClassNames) t.header.emplace_back(n);
  for (int r = 0; r < kNumClasses; ++r) {
    Row row{std::string(kClassNames[r])};
    for (int c = 0; c < kNumClasses; ++c) row.push_back(std::to_string(m.counts[r][c]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table stratified_table(const StratifiedConfusion& s) {
  Table t{{"age_interval_weeks", "true"}, {}};
  for (auto n : kClassNames) t.header.emplace_back(n);
  t.header.emplace_back("interval_accuracy");
  for (std::size_t i = 0; i < s.intervals.size(); ++i) {
    const ConfusionMatrix& m = s.matrices[i];
    for (int r = 0; r < kNumClasses; ++r) {
      Row row{interval_label(s.intervals[i]), std::string(kClassNames[r])};
      for (int c = 0; c < kNumClasses; ++c) row.push_back(std::to_string(m.counts[r][c]));
      row.push_back(real(m.overall_accuracy()));
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

Table rmse_table(const RmseReport& r) {
  Table t{{"group", "n", "rmse_weeks"}, {}};
  int total = 0;
  for (int g = 0; g < kNumClasses; ++g) {
    t.rows.push_back({std::string(kClassNames[g]), std::to_string(r.counts[g]), real(r.per_group[g])});
    total += r.counts[g];
  }
  t.rows.push_back({"overall", std::to_string(total), real(r.overall)});
  return t;
}

Table onset_distribution_table(const RmseReport& r) {
  Table t{{"group", "n", "real_mean_weeks", "real_sd_weeks", "predicted_mean_weeks", "predicted_sd_weeks"}, {}};
  for (int g = 0; g < kNumClasses; ++g) {
    Row row{std::string(kClassNames[g]), std::to_string(r.counts[g])};
    if (r.real[g]) {
      row.insert(row.end(), {real(r.real[g]->mean), real(r.real[g]->sd), real(r.predicted[g]->mean),
                             real(r.predicted[g]->sd)});
    } else {
      row.insert(row.end(), 4, std::string());
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

nlohmann::json summary_json(const EvalReport& rep) {
  using nlohmann::json;
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json per_class = json::object(), rmse_group = json::object(), dist = json::object();
  for (int c = 0; c < kNumClasses; ++c) {
    const std::string name(kClassNames[c]);
    per_class[name] = opt(rep.confusion.class_accuracy(c));
    rmse_group[name] = opt(rep.onset.per_group[c]);
    if (rep.onset.real[c])
      dist[name] = {{"real_mean", rep.onset.real[c]->mean},
                    {"real_sd", rep.onset.real[c]->sd},
                    {"predicted_mean", rep.onset.predicted[c]->mean},
                    {"predicted_sd", rep.onset.predicted[c]->sd},
                    {"n", rep.onset.counts[c]}};
    else
      dist[name] = nullptr;
  }
  json matrix = json::array();
  for (const auto& row : rep.confusion.counts) matrix.push_back(row);
  json by_age = json::array();
  for (std::size_t i = 0; i < rep.by_age.intervals.size(); ++i) {
    json m = json::array();
    for (const auto& row : rep.by_age.matrices[i].counts) m.push_back(row);
    by_age.push_back({{"interval", interval_label(rep.by_age.intervals[i])},
                      {"n", rep.by_age.matrices[i].total()},
                      {"accuracy", opt(rep.by_age.matrices[i].overall_accuracy())},
                      {"confusion", m}});
  }
  return {{"n", rep.confusion.total()},
          {"classes", kClassNames},
          {"overall_accuracy", opt(rep.confusion.overall_accuracy())},
          {"per_class_accuracy", per_class},
          {"confusion", matrix},
          {"confusion_by_age", by_age},
          {"rmse_weeks", rep.onset.overall},
          {"rmse_weeks_per_group", rmse_group},
          {"onset_distribution", dist}};
}

Table spectrum_table(const ModeSet& ms) {
  Table t{{"mode", "amplitude", "frequency_rad_s", "frequency_hz", "growth_rate_per_s", "eigenvalue_re", "eigenvalue_im"},
          {}};
  for (std::size_t i = 0; i < ms.modes.size(); ++i) {
    const DmdMode& m = ms.modes[i];
    t.rows.push_back({std::to_string(i), real(m.amplitude), real(m.frequency_rad_s),
                      real(m.frequency_rad_s / (2.0 * std::numbers::pi)), real(m.growth_rate_per_s),
                      real(m.eigenvalue.real()), real(m.eigenvalue.imag())});
  }
  return t;
}

// ---- SVG ------------------------------------------------------------------

namespace {

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) { return fmt::format("{:.2f}", v); }

std::string open_svg(int w, int h, const std::string& title) {
  return fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{3}</text>\n",
      w, h, w / 2, esc(title));
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle", const char* extra = "") {
  return fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"{}\"{}>{}</text>\n", num(x), num(y), anchor, extra, esc(s));
}

std::string line(double x1, double y1, double x2, double y2, const char* stroke = "black") {
  return fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\"/>\n", num(x1), num(y1), num(x2),
                     num(y2), stroke);
}

constexpr std::array<const char*, kNumClasses> kGroupColours = {"#4c72b0", "#dd8452", "#55a868", "#c44e52"};

// "Nice" axis ticks covering [lo, hi].
std::vector<double> ticks(double lo, double hi, int target = 5) {
  if (!(hi > lo)) hi = lo + 1.0;
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) out.push_back(v);
  return out;
}

}  // namespace

std::string confusion_svg(const ConfusionMatrix& m, const std::string& title) {
  const int cell = 70, left = 90, top = 60;
  const int w = left + cell * kNumClasses + 30, h = top + cell * kNumClasses + 60;
  std::string s = open_svg(w, h, title);
  for (int r = 0; r < kNumClasses; ++r) {
    const long n = m.row_total(r);
    for (int c = 0; c < kNumClasses; ++c) {
      const double frac = n > 0 ? static_cast<double>(m.counts[r][c]) / static_cast<double>(n) : 0.0;
      const int shade = static_cast<int>(std::lround(255.0 - 200.0 * frac));
      const double x = left + c * cell, y = top + r * cell;
      s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"rgb({},{},255)\" stroke=\"#999\"/>\n",
                       x, y, cell, cell, shade, shade);
      s += text(x + cell / 2.0, y + cell / 2.0 - 2, std::to_string(m.counts[r][c]), "middle",
                frac > 0.6 ? " fill=\"white\"" : "");
      if (n > 0)
        s += text(x + cell / 2.0, y + cell / 2.0 + 14, fmt::format("{:.0f}%", 100.0 * frac), "middle",
                  frac > 0.6 ? " fill=\"white\" font-size=\"10\"" : " font-size=\"10\"");
    }
    s += text(left - 8, top + r * cell + cell / 2.0 + 4, std::string(kClassNames[r]), "end");
  }
  for (int c = 0; c < kNumClasses; ++c)
    s += text(left + c * cell + cell / 2.0, top + kNumClasses * cell + 18, std::string(kClassNames[c]));
  s += text(left + kNumClasses * cell / 2.0, top + kNumClasses * cell + 42, "predicted");
  s += fmt::format("<text x=\"20\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {})\">true</text>\n",
                   top + kNumClasses * cell / 2, top + kNumClasses * cell / 2);
  return s + "</svg>\n";
}

std::string onset_scatter_svg(std::span<const EvalRecord> records, const std::string& title) {
  const int w = 480, h = 480, left = 60, right = 20, top = 40, bottom = 60;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : records) {
    lo = std::min({lo, r.onset_true_weeks, r.onset_pred_weeks});
    hi = std::max({hi, r.onset_true_weeks, r.onset_pred_weeks});
  }
  if (records.empty()) lo = 0.0, hi = 1.0;
  const auto tk = ticks(lo, hi);
  lo = std::min(lo, tk.front());
  hi = std::max(hi, tk.back());
  const double pw = w - left - right, ph = h - top - bottom;
  auto sx = [&](double v) { return left + (v - lo) / (hi - lo) * pw; };
  auto sy = [&](double v) { return top + ph - (v - lo) / (hi - lo) * ph; };

  std::string s = open_svg(w, h, title);
  s += line(sx(lo), sy(lo), sx(hi), sy(hi), "#bbb");
  s += line(left, top + ph, left + pw, top + ph);
  s += line(left, top, left, top + ph);
  for (double t : tk) {
    s += line(sx(t), top + ph, sx(t), top + ph + 4);
    s += text(sx(t), top + ph + 16, real(t));
    s += line(left - 4, sy(t), left, sy(t));
    s += text(left - 6, sy(t) + 4, real(t), "end");
  }
  s += text(left + pw / 2, h - 20, "real onset (weeks)");
  s += fmt::format("<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">predicted onset "
                   "(weeks)</text>\n",
                   num(top + ph / 2));
  for (const auto& r : records)
    s += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{}\" fill-opacity=\"0.8\"/>\n", num(sx(r.onset_true_weeks)),
                     num(sy(r.onset_pred_weeks)), kGroupColours[static_cast<int>(r.truth)]);
  for (int g = 0; g < kNumClasses; ++g) {
    const double y = top + 10 + 16 * g;
    s += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{}\"/>\n", left + 12, num(y), kGroupColours[g]);
    s += text(left + 22, y + 4, std::string(kClassNames[g]), "start");
  }
  return s + "</svg>\n";
}

std::string stacked_bar_svg(const std::vector<std::string>& categories, const std::vector<BarSeries>& series,
                            const std::string& title, const std::string& y_label) {
  const int bar = 50, gap = 30, left = 70, top = 40, bottom = 50, ph = 260;
  const int w = left + static_cast<int>(categories.size()) * (bar + gap) + 120, h = top + ph + bottom;
  double hi = 0.0;
  for (std::size_t c = 0; c < categories.size(); ++c) {
    double sum = 0.0;
    for (const auto& s : series) sum += s.values.at(c);
    hi = std::max(hi, sum);
  }
  const auto tk = ticks(0.0, hi > 0 ? hi : 1.0);
  hi = tk.back();
  auto sy = [&](double v) { return top + ph - v / hi * ph; };
  static constexpr std::array<const char*, 6> colours = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};

  std::string s = open_svg(w, h, title);
  s += line(left, top, left, top + ph);
  s += line(left, top + ph, w - 120, top + ph);
  for (double t : tk) {
    s += line(left - 4, sy(t), left, sy(t));
    s += text(left - 6, sy(t) + 4, real(t), "end");
  }
  s += fmt::format("<text x=\"18\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0})\">{1}</text>\n",
                   top + ph / 2, esc(y_label));
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const double x = left + gap / 2.0 + static_cast<double>(c) * (bar + gap);
    double base = 0.0;
    for (std::size_t k = 0; k < series.size(); ++k) {
      const double v = series[k].values[c];
      if (v > 0)
        s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n", num(x), num(sy(base + v)),
                         bar, num(sy(base) - sy(base + v)), colours[k % colours.size()]);
      base += v;
    }
    s += text(x + bar / 2.0, sy(base) - 4, real(base));
    s += text(x + bar / 2.0, top + ph + 16, categories[c]);
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const double y = top + 10 + 18.0 * static_cast<double>(k);
    s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n", w - 110, num(y - 10),
                     colours[k % colours.size()]);
    s += text(w - 92, y, series[k].name, "start");
  }
  return s + "</svg>\n";
}

std::string spectrum_svg(const ModeSet& ms, const std::string& title) {
  const int left = 70, top = 40, bottom = 70, ph = 260;
  const int n = static_cast<int>(ms.modes.size());
  const int bar = 24, gap = 12;
  const int w = std::max(360, left + n * (bar + gap) + 30), h = top + ph + bottom;
  double hi = 0.0;
  for (const auto& m : ms.modes) hi = std::max(hi, m.amplitude);
  const auto tk = ticks(0.0, hi > 0 ? hi : 1.0);
  hi = tk.back();
  auto sy = [&](double v) { return top + ph - v / hi * ph; };

  std::string s = open_svg(w, h, title);
  s += line(left, top, left, top + ph);
  s += line(left, top + ph, w - 20, top + ph);
  for (double t : tk) {
    s += line(left - 4, sy(t), left, sy(t));
    s += text(left - 6, sy(t) + 4, real(t), "end");
  }
  s += fmt::format("<text x=\"18\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0})\">amplitude</text>\n",
                   top + ph / 2);
  for (int i = 0; i < n; ++i) {
    const DmdMode& m = ms.modes[static_cast<std::size_t>(i)];
    const double x = left + gap / 2.0 + i * (bar + gap);
    const char* fill = m.growth_rate_per_s > 1e-6 ? "#c44e52" : (m.growth_rate_per_s < -1e-6 ? "#4c72b0" : "#777");
    s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n", num(x), num(sy(m.amplitude)),
                     bar, num(sy(0) - sy(m.amplitude)), fill);
    const double hz = m.frequency_rad_s / (2.0 * std::numbers::pi);
    const double cx = x + bar / 2.0, cy = top + ph + 12;
    s += fmt::format("<text x=\"{0}\" y=\"{1}\" text-anchor=\"end\" font-size=\"10\" transform=\"rotate(-60 {0} {1})\">"
                     "{2} Hz</text>\n",
                     num(cx), num(cy), fmt::format("{:.2f}", hz));
  }
  s += text(w / 2.0, h - 6, "mode (frequency); red growing, blue decaying", "middle", " font-size=\"10\"");
  return s + "</svg>\n";
}

void write_eval_report(const EvalReport& rep, std::span<const EvalRecord> records, const fs::path& dir) {
  auto put = [&](const char* name, const Table& t) { write_csv(dir / name, t.header, t.rows); };
  put("accuracy.csv", accuracy_table(rep.confusion));
  put("confusion.csv", confusion_table(rep.confusion));
  put("confusion_by_age.csv", stratified_table(rep.by_age));
  put("rmse.csv", rmse_table(rep.onset));
  put("onset_distribution.csv", onset_distribution_table(rep.onset));
  write_json(dir / "summary.json", summary_json(rep));
  write_text(dir / "confusion.svg", confusion_svg(rep.confusion, "Confusion matrix (test)"));
  for (std::size_t i = 0; i < rep.by_age.intervals.size(); ++i)
    write_text(dir / fmt::format("confusion_age_{}.svg", i),
               confusion_svg(rep.by_age.matrices[i], "Acquisition age " + interval_label(rep.by_age.intervals[i]) + " weeks"));
  write_text(dir / "onset_scatter.svg", onset_scatter_svg(records, "Predicted vs real onset age"));
}

}  // namespace modaldx::report
