#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modaldx/eval.hpp"
#include "modaldx/hodmd.hpp"

namespace modaldx::report {

/// Shortest representation that round-trips to the same double.
std::string real(double v);
/// Empty cell for an absent value.
std::string real(const std::optional<double>& v);

using Row = std::vector<std::string>;

void write_csv(const std::filesystem::path& path, const Row& header, const std::vector<Row>& rows);

struct Table {
  Row header;
  std::vector<Row> rows;
};

/// Minimal reader for the files write_csv produces (no quoting).
Table read_csv(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

// ---- eval tables --------------------------------------------------------

Table accuracy_table(const ConfusionMatrix& m);
Table confusion_table(const ConfusionMatrix& m);
Table stratified_table(const StratifiedConfusion& s);
Table rmse_table(const RmseReport& r);
Table onset_distribution_table(const RmseReport& r);
nlohmann::json summary_json(const EvalReport& rep);

/// accuracy.csv, confusion.csv, confusion_by_age.csv, rmse.csv, onset_distribution.csv,
/// summary.json and the confusion / onset scatter plots.
void write_eval_report(const EvalReport& rep, std::span<const EvalRecord> records, const std::filesystem::path& dir);

std::string interval_label(const AgeInterval& iv);

// ---- decomposition tables -----------------------------------------------

Table spectrum_table(const ModeSet& modes);

// ---- SVG ----------------------------------------------------------------

std::string confusion_svg(const ConfusionMatrix& m, const std::string& title);
std::string onset_scatter_svg(std::span<const EvalRecord> records, const std::string& title);
std::string spectrum_svg(const ModeSet& modes, const std::string& title);

struct BarSeries {
  std::string name;
  std::vector<double> values;  // one per category
};

/// Stacked bars, one per category.
std::string stacked_bar_svg(const std::vector<std::string>& categories, const std::vector<BarSeries>& series,
                            const std::string& title, const std::string& y_label);

}  // namespace modaldx::report
