#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "modaldx/common.hpp"
#include "modaldx/synth.hpp"

namespace modaldx {

enum class Partition : int { train = 0, val = 1, test = 2 };
inline constexpr int kNumPartitions = 3;
inline constexpr std::array<std::string_view, kNumPartitions> kPartitionNames = {"train", "val", "test"};

std::string_view to_string(Partition p);
Partition parse_partition(std::string_view name);

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;

  std::array<double, kNumPartitions> as_array() const { return {train, val, test}; }
};

void validate(const SplitRatios& r);

/// What the splitter needs to know about one sequence.
struct SplitKey {
  std::string animal_id;
  HeartState group = HeartState::CTL;
};

struct SplitPlan {
  std::vector<Partition> assignment;  // parallel to the input records
  SplitRatios ratios;
  std::uint64_t seed = 0;
  std::array<std::array<int, kNumPartitions>, kNumClasses> targets{};  // sequence targets per group
  std::vector<std::string> warnings;

  int count(Partition p) const;
  int count(Partition p, HeartState g, std::span<const SplitKey> keys) const;
};

/// Per-group sequence targets by largest remainder (ties resolved train, val, test).
std::array<int, kNumPartitions> partition_targets(int sequences, const SplitRatios& ratios);

/// Assigns whole animals to partitions, group by group: animals are shuffled with the seed,
/// ordered by sequence count (largest first) and each goes to the partition where it most
/// reduces the total deviation from the targets; ties go to the largest deficit relative to
/// the target.
SplitPlan split_dataset(std::span<const SplitKey> keys, const SplitRatios& ratios, std::uint64_t seed);
SplitPlan split_dataset(const Dataset& dataset, const SplitRatios& ratios, std::uint64_t seed);

std::vector<SplitKey> split_keys(const Dataset& dataset);

struct ConfusionMatrix {
  std::array<std::array<long, kNumClasses>, kNumClasses> counts{};  // rows true, cols predicted

  void add(HeartState truth, HeartState predicted) { ++counts[static_cast<int>(truth)][static_cast<int>(predicted)]; }
  long total() const;
  long row_total(int cls) const;
  long trace() const;
  /// diagonal / row sum; nullopt for a class with no samples.
  std::optional<double> class_accuracy(int cls) const;
  /// trace / total; nullopt when empty.
  std::optional<double> overall_accuracy() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

struct LabelPair {
  HeartState truth;
  HeartState predicted;
};

/// Throws ConfigError on empty input.
ConfusionMatrix confusion_matrix(std::span<const LabelPair> pairs);

/// Half-open [lo, hi) in weeks.
struct AgeInterval {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();

  bool contains(double age) const { return age >= lo && age < hi; }
};

std::vector<AgeInterval> default_age_intervals();

/// Parses "0,64,104" into [0,64), [64,104), [104,inf).
std::vector<AgeInterval> parse_age_edges(const std::string& edges);

struct StratifiedConfusion {
  std::vector<AgeInterval> intervals;
  std::vector<ConfusionMatrix> matrices;
};

/// Bins each pair by acquisition age; throws if an age falls outside all intervals or the
/// intervals overlap.
StratifiedConfusion stratified_confusion(std::span<const double> acquisition_ages, std::span<const LabelPair> pairs,
                                         const std::vector<AgeInterval>& intervals);

struct OnsetSummary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (n-1); 0 for a single value
};

OnsetSummary summarize(std::span<const double> values);

struct RmseReport {
  double overall = 0.0;
  std::array<std::optional<double>, kNumClasses> per_group{};
  std::array<std::optional<OnsetSummary>, kNumClasses> real{};
  std::array<std::optional<OnsetSummary>, kNumClasses> predicted{};
  std::array<int, kNumClasses> counts{};
};

/// sqrt(mean squared residual), overall and per group; groups without samples stay empty.
RmseReport rmse(std::span<const double> truth_weeks, std::span<const double> predicted_weeks,
                std::span<const HeartState> groups);

/// Everything the report files carry.
struct EvalReport {
  ConfusionMatrix confusion;
  StratifiedConfusion by_age;
  RmseReport onset;
};

struct EvalRecord {
  HeartState truth = HeartState::CTL;
  HeartState predicted = HeartState::CTL;
  double acquisition_age_weeks = 0.0;
  double onset_true_weeks = 0.0;
  double onset_pred_weeks = 0.0;
};

EvalReport evaluate(std::span<const EvalRecord> records, const std::vector<AgeInterval>& intervals);

}  // namespace modaldx
