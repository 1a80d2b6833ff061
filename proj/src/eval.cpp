#include "modaldx/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace modaldx {

std::string_view to_string(Partition p) { return kPartitionNames[static_cast<int>(p)]; }

Partition parse_partition(std::string_view name) {
  for (int i = 0; i < kNumPartitions; ++i)
    if (kPartitionNames[i] == name) return static_cast<Partition>(i);
  throw ConfigError("unknown partition: " + std::string(name));
}

void validate(const SplitRatios& r) {
  const auto a = r.as_array();
  for (double v : a)
    if (!(v > 0.0)) throw ConfigError("split ratios must be positive");
  if (std::abs(a[0] + a[1] + a[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

int SplitPlan::count(Partition p) const {
  return static_cast<int>(std::count(assignment.begin(), assignment.end(), p));
}

int SplitPlan::count(Partition p, HeartState g, std::span<const SplitKey> keys) const {
  int n = 0;
  for (std::size_t i = 0; i < keys.size(); ++i)
    if (keys[i].group == g && assignment[i] == p) ++n;
  return n;
}

std::array<int, kNumPartitions> partition_targets(int sequences, const SplitRatios& ratios) {
  const auto r = ratios.as_array();
  std::array<int, kNumPartitions> out{};
  std::array<double, kNumPartitions> frac{};
  int used = 0;
  for (int p = 0; p < kNumPartitions; ++p) {
    const double q = sequences * r[p];
    out[p] = static_cast<int>(std::floor(q + 1e-9));
    frac[p] = q - out[p];
    used += out[p];
  }
  std::array<int, kNumPartitions> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b] + 1e-12; });
  for (int i = 0; used < sequences; ++i, ++used) ++out[order[i % kNumPartitions]];
  return out;
}

SplitPlan split_dataset(std::span<const SplitKey> keys, const SplitRatios& ratios, std::uint64_t seed) {
  validate(ratios);
  if (keys.empty()) throw ConfigError("cannot split an empty dataset");

  SplitPlan plan;
  plan.ratios = ratios;
  plan.seed = seed;
  plan.assignment.assign(keys.size(), Partition::train);

  for (int g = 0; g < kNumClasses; ++g) {
    // Animals in first-appearance order with their record indices.
    std::vector<std::string> animals;
    std::map<std::string, std::vector<std::size_t>> members;
    int sequences = 0;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (static_cast<int>(keys[i].group) != g) continue;
      auto [it, inserted] = members.try_emplace(keys[i].animal_id);
      if (inserted) animals.push_back(keys[i].animal_id);
      it->second.push_back(i);
      ++sequences;
    }
    if (animals.empty()) continue;

    plan.targets[g] = partition_targets(sequences, ratios);
    if (animals.size() == 1) {
      plan.warnings.push_back("group " + std::string(kClassNames[g]) + " has a single animal (" + animals.front() +
                              "); all its sequences go to train");
      continue;
    }

    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(g)));
    std::shuffle(animals.begin(), animals.end(), rng);
    std::stable_sort(animals.begin(), animals.end(), [&](const std::string& a, const std::string& b) {
      return members[a].size() > members[b].size();
    });

    const auto& target = plan.targets[g];
    std::array<int, kNumPartitions> assigned{};
    for (const auto& animal : animals) {
      const int size = static_cast<int>(members[animal].size());
      // Change in total |target - assigned| when this animal joins p.
      auto cost = [&](int p) { return std::abs(target[p] - assigned[p] - size) - std::abs(target[p] - assigned[p]); };
      auto relative_deficit = [&](int p) {
        return target[p] > 0 ? static_cast<double>(target[p] - assigned[p]) / target[p] : -1.0;
      };
      int best = 0;
      for (int p = 1; p < kNumPartitions; ++p) {
        if (cost(p) < cost(best) || (cost(p) == cost(best) && relative_deficit(p) > relative_deficit(best))) best = p;
      }
      for (std::size_t i : members[animal]) plan.assignment[i] = static_cast<Partition>(best);
      assigned[best] += size;
    }
  }
  return plan;
}

std::vector<SplitKey> split_keys(const Dataset& dataset) {
  std::vector<SplitKey> keys;
  keys.reserve(dataset.size());
  for (const auto& r : dataset) keys.push_back({r.animal_id, r.group});
  return keys;
}

SplitPlan split_dataset(const Dataset& dataset, const SplitRatios& ratios, std::uint64_t seed) {
  const auto keys = split_keys(dataset);
  return split_dataset(std::span<const SplitKey>(keys), ratios, seed);
}

long ConfusionMatrix::total() const {
  long t = 0;
  for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
  return t;
}

long ConfusionMatrix::row_total(int cls) const {
  return std::accumulate(counts[cls].begin(), counts[cls].end(), 0L);
}

long ConfusionMatrix::trace() const {
  long t = 0;
  for (int i = 0; i < kNumClasses; ++i) t += counts[i][i];
  return t;
}

std::optional<double> ConfusionMatrix::class_accuracy(int cls) const {
  const long n = row_total(cls);
  if (n == 0) return std::nullopt;
  return static_cast<double>(counts[cls][cls]) / static_cast<double>(n);
}

std::optional<double> ConfusionMatrix::overall_accuracy() const {
  const long n = total();
  if (n == 0) return std::nullopt;
  return static_cast<double>(trace()) / static_cast<double>(n);
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  for (int i = 0; i < kNumClasses; ++i)
    for (int j = 0; j < kNumClasses; ++j) counts[i][j] += other.counts[i][j];
  return *this;
}

ConfusionMatrix confusion_matrix(std::span<const LabelPair> pairs) {
  if (pairs.empty()) throw ConfigError("confusion matrix of an empty prediction set");
  ConfusionMatrix m;
  for (const auto& p : pairs) m.add(p.truth, p.predicted);
  return m;
}

std::vector<AgeInterval> default_age_intervals() {
  return {{0.0, 64.0}, {64.0, 104.0}, {104.0, std::numeric_limits<double>::infinity()}};
}

std::vector<AgeInterval> parse_age_edges(const std::string& edges) {
  std::vector<double> v;
  std::stringstream ss(edges);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("bad age interval edge: '" + tok + "'");
    }
  }
  if (v.empty()) throw ConfigError("age intervals need at least one edge");
  std::vector<AgeInterval> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double hi = i + 1 < v.size() ? v[i + 1] : std::numeric_limits<double>::infinity();
    if (!(hi > v[i])) throw ConfigError("age interval edges must increase");
    out.push_back({v[i], hi});
  }
  return out;
}

StratifiedConfusion stratified_confusion(std::span<const double> acquisition_ages, std::span<const LabelPair> pairs,
                                         const std::vector<AgeInterval>& intervals) {
  if (acquisition_ages.size() != pairs.size()) throw ConfigError("ages and predictions differ in length");
  if (intervals.empty()) throw ConfigError("no age intervals");
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    if (!(intervals[i].hi > intervals[i].lo)) throw ConfigError("empty age interval");
    for (std::size_t j = i + 1; j < intervals.size(); ++j)
      if (intervals[i].lo < intervals[j].hi && intervals[j].lo < intervals[i].hi)
        throw ConfigError("age intervals overlap");
  }

  StratifiedConfusion out;
  out.intervals = intervals;
  out.matrices.resize(intervals.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double age = acquisition_ages[i];
    auto it = std::find_if(intervals.begin(), intervals.end(), [&](const AgeInterval& iv) { return iv.contains(age); });
    if (it == intervals.end()) throw ConfigError("acquisition age " + std::to_string(age) + " lies outside all intervals");
    out.matrices[static_cast<std::size_t>(it - intervals.begin())].add(pairs[i].truth, pairs[i].predicted);
  }
  return out;
}

OnsetSummary summarize(std::span<const double> values) {
  OnsetSummary s;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

RmseReport rmse(std::span<const double> truth_weeks, std::span<const double> predicted_weeks,
                std::span<const HeartState> groups) {
  if (truth_weeks.empty()) throw ConfigError("RMSE of an empty prediction set");
  if (truth_weeks.size() != predicted_weeks.size() || truth_weeks.size() != groups.size())
    throw ConfigError("RMSE inputs differ in length");

  RmseReport out;
  std::array<double, kNumClasses> sq{};
  std::array<std::vector<double>, kNumClasses> real, pred;
  double total = 0.0;
  for (std::size_t i = 0; i < truth_weeks.size(); ++i) {
    const double r = predicted_weeks[i] - truth_weeks[i];
    const int g = static_cast<int>(groups[i]);
    total += r * r;
    sq[g] += r * r;
    ++out.counts[g];
    real[g].push_back(truth_weeks[i]);
    pred[g].push_back(predicted_weeks[i]);
  }
  out.overall = std::sqrt(total / static_cast<double>(truth_weeks.size()));
  for (int g = 0; g < kNumClasses; ++g) {
    if (out.counts[g] == 0) continue;
    out.per_group[g] = std::sqrt(sq[g] / out.counts[g]);
    out.real[g] = summarize(real[g]);
    out.predicted[g] = summarize(pred[g]);
  }
  return out;
}

EvalReport evaluate(std::span<const EvalRecord> records, const std::vector<AgeInterval>& intervals) {
  if (records.empty()) throw ConfigError("nothing to evaluate");
  std::vector<LabelPair> pairs;
  std::vector<double> ages, truth, pred;
  std::vector<HeartState> groups;
  for (const auto& r : records) {
    pairs.push_back({r.truth, r.predicted});
    ages.push_back(r.acquisition_age_weeks);
    truth.push_back(r.onset_true_weeks);
    pred.push_back(r.onset_pred_weeks);
    groups.push_back(r.truth);
  }
  EvalReport rep;
  rep.confusion = confusion_matrix(pairs);
  rep.by_age = stratified_confusion(ages, pairs, intervals);
  rep.onset = rmse(truth, pred, groups);
  return rep;
}

}  // namespace modaldx
