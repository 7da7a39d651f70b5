#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rarecast/common.hpp"

namespace rarecast {

struct ConfusionMatrix {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

// Alert iff prob >= tau.
ConfusionMatrix confusion(std::span<const double> prob, std::span<const int> y, double tau);

// A metric value whose denominator may vanish; undefined values read as 0.
struct Rate {
  double value = 0.0;
  bool defined = true;
  operator double() const { return value; }
};

Rate recall(const ConfusionMatrix& cm);
Rate precision(const ConfusionMatrix& cm);
Rate specificity(const ConfusionMatrix& cm);
Rate false_positive_rate(const ConfusionMatrix& cm);
Rate f1(const ConfusionMatrix& cm);
// recall - false positive rate; undefined if either class is absent.
Rate tss(const ConfusionMatrix& cm);

double brier(std::span<const double> prob, std::span<const int> y);

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_pred = 0.0;
  double frac_positive = 0.0;
  std::size_t count = 0;
};

struct CalibrationReport {
  std::vector<ReliabilityBin> bins;
  double ece = 0.0;
  double brier = 0.0;
  double max_gap = 0.0;
  std::size_t n = 0;
  bool empty = false;         // subset had no samples
  bool bins_reduced = false;  // fewer samples than requested bins
};

inline constexpr std::size_t kDefaultCalibrationBins = 15;

// Equal-frequency reliability bins over predictions stably sorted by
// (prob, index). Throws LengthError when N < n_bins.
CalibrationReport ece_equal_frequency(std::span<const double> prob, std::span<const int> y,
                                      std::size_t n_bins = kDefaultCalibrationBins);

struct CalibrationSubset {
  enum class Kind { negatives, positives, above } kind = Kind::negatives;
  double threshold = 0.8;  // for Kind::above: prob > threshold

  static CalibrationSubset negatives() { return {Kind::negatives, 0.0}; }
  static CalibrationSubset positives() { return {Kind::positives, 0.0}; }
  static CalibrationSubset above(double c) { return {Kind::above, c}; }
};

CalibrationReport subset_calibration(std::span<const double> prob, std::span<const int> y,
                                     CalibrationSubset subset, std::size_t n_bins = kDefaultCalibrationBins);

// Tie-aware Mann-Whitney AUROC; undefined when one class is missing.
Rate auroc(std::span<const double> prob, std::span<const int> y);
// Area under the precision envelope (max precision at recall >= r).
Rate pr_auc(std::span<const double> prob, std::span<const int> y);

using MetricFn = std::function<std::optional<double>(std::span<const double> prob, std::span<const int> y)>;

// TSS at a fixed threshold; nullopt when a class is absent from the sample.
MetricFn tss_at(double tau);

struct BootstrapResult {
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double median = 0.0;
  std::size_t n_draws = 0;
  std::size_t n_skipped = 0;
  std::uint64_t seed = 0;
  bool point_defined = true;
};

// Linear-interpolated percentile (q in [0,1]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

// Resamples whole groups with replacement; replicate r draws from a stream
// derived from (seed, r).
BootstrapResult bootstrap_ci(const MetricFn& metric, std::span<const double> prob, std::span<const int> y,
                             std::span<const std::int64_t> group_ids, std::size_t n_draws = 10000,
                             std::uint64_t seed = 0);

// Metric value for every one of the G^G equally likely group draws (small G only).
std::vector<std::optional<double>> bootstrap_enumerate(const MetricFn& metric, std::span<const double> prob,
                                                       std::span<const int> y,
                                                       std::span<const std::int64_t> group_ids);

struct PairedTestResult {
  double p_value = 1.0;
  double delta_point = 0.0;  // metric(A) - metric(B) on the full sample
  std::size_t n_draws = 0;
  std::size_t n_skipped = 0;
};

// One-sided test of H0: metric(A) - metric(B) <= 0. Replicates with delta <= 0
// count toward the null.
PairedTestResult paired_bootstrap_test(const MetricFn& metric, std::span<const double> prob_a,
                                       std::span<const double> prob_b, std::span<const int> y,
                                       std::span<const std::int64_t> group_ids, std::size_t n_draws = 10000,
                                       std::uint64_t seed = 0);

// Same statistic evaluated exactly over all G^G draws.
PairedTestResult paired_bootstrap_exact(const MetricFn& metric, std::span<const double> prob_a,
                                        std::span<const double> prob_b, std::span<const int> y,
                                        std::span<const std::int64_t> group_ids);

}  // namespace rarecast
