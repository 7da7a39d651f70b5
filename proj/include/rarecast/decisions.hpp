#pragma once

#include <optional>
#include <span>
#include <vector>

#include "rarecast/metrics.hpp"

namespace rarecast {

// Operating-threshold grid 0.10, 0.11, ..., 0.90 (81 points).
std::vector<double> threshold_grid();

// 0.40 TSS + 0.20 F1 + 0.15 precision + 0.15 recall + 0.10 specificity;
// undefined components contribute 0.
double balanced_score(const ConfusionMatrix& cm);

struct ThresholdRow {
  double tau = 0.0;
  ConfusionMatrix cm;
  double tss = 0.0, f1 = 0.0, precision = 0.0, recall = 0.0, specificity = 0.0;
  double balanced = 0.0;
};

struct ThresholdReport {
  std::vector<ThresholdRow> grid;
  double tau_star = 0.5;
  bool fallback_used = false;
};

// tau_star maximizes the balanced score (smallest tau on ties); falls back to
// 0.5 when the best score does not strictly exceed the score at 0.5.
ThresholdReport threshold_sweep(std::span<const double> prob, std::span<const int> y);

struct CostPoint {
  double tau = 0.0;
  std::uint64_t fn = 0;
  std::uint64_t fp = 0;
  double cost = 0.0;
};

struct CostCurve {
  double c_fn = 1.0;
  double c_fp = 1.0;
  std::vector<CostPoint> points;
  double tau_min_cost = 0.0;
};

CostCurve cost_sweep(std::span<const double> prob, std::span<const int> y, double c_fn, double c_fp);
// Sweep over precomputed confusion matrices, one per threshold.
CostCurve cost_sweep(std::span<const std::pair<double, ConfusionMatrix>> per_tau, double c_fn, double c_fp);

struct TracePoint {
  double time = 0.0;
  double prob = 0.0;
};

struct ReplayRow {
  double tau = 0.0;
  std::optional<double> first_crossing;
  std::optional<double> lead_time;         // event_time - first_crossing
  double longest_alert = 0.0;              // (last - first) of the longest run + cadence
  std::size_t longest_alert_samples = 0;
};

struct ReplayResult {
  double event_time = 0.0;
  double cadence = 0.0;
  std::vector<ReplayRow> rows;
};

ReplayResult replay_lead_time(std::span<const TracePoint> trace, std::span<const double> thresholds,
                              double event_time, double cadence);

}  // namespace rarecast
