#include "rarecast/decisions.hpp"

namespace rarecast {

std::vector<double> threshold_grid() {
  std::vector<double> grid;
  grid.reserve(81);
  for (int k = 10; k <= 90; ++k) grid.push_back(static_cast<double>(k) / 100.0);
  return grid;
}

double balanced_score(const ConfusionMatrix& cm) {
  return 0.40 * tss(cm) + 0.20 * f1(cm) + 0.15 * precision(cm) + 0.15 * recall(cm) + 0.10 * specificity(cm);
}

ThresholdReport threshold_sweep(std::span<const double> prob, std::span<const int> y) {
  ThresholdReport rep;
  double at_half = 0.0;
  double best = -1.0;
  for (double tau : threshold_grid()) {
    ThresholdRow row;
    row.tau = tau;
    row.cm = confusion(prob, y, tau);
    row.tss = tss(row.cm);
    row.f1 = f1(row.cm);
    row.precision = precision(row.cm);
    row.recall = recall(row.cm);
    row.specificity = specificity(row.cm);
    row.balanced = balanced_score(row.cm);
    if (tau == 0.5) at_half = row.balanced;
    if (row.balanced > best) {
      best = row.balanced;
      rep.tau_star = tau;
    }
    rep.grid.push_back(row);
  }
  if (!(best > at_half)) {
    rep.tau_star = 0.5;
    rep.fallback_used = true;
  }
  return rep;
}

CostCurve cost_sweep(std::span<const std::pair<double, ConfusionMatrix>> per_tau, double c_fn, double c_fp) {
  if (!(c_fn > 0.0 && c_fp > 0.0)) throw DomainError("cost_sweep: costs must be positive");
  if (per_tau.empty()) throw LengthError("cost_sweep: no thresholds");
  CostCurve curve;
  curve.c_fn = c_fn;
  curve.c_fp = c_fp;
  double best = 0.0;
  for (const auto& [tau, cm] : per_tau) {
    CostPoint pt{tau, cm.fn, cm.fp, c_fn * static_cast<double>(cm.fn) + c_fp * static_cast<double>(cm.fp)};
    if (curve.points.empty() || pt.cost < best || (pt.cost == best && tau < curve.tau_min_cost)) {
      best = pt.cost;
      curve.tau_min_cost = tau;
    }
    curve.points.push_back(pt);
  }
  return curve;
}

CostCurve cost_sweep(std::span<const double> prob, std::span<const int> y, double c_fn, double c_fp) {
  std::vector<std::pair<double, ConfusionMatrix>> per_tau;
  for (double tau : threshold_grid()) per_tau.emplace_back(tau, confusion(prob, y, tau));
  return cost_sweep(per_tau, c_fn, c_fp);
}

ReplayResult replay_lead_time(std::span<const TracePoint> trace, std::span<const double> thresholds,
                              double event_time, double cadence) {
  if (trace.empty()) throw LengthError("replay: empty trace");
  for (std::size_t i = 1; i < trace.size(); ++i)
    if (!(trace[i].time > trace[i - 1].time)) throw DomainError("replay: trace times must increase strictly");
  if (event_time < trace.front().time) throw DomainError("replay: event precedes the trace");
  if (cadence < 0.0) throw DomainError("replay: cadence must be non-negative");

  ReplayResult res;
  res.event_time = event_time;
  res.cadence = cadence;
  for (double tau : thresholds) {
    ReplayRow row;
    row.tau = tau;
    std::size_t run_start = 0;
    bool in_run = false;
    auto close_run = [&](std::size_t last) {
      const double len = trace[last].time - trace[run_start].time + cadence;
      const std::size_t samples = last - run_start + 1;
      if (len > row.longest_alert || (len == row.longest_alert && samples > row.longest_alert_samples)) {
        row.longest_alert = len;
        row.longest_alert_samples = samples;
      }
    };
    for (std::size_t i = 0; i < trace.size(); ++i) {
      const bool alert = trace[i].prob >= tau;
      if (alert && !row.first_crossing) {
        row.first_crossing = trace[i].time;
        row.lead_time = event_time - trace[i].time;
      }
      if (alert && !in_run) {
        in_run = true;
        run_start = i;
      } else if (!alert && in_run) {
        in_run = false;
        close_run(i - 1);
      }
    }
    if (in_run) close_run(trace.size() - 1);
    res.rows.push_back(row);
  }
  return res;
}

}  // namespace rarecast
