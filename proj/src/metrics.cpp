#include "rarecast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rarecast {

namespace {

void check_inputs(std::span<const double> prob, std::span<const int> y, const char* what) {
  if (prob.empty()) throw LengthError(std::string(what) + ": empty input");
  if (prob.size() != y.size()) throw ShapeError(std::string(what) + ": prob and label lengths differ");
}

Rate ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return {0.0, false};
  return {static_cast<double>(num) / static_cast<double>(den), true};
}

}  // namespace

ConfusionMatrix confusion(std::span<const double> prob, std::span<const int> y, double tau) {
  check_inputs(prob, y, "confusion");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const bool alert = prob[i] >= tau;
    if (y[i] == 1)
      alert ? ++cm.tp : ++cm.fn;
    else
      alert ? ++cm.fp : ++cm.tn;
  }
  return cm;
}

Rate recall(const ConfusionMatrix& cm) { return ratio(cm.tp, cm.tp + cm.fn); }
Rate precision(const ConfusionMatrix& cm) { return ratio(cm.tp, cm.tp + cm.fp); }
Rate specificity(const ConfusionMatrix& cm) { return ratio(cm.tn, cm.tn + cm.fp); }
Rate false_positive_rate(const ConfusionMatrix& cm) { return ratio(cm.fp, cm.fp + cm.tn); }

Rate f1(const ConfusionMatrix& cm) { return ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn); }

Rate tss(const ConfusionMatrix& cm) {
  const Rate r = recall(cm);
  const Rate f = false_positive_rate(cm);
  if (!r.defined || !f.defined) return {0.0, false};
  return {r.value - f.value, true};
}

double brier(std::span<const double> prob, std::span<const int> y) {
  check_inputs(prob, y, "brier");
  double s = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double e = prob[i] - static_cast<double>(y[i]);
    s += e * e;
  }
  return s / static_cast<double>(prob.size());
}

CalibrationReport ece_equal_frequency(std::span<const double> prob, std::span<const int> y, std::size_t n_bins) {
  check_inputs(prob, y, "ece_equal_frequency");
  if (n_bins == 0) throw DomainError("ece_equal_frequency: n_bins must be positive");
  if (prob.size() < n_bins)
    throw LengthError("ece_equal_frequency: " + std::to_string(prob.size()) + " samples for " +
                      std::to_string(n_bins) + " bins");
  const std::size_t n = prob.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return prob[a] < prob[b]; });

  CalibrationReport rep;
  rep.n = n;
  rep.brier = brier(prob, y);
  const std::size_t base = n / n_bins;
  const std::size_t extra = n % n_bins;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    const std::size_t count = base + (b < extra ? 1 : 0);
    ReliabilityBin bin;
    bin.count = count;
    bin.lower = prob[order[pos]];
    bin.upper = prob[order[pos + count - 1]];
    double sp = 0.0, sy = 0.0;
    for (std::size_t k = pos; k < pos + count; ++k) {
      sp += prob[order[k]];
      sy += y[order[k]];
    }
    bin.mean_pred = sp / static_cast<double>(count);
    bin.frac_positive = sy / static_cast<double>(count);
    const double gap = std::abs(bin.mean_pred - bin.frac_positive);
    rep.ece += static_cast<double>(count) / static_cast<double>(n) * gap;
    rep.max_gap = std::max(rep.max_gap, gap);
    rep.bins.push_back(bin);
    pos += count;
  }
  return rep;
}

CalibrationReport subset_calibration(std::span<const double> prob, std::span<const int> y,
                                     CalibrationSubset subset, std::size_t n_bins) {
  if (prob.size() != y.size()) throw ShapeError("subset_calibration: prob and label lengths differ");
  std::vector<double> p;
  std::vector<int> labels;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    bool keep = false;
    switch (subset.kind) {
      case CalibrationSubset::Kind::negatives: keep = y[i] == 0; break;
      case CalibrationSubset::Kind::positives: keep = y[i] == 1; break;
      case CalibrationSubset::Kind::above: keep = prob[i] > subset.threshold; break;
    }
    if (keep) {
      p.push_back(prob[i]);
      labels.push_back(y[i]);
    }
  }
  if (p.empty()) {
    CalibrationReport rep;
    rep.empty = true;
    return rep;
  }
  const std::size_t bins = std::min(n_bins, p.size());
  CalibrationReport rep = ece_equal_frequency(p, labels, bins);
  rep.bins_reduced = bins < n_bins;
  return rep;
}

Rate auroc(std::span<const double> prob, std::span<const int> y) {
  check_inputs(prob, y, "auroc");
  const std::size_t n = prob.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return prob[a] < prob[b]; });
  double rank_sum = 0.0;
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && prob[order[j]] == prob[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (y[order[k]] == 1) {
        rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::uint64_t neg = n - pos;
  if (pos == 0 || neg == 0) return {0.0, false};
  const double p = static_cast<double>(pos);
  return {(rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg)), true};
}

Rate pr_auc(std::span<const double> prob, std::span<const int> y) {
  check_inputs(prob, y, "pr_auc");
  const std::size_t n = prob.size();
  const auto total_pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
  if (total_pos == 0 || total_pos == n) return {0.0, false};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return prob[a] > prob[b]; });
  std::vector<double> rec, prec;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && prob[order[j]] == prob[order[i]]) {
      (y[order[j]] == 1 ? tp : fp)++;
      ++j;
    }
    rec.push_back(static_cast<double>(tp) / static_cast<double>(total_pos));
    prec.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    i = j;
  }
  for (std::size_t k = prec.size() - 1; k-- > 0;) prec[k] = std::max(prec[k], prec[k + 1]);
  double area = 0.0, last_recall = 0.0;
  for (std::size_t k = 0; k < rec.size(); ++k) {
    area += (rec[k] - last_recall) * prec[k];
    last_recall = rec[k];
  }
  return {area, true};
}

MetricFn tss_at(double tau) {
  return [tau](std::span<const double> prob, std::span<const int> y) -> std::optional<double> {
    const Rate r = tss(confusion(prob, y, tau));
    if (!r.defined) return std::nullopt;
    return r.value;
  };
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw LengthError("percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

struct GroupIndex {
  std::vector<std::vector<std::size_t>> members;

  explicit GroupIndex(std::span<const std::int64_t> group_ids) {
    std::vector<std::int64_t> keys(group_ids.begin(), group_ids.end());
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    members.resize(keys.size());
    for (std::size_t i = 0; i < group_ids.size(); ++i) {
      const auto g = static_cast<std::size_t>(std::lower_bound(keys.begin(), keys.end(), group_ids[i]) - keys.begin());
      members[g].push_back(i);
    }
  }
  std::size_t size() const { return members.size(); }
};

// Gathers the rows of the drawn groups into one or two probability vectors.
struct Replicate {
  std::vector<double> a, b;
  std::vector<int> y;

  void build(const GroupIndex& gi, std::span<const std::size_t> draw, std::span<const double> pa,
             std::span<const double> pb, std::span<const int> labels) {
    a.clear();
    b.clear();
    y.clear();
    for (std::size_t g : draw) {
      for (std::size_t i : gi.members[g]) {
        a.push_back(pa[i]);
        if (!pb.empty()) b.push_back(pb[i]);
        y.push_back(labels[i]);
      }
    }
  }
};

std::size_t pow_groups(std::size_t g) {
  if (g > 8) throw DomainError("exhaustive bootstrap limited to 8 groups");
  std::size_t total = 1;
  for (std::size_t i = 0; i < g; ++i) total *= g;
  return total;
}

void decode_draw(std::size_t code, std::size_t g, std::vector<std::size_t>& draw) {
  draw.resize(g);
  for (std::size_t i = 0; i < g; ++i) {
    draw[i] = code % g;
    code /= g;
  }
}

void random_draw(std::uint64_t seed, std::size_t replicate, std::size_t g, std::vector<std::size_t>& draw) {
  Rng rng = derive_rng(seed, 0xb007, replicate);
  draw.resize(g);
  for (auto& d : draw) d = uniform_index(rng, g);
}

void check_groups(std::span<const double> prob, std::span<const int> y, std::span<const std::int64_t> groups) {
  check_inputs(prob, y, "bootstrap");
  if (groups.size() != prob.size()) throw ShapeError("bootstrap: group_ids length differs");
}

}  // namespace

BootstrapResult bootstrap_ci(const MetricFn& metric, std::span<const double> prob, std::span<const int> y,
                             std::span<const std::int64_t> group_ids, std::size_t n_draws, std::uint64_t seed) {
  check_groups(prob, y, group_ids);
  const GroupIndex gi(group_ids);
  if (gi.size() < 2) throw DomainError("bootstrap needs at least 2 groups");
  if (n_draws == 0) throw DomainError("bootstrap needs at least one draw");

  BootstrapResult res;
  res.n_draws = n_draws;
  res.seed = seed;
  const auto point = metric(prob, y);
  res.point_defined = point.has_value();
  res.point = point.value_or(0.0);

  std::vector<double> values;
  values.reserve(n_draws);
  std::vector<std::size_t> draw;
  Replicate rep;
  for (std::size_t r = 0; r < n_draws; ++r) {
    random_draw(seed, r, gi.size(), draw);
    rep.build(gi, draw, prob, {}, y);
    if (const auto v = metric(rep.a, rep.y))
      values.push_back(*v);
    else
      ++res.n_skipped;
  }
  if (!values.empty()) {
    res.ci_low = percentile(values, 0.025);
    res.ci_high = percentile(values, 0.975);
    res.median = percentile(values, 0.5);
  }
  return res;
}

std::vector<std::optional<double>> bootstrap_enumerate(const MetricFn& metric, std::span<const double> prob,
                                                       std::span<const int> y,
                                                       std::span<const std::int64_t> group_ids) {
  check_groups(prob, y, group_ids);
  const GroupIndex gi(group_ids);
  const std::size_t total = pow_groups(gi.size());
  std::vector<std::optional<double>> out;
  out.reserve(total);
  std::vector<std::size_t> draw;
  Replicate rep;
  for (std::size_t code = 0; code < total; ++code) {
    decode_draw(code, gi.size(), draw);
    rep.build(gi, draw, prob, {}, y);
    out.push_back(metric(rep.a, rep.y));
  }
  return out;
}

namespace {

template <class DrawFn>
PairedTestResult paired_test(const MetricFn& metric, std::span<const double> prob_a,
                             std::span<const double> prob_b, std::span<const int> y,
                             std::span<const std::int64_t> group_ids, std::size_t n_draws, DrawFn&& next_draw) {
  check_groups(prob_a, y, group_ids);
  if (prob_b.size() != prob_a.size()) throw ShapeError("paired test: predictions are not aligned");
  const GroupIndex gi(group_ids);
  if (gi.size() < 2) throw DomainError("paired test needs at least 2 groups");

  PairedTestResult res;
  const auto pa = metric(prob_a, y);
  const auto pb = metric(prob_b, y);
  if (pa && pb) res.delta_point = *pa - *pb;

  std::size_t null_count = 0, used = 0;
  std::vector<std::size_t> draw;
  Replicate rep;
  for (std::size_t r = 0; r < n_draws; ++r) {
    next_draw(r, gi.size(), draw);
    rep.build(gi, draw, prob_a, prob_b, y);
    const auto ma = metric(rep.a, rep.y);
    const auto mb = metric(rep.b, rep.y);
    if (!ma || !mb) {
      ++res.n_skipped;
      continue;
    }
    ++used;
    if (*ma - *mb <= 0.0) ++null_count;
  }
  res.n_draws = n_draws;
  res.p_value = used == 0 ? 1.0 : static_cast<double>(null_count) / static_cast<double>(used);
  return res;
}

}  // namespace

PairedTestResult paired_bootstrap_test(const MetricFn& metric, std::span<const double> prob_a,
                                       std::span<const double> prob_b, std::span<const int> y,
                                       std::span<const std::int64_t> group_ids, std::size_t n_draws,
                                       std::uint64_t seed) {
  return paired_test(metric, prob_a, prob_b, y, group_ids, n_draws,
                     [seed](std::size_t r, std::size_t g, std::vector<std::size_t>& draw) {
                       random_draw(seed, r, g, draw);
                     });
}

PairedTestResult paired_bootstrap_exact(const MetricFn& metric, std::span<const double> prob_a,
                                        std::span<const double> prob_b, std::span<const int> y,
                                        std::span<const std::int64_t> group_ids) {
  const GroupIndex gi(group_ids);
  return paired_test(metric, prob_a, prob_b, y, group_ids, pow_groups(gi.size()),
                     [](std::size_t r, std::size_t g, std::vector<std::size_t>& draw) { decode_draw(r, g, draw); });
}

}  // namespace rarecast
