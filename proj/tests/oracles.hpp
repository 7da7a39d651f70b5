#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "rarecast/common.hpp"

// Brute-force reference implementations used by unit and acceptance tests.
namespace oracle {

struct Counts {
  double tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Counts count(const std::vector<double>& p, const std::vector<int>& y, double tau) {
  Counts c;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] >= tau && y[i] == 1) c.tp += 1;
    if (p[i] >= tau && y[i] == 0) c.fp += 1;
    if (p[i] < tau && y[i] == 0) c.tn += 1;
    if (p[i] < tau && y[i] == 1) c.fn += 1;
  }
  return c;
}

inline double tss(const Counts& c) { return c.tp / (c.tp + c.fn) - c.fp / (c.fp + c.tn); }
inline double precision(const Counts& c) { return c.tp / (c.tp + c.fp); }
inline double recall(const Counts& c) { return c.tp / (c.tp + c.fn); }
inline double f1(const Counts& c) {
  const double pr = precision(c), re = recall(c);
  return 2.0 * pr * re / (pr + re);
}

inline double brier(const std::vector<double>& p, const std::vector<int>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::pow(p[i] - y[i], 2);
  return s / static_cast<double>(p.size());
}

// Fraction of (positive, negative) pairs ranked correctly, ties count half.
inline double auroc(const std::vector<double>& p, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      if (p[i] > p[j]) wins += 1.0;
      if (p[i] == p[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Sorted by (prob, index); the first N mod B bins take one extra sample.
inline double ece(const std::vector<double>& p, const std::vector<int>& y, std::size_t bins) {
  std::vector<std::pair<double, std::size_t>> s;
  for (std::size_t i = 0; i < p.size(); ++i) s.emplace_back(p[i], i);
  std::sort(s.begin(), s.end());
  const std::size_t n = p.size();
  std::vector<double> sp(bins, 0.0), sy(bins, 0.0), cnt(bins, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t b = 0, edge = n / bins + (0 < n % bins ? 1 : 0);
    while (r >= edge) {
      ++b;
      edge += n / bins + (b < n % bins ? 1 : 0);
    }
    sp[b] += s[r].first;
    sy[b] += y[s[r].second];
    cnt[b] += 1.0;
  }
  double e = 0.0;
  for (std::size_t b = 0; b < bins; ++b) e += cnt[b] / static_cast<double>(n) * std::abs(sp[b] / cnt[b] - sy[b] / cnt[b]);
  return e;
}

struct Fixture {
  std::vector<double> p;
  std::vector<int> y;
};

// Random scores with both classes present; some scores are duplicated to
// exercise tie handling.
inline Fixture random_fixture(rarecast::Rng& rng, std::size_t n) {
  Fixture f;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = rarecast::uniform01(rng) < 0.3 ? 1 : 0;
    double prob = std::clamp(0.5 * rarecast::uniform01(rng) + 0.4 * label, 0.0, 1.0);
    if (i > 0 && rarecast::uniform01(rng) < 0.1) prob = f.p[rarecast::uniform_index(rng, i)];
    f.p.push_back(prob);
    f.y.push_back(label);
  }
  f.y[0] = 1;
  f.y[1] = 0;
  return f;
}

struct GroupedFixture {
  std::vector<double> p;
  std::vector<int> y;
  std::vector<std::int64_t> g;
};

// Three groups, each holding both classes so every resample is defined.
inline GroupedFixture three_groups() {
  GroupedFixture f;
  const double probs[3][4] = {{0.9, 0.2, 0.6, 0.1}, {0.7, 0.55, 0.3, 0.05}, {0.4, 0.8, 0.65, 0.2}};
  const int labels[3][4] = {{1, 0, 1, 0}, {1, 1, 0, 0}, {1, 0, 0, 0}};
  for (int g = 0; g < 3; ++g)
    for (int k = 0; k < 4; ++k) {
      f.p.push_back(probs[g][k]);
      f.y.push_back(labels[g][k]);
      f.g.push_back(10 + g);
    }
  return f;
}

inline std::vector<double> enumerate_tss(const GroupedFixture& f, double tau) {
  std::vector<double> out;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c) {
        std::vector<double> p;
        std::vector<int> y;
        for (int g : {a, b, c})
          for (std::size_t i = 0; i < f.p.size(); ++i)
            if (f.g[i] == 10 + g) {
              p.push_back(f.p[i]);
              y.push_back(f.y[i]);
            }
        out.push_back(tss(count(p, y, tau)));
      }
  std::sort(out.begin(), out.end());
  return out;
}

// Inverse CDF of the uniform distribution over `sorted`.
inline double exact_quantile(const std::vector<double>& sorted, double q) {
  const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[std::max<std::size_t>(k, 1) - 1];
}

}  // namespace oracle
