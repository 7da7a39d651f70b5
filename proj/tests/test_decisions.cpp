#include <doctest.h>

#include "rarecast/decisions.hpp"

using namespace rarecast;

TEST_SUITE("decisions") {
  TEST_CASE("threshold grid") {
    const auto grid = threshold_grid();
    REQUIRE(grid.size() == 81);
    CHECK(grid.front() == 0.10);
    CHECK(grid.back() == 0.90);
    CHECK(grid[40] == 0.50);
    for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] - grid[i - 1] == doctest::Approx(0.01));
  }

  TEST_CASE("balanced score") {
    CHECK(balanced_score({10, 0, 90, 0}) == doctest::Approx(1.0).epsilon(1e-15));
    const ConfusionMatrix cm{8, 4, 86, 2};
    const double tss = 0.8 - 4.0 / 90.0, f1 = 16.0 / 22.0, pr = 8.0 / 12.0, re = 0.8, sp = 86.0 / 90.0;
    CHECK(balanced_score(cm) == doctest::Approx(0.4 * tss + 0.2 * f1 + 0.15 * pr + 0.15 * re + 0.1 * sp));
    // No positives: TSS, recall undefined and contribute 0; F1 is 0.
    CHECK(balanced_score({0, 5, 95, 0}) == doctest::Approx(0.1 * 0.95));
  }

  TEST_CASE("sweep picks the balanced-score maximizer") {
    const std::vector<double> p{0.05, 0.2, 0.3, 0.35, 0.45, 0.6, 0.7, 0.32, 0.8};
    const std::vector<int> y{0, 0, 0, 0, 0, 0, 0, 1, 1};
    const ThresholdReport r = threshold_sweep(p, y);
    REQUIRE(r.grid.size() == 81);
    CHECK_FALSE(r.fallback_used);
    CHECK(r.tau_star == doctest::Approx(0.71));
    double best = -1.0;
    for (const auto& row : r.grid) best = std::max(best, row.balanced);
    for (const auto& row : r.grid)
      if (row.tau == r.tau_star) CHECK(row.balanced == best);
  }

  TEST_CASE("sweep falls back to 0.5 when nothing beats it") {
    const std::vector<double> p{0.05, 0.95, 0.1, 0.92};
    const std::vector<int> y{0, 1, 0, 1};
    const ThresholdReport r = threshold_sweep(p, y);
    CHECK(r.tau_star == 0.5);
    CHECK(r.fallback_used);
  }

  TEST_CASE("cost sweep on published confusion counts") {
    const std::vector<std::pair<double, ConfusionMatrix>> per_tau{{0.24, {92, 115, 71510, 0}},
                                                                  {0.46, {80, 45, 71580, 12}}};
    const CostCurve c = cost_sweep(per_tau, 20.0, 1.0);
    REQUIRE(c.points.size() == 2);
    CHECK(c.points[0].cost == 115.0);
    CHECK(c.points[1].cost == 285.0);
    CHECK(c.tau_min_cost == 0.24);
    CHECK_THROWS_AS(cost_sweep(per_tau, 0.0, 1.0), DomainError);
  }

  TEST_CASE("cost sweep over predictions covers the grid") {
    const std::vector<double> p{0.15, 0.55, 0.85, 0.4};
    const std::vector<int> y{0, 1, 1, 0};
    const CostCurve c = cost_sweep(p, y, 20.0, 1.0);
    CHECK(c.points.size() == 81);
    CHECK(c.tau_min_cost == doctest::Approx(0.41));
    for (const auto& pt : c.points) CHECK(pt.cost == 20.0 * static_cast<double>(pt.fn) + static_cast<double>(pt.fp));
  }

  TEST_CASE("replay lead time") {
    const std::vector<TracePoint> trace{{0, 0.1}, {12, 0.3}, {24, 0.6}, {36, 0.2}, {48, 0.7}, {60, 0.8}, {72, 0.9}};
    const std::vector<double> taus{0.25, 0.5, 0.95};
    const ReplayResult r = replay_lead_time(trace, taus, 72.0, 12.0);
    REQUIRE(r.rows.size() == 3);
    CHECK(*r.rows[0].first_crossing == 12.0);
    CHECK(*r.rows[0].lead_time == 60.0);
    CHECK(r.rows[0].longest_alert == 36.0);
    CHECK(*r.rows[1].lead_time == 48.0);
    CHECK(r.rows[1].longest_alert == 36.0);
    CHECK(r.rows[1].longest_alert_samples == 3);
    CHECK_FALSE(r.rows[2].first_crossing.has_value());
    CHECK(r.rows[2].longest_alert == 0.0);
    const std::vector<TracePoint> unordered{{5, 0.1}, {5, 0.2}};
    CHECK_THROWS_AS(replay_lead_time(unordered, taus, 6.0, 1.0), DomainError);
  }
}
