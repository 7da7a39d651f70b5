#include <doctest.h>

#include <cmath>
#include <numbers>

#include "gradcheck.hpp"
#include "rarecast/losses.hpp"

using namespace rarecast;

namespace {

double bce(double p, int y) { return y ? -std::log(p) : -std::log(1.0 - p); }

NigOutput nig_of(double mu, double nu, double alpha, double beta, std::size_t n = 1) {
  NigOutput o;
  o.mu = Vec::Constant(static_cast<Eigen::Index>(n), mu);
  o.nu = Vec::Constant(static_cast<Eigen::Index>(n), nu);
  o.alpha = Vec::Constant(static_cast<Eigen::Index>(n), alpha);
  o.beta = Vec::Constant(static_cast<Eigen::Index>(n), beta);
  return o;
}

// Output of a random small model, used as a fixed fixture.
ForwardOutput fixture_output(std::vector<int>* labels) {
  const auto p = gradcheck::small_problem(9, 30);
  *labels = p.labels;
  return forward(p.params, p.config, p.tokens, Mode::eval);
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("focal loss values") {
    const std::vector<double> half{0.5};
    const std::vector<int> pos{1};
    CHECK(focal_loss(half, pos, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const std::vector<double> p9{0.9};
    CHECK(focal_loss(p9, pos, 2.0) == doctest::Approx(0.01 * -std::log(0.9)).epsilon(1e-12));
    CHECK(focal_loss(p9, pos, 2.0) == doctest::Approx(1.0536e-3).epsilon(1e-4));
    CHECK(focal_loss(std::vector<double>{1.0}, pos, 2.0) < 1e-12);
    CHECK_THROWS_AS(focal_loss(std::vector<double>{}, std::vector<int>{}, 0.0), LengthError);
  }

  TEST_CASE("focal with gamma 0 is binary cross-entropy") {
    Rng rng(21);
    for (int rep = 0; rep < 100; ++rep) {
      const std::size_t n = 1 + uniform_index(rng, 64);
      std::vector<double> p(n);
      std::vector<int> y(n);
      double ref = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        p[i] = 0.001 + 0.998 * uniform01(rng);
        y[i] = uniform01(rng) < 0.5;
        ref += bce(p[i], y[i]);
      }
      CHECK(std::abs(focal_loss(p, y, 0.0) - ref / static_cast<double>(n)) < 1e-12);
    }
  }

  TEST_CASE("focal gradient matches differences") {
    const std::vector<int> y{1, 0, 1, 0};
    std::vector<double> p{0.3, 0.6, 0.85, 0.1};
    Vec g;
    focal_loss(p, y, 1.7, &g);
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto q = p;
      q[i] += 1e-6;
      const double up = focal_loss(q, y, 1.7);
      q[i] -= 2e-6;
      const double down = focal_loss(q, y, 1.7);
      CHECK(g(static_cast<Eigen::Index>(i)) == doctest::Approx((up - down) / 2e-6).epsilon(1e-6));
    }
  }

  TEST_CASE("gamma annealing") {
    const FocalSchedule s{};
    CHECK(anneal_gamma(0, s) == 0.0);
    CHECK(anneal_gamma(25, s) == doctest::Approx(1.0));
    CHECK(anneal_gamma(120, s) == 2.0);
    CHECK(anneal_gamma(5, {2.0, 2.0, 0}) == 2.0);
    CHECK_THROWS_AS(anneal_gamma(-1, s), DomainError);
  }

  TEST_CASE("NIG negative log-likelihood") {
    const std::vector<double> y{0.7};
    const double expected = 0.5 * std::log(std::numbers::pi) - 2.0 * std::log(4.0) + 2.5 * std::log(4.0) +
                            std::lgamma(2.0) - std::lgamma(2.5);
    CHECK(nig_nll(nig_of(0.7, 1, 2, 1), y, 0.0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(nig_nll(nig_of(0.7, 1, 2, 1), y, 0.0) == doctest::Approx(0.98083).epsilon(1e-5));

    double last = -1e9;
    for (double r : {0.0, 0.1, 0.5, 1.0, 3.0}) {
      const double v = nig_nll(nig_of(0.7 + r, 1.5, 2.5, 0.8), y, 0.01);
      CHECK(v > last);
      last = v;
    }
    CHECK(nig_nll(nig_of(0.0, 2.0, 1.5, 1.0), std::vector<double>{1.0}, 0.5) ==
          doctest::Approx(nig_nll(nig_of(0.0, 2.0, 1.5, 1.0), std::vector<double>{1.0}, 0.0) + 0.5 * 5.5));
    CHECK_THROWS_AS(nig_nll(nig_of(0, 1, 0.9, 1), y, 0.0), DomainError);
  }

  TEST_CASE("NIG gradients match differences") {
    NigOutput o = nig_of(0.3, 1.4, 2.2, 0.7, 2);
    o.mu(1) = -0.8;
    const std::vector<double> y{1.5, -3.0};
    NigGrads g;
    nig_nll(o, y, 0.01, &g);
    auto fd = [&](Vec NigOutput::*field, Eigen::Index i) {
      NigOutput q = o;
      (q.*field)(i) += 1e-6;
      const double up = nig_nll(q, y, 0.01);
      (q.*field)(i) -= 2e-6;
      return (up - nig_nll(q, y, 0.01)) / 2e-6;
    };
    for (Eigen::Index i = 0; i < 2; ++i) {
      CHECK(g.mu(i) == doctest::Approx(fd(&NigOutput::mu, i)).epsilon(1e-6));
      CHECK(g.nu(i) == doctest::Approx(fd(&NigOutput::nu, i)).epsilon(1e-6));
      CHECK(g.alpha(i) == doctest::Approx(fd(&NigOutput::alpha, i)).epsilon(1e-6));
      CHECK(g.beta(i) == doctest::Approx(fd(&NigOutput::beta, i)).epsilon(1e-6));
    }
  }

  TEST_CASE("NIG uncertainty") {
    const auto u = nig_uncertainty(1.0, 2.0, 1.0);
    CHECK(u.aleatoric == 1.0);
    CHECK(u.epistemic == 1.0);
    const auto d = nig_uncertainty(1.0, 2.0, 2.0);
    CHECK(d.aleatoric == 2.0);
    CHECK(d.epistemic == 2.0);
    CHECK(nig_uncertainty(1e9, 2.0, 1.0).epistemic < 1e-8);
    CHECK_THROWS_AS(nig_uncertainty(1.0, 1.0, 1.0), DomainError);
  }

  TEST_CASE("GPD density") {
    CHECK(gpd_nll(1.0, 0.0, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(gpd_nll(1.0, 0.5, 1.0) == doctest::Approx(3.0 * std::log(1.5)).epsilon(1e-12));
    CHECK(gpd_nll(1.0, 0.5, 1.0) == doctest::Approx(1.21640).epsilon(1e-5));
    for (double x : {0.1, 1.0, 3.0})
      for (double xi : {1e-6, -1e-6}) CHECK(std::abs(gpd_nll(x, xi, 1.3) - gpd_nll(x, 0.0, 1.3)) < 1e-5);
  }

  TEST_CASE("nearest-rank quantile and exceedances") {
    std::vector<double> logits(10);
    for (int i = 0; i < 10; ++i) logits[static_cast<std::size_t>(i)] = 10.0 - i;
    CHECK(nearest_rank_quantile(logits, 0.9) == 9.0);
    GpdOutput g{Vec::Constant(10, 0.0), Vec::Constant(10, 1.0)};
    const EvtResult r = evt_loss(logits, g, 0.9, 0.0);
    CHECK(r.u == 9.0);
    CHECK(r.n_exceedances == 1);
    CHECK(r.loss == doctest::Approx(1.0));

    const std::vector<double> flat(8, 2.0);
    GpdOutput g8{Vec::Constant(8, 0.1), Vec::Constant(8, 1.0)};
    const EvtResult none = evt_loss(flat, g8, 0.9);
    CHECK(none.no_exceedances);
    CHECK(none.loss == 0.0);
  }

  TEST_CASE("EVT loss is shift invariant") {
    Rng rng(4);
    std::vector<double> logits(40);
    for (auto& l : logits) l = standard_normal(rng);
    GpdOutput g{Vec::Constant(40, 0.2), Vec::Constant(40, 0.8)};
    for (Eigen::Index i = 0; i < 40; ++i) g.xi(i) = 0.05 * static_cast<double>(i % 7) - 0.1;
    const EvtResult base = evt_loss(logits, g, 0.9);
    auto shifted = logits;
    for (auto& l : shifted) l += 2.5;
    const EvtResult s = evt_loss(shifted, g, 0.9);
    CHECK(s.u == doctest::Approx(base.u + 2.5));
    CHECK(s.n_exceedances == base.n_exceedances);
    CHECK(s.loss == doctest::Approx(base.loss).epsilon(1e-12));
  }

  TEST_CASE("EVT support violations are clamped and counted") {
    const std::vector<double> logits{0.0, 0.0, 0.0, 10.0};
    GpdOutput g{Vec::Constant(4, -0.5), Vec::Constant(4, 1.0)};
    const EvtResult r = evt_loss(logits, g, 0.5);
    CHECK(r.n_exceedances == 1);
    CHECK(r.support_violations == 1);
    CHECK(std::isfinite(r.loss));
  }

  TEST_CASE("precursor loss") {
    CHECK(precursor_loss(std::vector<double>{0.0}, std::vector<int>{1}) == doctest::Approx(std::log(2.0)));
    CHECK(precursor_loss(std::vector<double>{50.0}, std::vector<int>{1}) < 1e-6);
    const std::vector<double> logits{-2.0, 0.3, 1.7};
    const std::vector<int> y{0, 1, 0};
    std::vector<double> p;
    for (double l : logits) p.push_back(sigmoid(l));
    CHECK(std::abs(precursor_loss(logits, y) - focal_loss(p, y, 0.0)) < 1e-12);
    CHECK_THROWS_AS(precursor_loss(std::vector<double>{NAN}, std::vector<int>{1}), NumericError);
  }

  TEST_CASE("composite assembles weighted terms exactly") {
    std::vector<int> y;
    const ForwardOutput out = fixture_output(&y);
    const LossWeights w{};
    const LossBreakdown b = composite_loss(out, y, w, 7);
    const std::span<const double> prob(out.prob.data(), out.size());
    const std::span<const double> logit(out.logit.data(), out.size());
    std::vector<double> target;
    for (int label : y) target.push_back(label ? 3.0 : -3.0);
    const double focal = focal_loss(prob, y, anneal_gamma(7, w.focal_schedule));
    const double evid = nig_nll(out.nig, target, 0.01);
    const double evt = evt_loss(logit, out.gpd, 0.9, w.evt_stability).loss;
    const double prec = precursor_loss({out.precursor_logit.data(), out.size()}, y);
    CHECK(b.focal == focal);
    CHECK(b.evidential == evid);
    CHECK(b.evt == evt);
    CHECK(b.precursor == prec);
    CHECK(std::abs(b.total - (0.8 * focal + 0.1 * evid + 0.1 * evt + 0.05 * prec)) < 1e-12);
    CHECK(b.n_exceedances == 3);

    CHECK(composite_loss(out, y, gradcheck::only(0, 0, 0, 0), 7).total == 0.0);
    LossWeights ce = gradcheck::only(1, 0, 0, 0);
    ce.focal_schedule = {0.0, 0.0, 0};
    CHECK(std::abs(composite_loss(out, y, ce, 7).total - focal_loss(prob, y, 0.0)) < 1e-15);
  }

  TEST_CASE("composite total is linear in each weight") {
    std::vector<int> y;
    const ForwardOutput out = fixture_output(&y);
    for (int term = 0; term < 4; ++term) {
      std::vector<double> totals;
      for (double lam : {0.0, 0.25, 0.5, 0.75}) {
        LossWeights w{};
        double* fields[4] = {&w.focal, &w.evidential, &w.evt, &w.precursor};
        *fields[term] = lam;
        totals.push_back(composite_loss(out, y, w, 3).total);
      }
      const double step = totals[1] - totals[0];
      CHECK(std::abs((totals[2] - totals[1]) - step) < 1e-12);
      CHECK(std::abs((totals[3] - totals[2]) - step) < 1e-12);
    }
    LossWeights bad{};
    bad.evt = -0.1;
    CHECK_THROWS_AS(composite_loss(out, y, bad, 0), ConfigError);
  }

  TEST_CASE("parameter gradients of every term match central differences") {
    const auto p = gradcheck::small_problem();
    for (const auto& c : gradcheck::loss_term_checks(p)) {
      INFO(c.name);
      CHECK(c.worst < 1e-4);
    }
  }
}
