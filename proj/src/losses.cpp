#include "rarecast/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

namespace rarecast {

namespace {

void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw LengthError(std::string(what) + ": empty batch");
}

}  // namespace

double focal_loss(std::span<const double> prob, std::span<const int> y, double gamma, Vec* grad) {
  require_nonempty(prob.size(), "focal_loss");
  if (prob.size() != y.size()) throw ShapeError("focal_loss: prob and label lengths differ");
  if (gamma < 0.0) throw DomainError("focal_loss: gamma must be >= 0");
  const auto n = static_cast<double>(prob.size());
  if (grad) grad->setZero(static_cast<Eigen::Index>(prob.size()));
  double sum = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const bool clamped = !(prob[i] > kProbEps && prob[i] < 1.0 - kProbEps);
    const double p = std::clamp(prob[i], kProbEps, 1.0 - kProbEps);
    double loss, dl;
    if (y[i] == 1) {
      const double w = std::pow(1.0 - p, gamma);
      loss = -w * std::log(p);
      const double dw = gamma == 0.0 ? 0.0 : -gamma * std::pow(1.0 - p, gamma - 1.0);
      dl = -dw * std::log(p) - w / p;
    } else {
      const double w = std::pow(p, gamma);
      loss = -w * std::log1p(-p);
      const double dw = gamma == 0.0 ? 0.0 : gamma * std::pow(p, gamma - 1.0);
      dl = -dw * std::log1p(-p) + w / (1.0 - p);
    }
    sum += loss;
    if (grad && !clamped) (*grad)(static_cast<Eigen::Index>(i)) = dl / n;
  }
  return sum / n;
}

double anneal_gamma(int epoch, const FocalSchedule& s) {
  if (epoch < 0) throw DomainError("anneal_gamma: epoch must be >= 0");
  if (s.anneal_epochs <= 0 || epoch >= s.anneal_epochs) return s.gamma_end;
  const double frac = static_cast<double>(epoch) / static_cast<double>(s.anneal_epochs);
  return s.gamma_start + (s.gamma_end - s.gamma_start) * frac;
}

double nig_nll(const NigOutput& nig, std::span<const double> target, double reg_weight, NigGrads* grads) {
  const auto n = static_cast<std::size_t>(nig.mu.size());
  require_nonempty(n, "nig_nll");
  if (target.size() != n || nig.nu.size() != nig.mu.size() || nig.alpha.size() != nig.mu.size() ||
      nig.beta.size() != nig.mu.size())
    throw ShapeError("nig_nll: inconsistent lengths");
  if (grads) {
    grads->mu.setZero(nig.mu.size());
    grads->nu.setZero(nig.mu.size());
    grads->alpha.setZero(nig.mu.size());
    grads->beta.setZero(nig.mu.size());
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const double mu = nig.mu(i), nu = nig.nu(i), a = nig.alpha(i), b = nig.beta(i);
    if (!(nu > 0.0 && a > 1.0 && b > 0.0))
      throw DomainError("nig_nll: requires nu > 0, alpha > 1, beta > 0");
    const double r = target[k] - mu;
    const double omega = 2.0 * b * (1.0 + nu);
    const double D = r * r * nu + omega;
    const double nll = 0.5 * std::log(std::numbers::pi / nu) - a * std::log(omega) +
                       (a + 0.5) * std::log(D) + std::lgamma(a) - std::lgamma(a + 0.5);
    const double reg = std::abs(r) * (2.0 * nu + a);
    sum += nll + reg_weight * reg;
    if (grads) {
      const double sgn = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
      grads->mu(i) = inv_n * ((a + 0.5) * (-2.0 * r * nu) / D - reg_weight * sgn * (2.0 * nu + a));
      grads->nu(i) = inv_n * (-0.5 / nu - a * 2.0 * b / omega + (a + 0.5) * (r * r + 2.0 * b) / D +
                              reg_weight * 2.0 * std::abs(r));
      grads->alpha(i) = inv_n * (-std::log(omega) + std::log(D) + boost::math::digamma(a) -
                                 boost::math::digamma(a + 0.5) + reg_weight * std::abs(r));
      grads->beta(i) = inv_n * (-a / b + (a + 0.5) * 2.0 * (1.0 + nu) / D);
    }
  }
  return sum * inv_n;
}

NigUncertainty nig_uncertainty(double nu, double alpha, double beta) {
  if (!(alpha > 1.0)) throw DomainError("nig_uncertainty: alpha must exceed 1");
  if (!(nu > 0.0 && beta > 0.0)) throw DomainError("nig_uncertainty: nu and beta must be positive");
  const double aleatoric = beta / (alpha - 1.0);
  return {aleatoric, aleatoric / nu};
}

namespace {

constexpr double kXiZero = 1e-6;
constexpr double kSupportEps = 1e-12;

struct GpdTerm {
  double nll;
  double dx, dxi, dsigma;
  bool violated;
};

GpdTerm gpd_term(double x, double xi, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("gpd: sigma must be positive");
  const double a = x / sigma;
  if (std::abs(xi) < kXiZero) {
    // d/dxi of the general form at xi = 0 is a - a^2/2.
    return {std::log(sigma) + a, 1.0 / sigma, a - 0.5 * a * a, 1.0 / sigma - a / sigma, false};
  }
  double z = 1.0 + xi * a;
  bool violated = false;
  if (z <= kSupportEps) {
    z = kSupportEps;
    violated = true;
  }
  const double c = 1.0 / xi + 1.0;
  const double nll = std::log(sigma) + c * std::log(z);
  if (violated) return {nll, 0.0, 0.0, 1.0 / sigma, true};
  return {nll, (1.0 + xi) / (sigma * z), -std::log(z) / (xi * xi) + c * a / z,
          1.0 / sigma - (1.0 + xi) * x / (sigma * sigma * z), false};
}

std::size_t nearest_rank_index(std::span<const double> values, double q, std::vector<std::size_t>& order) {
  order.resize(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  const double pos = std::ceil(q * static_cast<double>(values.size()) - 1e-9);
  const auto rank = static_cast<std::size_t>(std::clamp(pos, 1.0, static_cast<double>(values.size())));
  return order[rank - 1];
}

}  // namespace

double gpd_nll(double x, double xi, double sigma) { return gpd_term(x, xi, sigma).nll; }

double nearest_rank_quantile(std::span<const double> values, double q) {
  require_nonempty(values.size(), "nearest_rank_quantile");
  if (!(q > 0.0 && q <= 1.0)) throw DomainError("quantile level must lie in (0, 1]");
  std::vector<std::size_t> order;
  return values[nearest_rank_index(values, q, order)];
}

EvtResult evt_loss(std::span<const double> logits, const GpdOutput& gpd, double quantile, double stability,
                   EvtGrads* grads) {
  require_nonempty(logits.size(), "evt_loss");
  const auto n = static_cast<Eigen::Index>(logits.size());
  if (gpd.xi.size() != n || gpd.sigma.size() != n) throw ShapeError("evt_loss: inconsistent lengths");
  if (!(quantile > 0.0 && quantile < 1.0)) throw DomainError("evt_loss: quantile must lie in (0, 1)");
  if (grads) {
    grads->logit.setZero(n);
    grads->xi.setZero(n);
    grads->sigma.setZero(n);
  }
  std::vector<std::size_t> order;
  const std::size_t k = nearest_rank_index(logits, quantile, order);
  EvtResult res;
  res.u = logits[k];
  std::vector<std::size_t> exceeders;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (logits[i] > res.u) exceeders.push_back(i);
  res.n_exceedances = exceeders.size();
  if (exceeders.empty()) {
    res.no_exceedances = true;
    return res;
  }
  const double inv_m = 1.0 / static_cast<double>(exceeders.size());
  double sum = 0.0;
  double du = 0.0;
  for (std::size_t i : exceeders) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double xi = gpd.xi(ii), sigma = gpd.sigma(ii);
    const GpdTerm t = gpd_term(logits[i] - res.u, xi, sigma);
    const double log_sigma = std::log(sigma);
    sum += t.nll + stability * (xi * xi + log_sigma * log_sigma);
    res.support_violations += t.violated;
    if (grads) {
      grads->logit(ii) += inv_m * t.dx;
      du -= inv_m * t.dx;
      grads->xi(ii) = inv_m * (t.dxi + 2.0 * stability * xi);
      grads->sigma(ii) = inv_m * (t.dsigma + 2.0 * stability * log_sigma / sigma);
    }
  }
  if (grads) grads->logit(static_cast<Eigen::Index>(k)) += du;
  res.loss = sum * inv_m;
  return res;
}

double precursor_loss(std::span<const double> logits, std::span<const int> y, Vec* grad) {
  require_nonempty(logits.size(), "precursor_loss");
  if (logits.size() != y.size()) throw ShapeError("precursor_loss: logit and label lengths differ");
  std::vector<double> prob(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw NumericError("precursor_loss: non-finite logit");
    prob[i] = sigmoid(logits[i]);
  }
  Vec dprob;
  const double loss = focal_loss(prob, y, 0.0, grad ? &dprob : nullptr);
  if (grad) {
    grad->resize(static_cast<Eigen::Index>(logits.size()));
    for (std::size_t i = 0; i < prob.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      (*grad)(ii) = dprob(ii) * prob[i] * (1.0 - prob[i]);
    }
  }
  return loss;
}

LossBreakdown composite_loss(const ForwardOutput& out, std::span<const int> y, const LossWeights& w,
                             int epoch, OutputGrads* grads) {
  const auto n = out.size();
  require_nonempty(n, "composite_loss");
  if (y.size() != n) throw ShapeError("composite_loss: label length differs from batch");
  for (double lam : {w.focal, w.evidential, w.evt, w.precursor})
    if (lam < 0.0) throw ConfigError("loss weights must be non-negative");

  LossBreakdown b;
  b.gamma = anneal_gamma(epoch, w.focal_schedule);
  const std::span<const double> prob(out.prob.data(), n);
  const std::span<const double> logit(out.logit.data(), n);

  Vec d_prob;
  b.focal = focal_loss(prob, y, b.gamma, grads ? &d_prob : nullptr);

  std::vector<double> target(n);
  for (std::size_t i = 0; i < n; ++i) target[i] = y[i] == 1 ? w.nig_target_margin : -w.nig_target_margin;
  NigGrads nig_g;
  b.evidential = nig_nll(out.nig, target, w.nig_reg_weight, grads ? &nig_g : nullptr);

  EvtGrads evt_g;
  const EvtResult evt = evt_loss(logit, out.gpd, w.evt_quantile, w.evt_stability, grads ? &evt_g : nullptr);
  b.evt = evt.loss;
  b.u = evt.u;
  b.n_exceedances = evt.n_exceedances;
  b.no_exceedances = evt.no_exceedances;
  b.support_violations = evt.support_violations;

  Vec prec_g;
  b.precursor = precursor_loss({out.precursor_logit.data(), n}, y, grads ? &prec_g : nullptr);

  b.total = w.focal * b.focal + w.evidential * b.evidential + w.evt * b.evt + w.precursor * b.precursor;

  if (grads) {
    const Vec dsig = (out.prob.array() * (1.0 - out.prob.array())).matrix();
    grads->logit = w.focal * d_prob.cwiseProduct(dsig) + w.evt * evt_g.logit;
    grads->mu = w.evidential * nig_g.mu;
    grads->nu = w.evidential * nig_g.nu;
    grads->alpha = w.evidential * nig_g.alpha;
    grads->beta = w.evidential * nig_g.beta;
    grads->xi = w.evt * evt_g.xi;
    grads->sigma = w.evt * evt_g.sigma;
    grads->precursor_logit = w.precursor * prec_g;
  }
  return b;
}

}  // namespace rarecast
