#pragma once

#include <span>

#include "rarecast/common.hpp"
#include "rarecast/model.hpp"

namespace rarecast {

inline constexpr double kProbEps = 1e-7;

struct FocalSchedule {
  double gamma_start = 0.0;
  double gamma_end = 2.0;
  int anneal_epochs = 50;
};

struct LossWeights {
  double focal = 0.8;
  double evidential = 0.1;
  double evt = 0.1;
  double precursor = 0.05;
  double evt_quantile = 0.90;
  FocalSchedule focal_schedule{};
  double nig_reg_weight = 0.01;
  double nig_target_margin = 3.0;  // labels map to +/- margin in logit space
  double evt_stability = 1e-3;
};

struct LossBreakdown {
  double focal = 0.0;
  double evidential = 0.0;
  double evt = 0.0;
  double precursor = 0.0;
  double total = 0.0;
  double gamma = 0.0;
  std::size_t n_exceedances = 0;
  double u = 0.0;
  bool no_exceedances = false;
  std::size_t support_violations = 0;
};

// Mean focal loss on probabilities clamped to [eps, 1-eps]. When `grad` is
// given it receives d(loss)/d(prob) (zero where clamping is active).
double focal_loss(std::span<const double> prob, std::span<const int> y, double gamma, Vec* grad = nullptr);

double anneal_gamma(int epoch, const FocalSchedule& schedule);

struct NigGrads {
  Vec mu, nu, alpha, beta;
};

// Mean Normal-Inverse-Gamma negative log-likelihood plus
// reg_weight * mean(|y - mu| * (2 nu + alpha)).
double nig_nll(const NigOutput& nig, std::span<const double> target, double reg_weight,
               NigGrads* grads = nullptr);

struct NigUncertainty {
  double aleatoric;
  double epistemic;
};

NigUncertainty nig_uncertainty(double nu, double alpha, double beta);

// Generalized Pareto negative log-density of exceedance x >= 0. The
// exponential limit is used for |xi| < 1e-6.
double gpd_nll(double x, double xi, double sigma);

struct EvtResult {
  double loss = 0.0;
  double u = 0.0;
  std::size_t n_exceedances = 0;
  std::size_t support_violations = 0;
  bool no_exceedances = false;
};

struct EvtGrads {
  Vec logit, xi, sigma;
};

// Nearest-rank quantile: the ceil(q*N)-th smallest value (1-based).
double nearest_rank_quantile(std::span<const double> values, double q);

EvtResult evt_loss(std::span<const double> logits, const GpdOutput& gpd, double quantile,
                   double stability = 1e-3, EvtGrads* grads = nullptr);

// Mean binary cross-entropy on sigmoid(logit), probabilities clamped to
// [eps, 1-eps]. `grad` receives d(loss)/d(logit).
double precursor_loss(std::span<const double> logits, std::span<const int> y, Vec* grad = nullptr);

LossBreakdown composite_loss(const ForwardOutput& out, std::span<const int> y, const LossWeights& weights,
                             int epoch, OutputGrads* grads = nullptr);

}  // namespace rarecast
