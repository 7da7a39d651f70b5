#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rarecast/data.hpp"
#include "rarecast/losses.hpp"
#include "rarecast/metrics.hpp"
#include "rarecast/model.hpp"
#include "rarecast/training.hpp"

namespace rarecast {

struct DataSource {
  enum class Kind { synthetic, batch_file, skab };
  Kind kind = Kind::synthetic;
  SyntheticTaskSpec synthetic{};
  std::filesystem::path batch_path;  // group-split after loading
  std::vector<std::filesystem::path> skab_paths;
  SkabOptions skab{};
  SplitFractions fractions{};
  std::uint64_t split_seed = 0;
  bool standardize = true;
};

struct ExperimentConfig {
  ModelConfig model = desk_model();
  TrainConfig train{};
  LossWeights loss{};
  DataSource data{};
  std::size_t bootstrap_draws = 10000;
  // When set, test metrics use this threshold instead of the validation sweep.
  std::optional<double> fixed_tau;

  // Small backbone used for CPU-scale runs on synthetic data.
  static ModelConfig desk_model();
};

struct PreparedData {
  DataSplits splits;
  std::uint64_t fingerprint = 0;  // of the unsplit input batch
  std::vector<std::size_t> standardizer_clamped;
};

PreparedData prepare_data(const DataSource& source);

struct TestMetrics {
  double tss = 0.0, f1 = 0.0, precision = 0.0, recall = 0.0, specificity = 0.0;
  double brier = 0.0, ece = 0.0, auroc = 0.0, pr_auc = 0.0;
  ConfusionMatrix cm;
};

TestMetrics compute_test_metrics(std::span<const double> prob, std::span<const int> y, double tau);

struct SeedRun {
  std::uint64_t seed = 0;
  bool flagged = false;  // diverged or otherwise suspect; kept but reported
  std::string flag_reason;
  std::string stop_reason;
  int epochs = 0;
  int best_epoch = -1;
  double val_tss = 0.0;  // best validation TSS seen during training
  double tau = 0.5;
  bool tau_fallback = false;
  TestMetrics test;
  std::vector<double> test_prob;
  std::vector<EpochLog> epochs_log;
};

struct MetricSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  bool sd_defined = false;
  std::size_t n = 0;
};

struct ExperimentReport {
  std::vector<SeedRun> runs;
  std::vector<MetricSummary> summary;           // all runs
  std::vector<MetricSummary> summary_unflagged;  // flagged runs removed
  BootstrapResult tss_ci;                        // pooled over seeds, group-resampled
  std::uint64_t data_fingerprint = 0;
};

// Trains one seed and evaluates on the test split. When `run_dir` is
// non-empty, writes checkpoint.bin, train_state.bin, epoch_log.csv,
// loss_log.csv and test_predictions.csv there.
SeedRun run_seed(const ExperimentConfig& config, const DataSplits& splits, std::uint64_t seed,
                 const std::filesystem::path& run_dir = {});

ExperimentReport run_experiment(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds,
                                const std::filesystem::path& out_dir = {});

// Runs over already-prepared data (shared by ablations and sweeps).
ExperimentReport run_experiment(const ExperimentConfig& config, const PreparedData& data,
                                const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir = {});

enum class AblationVariant { full, no_evidential, no_evt, no_evid_evt, mean_pooling, cross_entropy, no_precursor, fp32 };

std::string variant_name(AblationVariant v);
AblationVariant parse_variant(const std::string& name);
std::vector<AblationVariant> all_variants();
// Pure config transform; `full` is the identity. `fp32` is recognized but
// inert: full precision is the only training mode here.
ExperimentConfig apply_variant(const ExperimentConfig& base, AblationVariant v);

struct AblationRow {
  AblationVariant variant = AblationVariant::full;
  bool trained = true;
  std::string note;
  std::vector<MetricSummary> summary;
  double delta_tss_mean = 0.0;    // variant - full, mean over seeds
  double delta_tss_median = 0.0;  // median over seeds of per-seed differences
  double p_value = 1.0;           // paired bootstrap, H0: TSS(full) - TSS(variant) <= 0
  ExperimentReport report;
};

struct AblationReport {
  std::vector<AblationRow> rows;
};

AblationReport run_ablation(const ExperimentConfig& base, std::vector<AblationVariant> variants,
                            const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir = {});

struct SweepSpec {
  enum class Kind { lambda_grid, evt_quantile, focal_schedule };
  Kind kind = Kind::lambda_grid;
  std::vector<double> kappa = {0.5, 0.75, 1.0, 1.25, 1.5};  // lambda_grid multipliers
  std::vector<double> quantiles = {0.85, 0.90, 0.95};
  std::vector<FocalSchedule> schedules = {{2.0, 2.0, 0}, {0.0, 2.0, 50}, {0.0, 4.0, 50}, {0.0, 1.0, 50}};
};

struct SweepCell {
  std::vector<double> coords;  // kappa_evid, kappa_evt | u | (gamma_start, gamma_end, epochs)
  std::string label;
  double tss = 0.0;
  double ece = 0.0;
  double tail_brier = 0.0;  // top 10% of predicted probabilities
  double mid_brier = 0.0;   // remaining 90%
  ExperimentReport report;
};

struct SweepReport {
  SweepSpec::Kind kind = SweepSpec::Kind::lambda_grid;
  std::vector<SweepCell> cells;  // lexicographic in grid coordinates
};

SweepReport run_sweep(const SweepSpec& spec, const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                      const std::filesystem::path& out_dir = {});

struct TailSplitBrier {
  double tail = 0.0;
  double mid = 0.0;
  double threshold = 0.0;
};

// Tail = predictions at or above the nearest-rank 90th percentile.
TailSplitBrier tail_brier(std::span<const double> prob, std::span<const int> y, double tail_fraction = 0.10);

}  // namespace rarecast
