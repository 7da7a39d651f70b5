#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rarecast/decisions.hpp"
#include "rarecast/experiments.hpp"
#include "rarecast/metrics.hpp"

namespace rarecast {

using Json = nlohmann::ordered_json;

inline constexpr int kReportSchemaVersion = 1;

// Config files. Every key is optional and falls back to the defaults of the
// corresponding struct; unknown keys are rejected.
// Fields absent from `j` keep their value in `base`.
ModelConfig model_config_from_json(const Json& j, const ModelConfig& base = {});
Json to_json(const ModelConfig& c);
TrainConfig train_config_from_json(const Json& j);
Json to_json(const TrainConfig& c);
LossWeights loss_weights_from_json(const Json& j);
Json to_json(const LossWeights& w);
SyntheticTaskSpec synthetic_spec_from_json(const Json& j);
Json to_json(const SyntheticTaskSpec& s);
ExperimentConfig experiment_config_from_json(const Json& j, const std::filesystem::path& base_dir = {});
Json to_json(const ExperimentConfig& c);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const Json& j, const std::filesystem::path& path);
void write_text_file(const std::string& text, const std::filesystem::path& path);

Json to_json(const CalibrationReport& r);
Json to_json(const BootstrapResult& r);
Json to_json(const ThresholdReport& r);
Json to_json(const CostCurve& c);
Json to_json(const ReplayResult& r);
Json to_json(const ComplexityReport& r);
Json to_json(const ExperimentReport& r);
Json to_json(const AblationReport& r);
Json to_json(const SweepReport& r);

std::string calibration_csv(const CalibrationReport& r);
std::string threshold_csv(const ThresholdReport& r);
std::string cost_csv(const CostCurve& c);
std::string epoch_log_csv(const std::vector<EpochLog>& log);
std::string step_log_csv(const std::vector<StepLog>& log);
std::string complexity_table(const ComplexityReport& r, FlopCounting counting);
std::string ablation_csv(const AblationReport& r);
// Long-form sweep table, one row per cell.
std::string sweep_csv(const SweepReport& r);
// Heatmap matrix (rows: kappa_evid, cols: kappa_evt) of TSS or ECE.
std::string lambda_matrix_csv(const SweepReport& r, bool ece);

// Prediction files: header "index,prob,label,group".
struct PredictionTable {
  std::vector<double> prob;
  std::vector<int> labels;
  std::vector<std::int64_t> groups;
};
std::string predictions_csv(const PredictionTable& t);
PredictionTable read_predictions_csv(const std::filesystem::path& path);

// Replay traces: header "time,prob".
std::vector<TracePoint> read_trace_csv(const std::filesystem::path& path);

// Shortest round-trip decimal form.
std::string fmt_double(double v);

}  // namespace rarecast
