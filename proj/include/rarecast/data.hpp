#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rarecast/common.hpp"

namespace rarecast {

// N fixed-length windows of shape T x F with binary labels and a grouping key.
// Values are stored row-major as [window][step][feature].
struct WindowBatch {
  std::size_t steps = 0;
  std::size_t features = 0;
  std::vector<double> values;
  std::vector<int> labels;
  std::vector<std::int64_t> group_ids;
  std::vector<double> timestamps;  // empty when absent

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  // All windows stacked as (N*T) x F rows.
  Eigen::Map<const Mat> tokens() const;
  Eigen::Map<const Mat> window(std::size_t i) const;
  Eigen::Map<Mat> window(std::size_t i);

  std::size_t positives() const;
  WindowBatch subset(std::span<const std::size_t> indices) const;
  // Throws ShapeError on inconsistent field sizes or labels outside {0,1}.
  void validate() const;
};

enum class LabelRule { first_step, any_step };

WindowBatch make_windows(const Mat& series, std::span<const int> labels_per_step,
                         std::size_t window_len, std::size_t stride,
                         LabelRule rule = LabelRule::first_step);

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct DataSplits {
  WindowBatch train;
  WindowBatch val;
  WindowBatch test;
};

// Assigns whole groups to splits: groups are shuffled under `seed` and handed
// out greedily until each split's window quota is met.
DataSplits group_stratified_split(const WindowBatch& batch, SplitFractions fractions,
                                  std::uint64_t seed);

struct SyntheticTaskSpec {
  std::size_t n_windows = 59400;
  std::size_t steps = 12;
  std::size_t features = 4;
  double positive_rate = 1.0 / 297.0;
  double precursor_amplitude = 3.0;
  std::size_t precursor_length = 4;
  double noise_persistence = 0.5;
  std::size_t n_groups = 120;
  std::size_t signal_features = 2;
  std::uint64_t seed = 0;
};

// Exactly round(n_windows * positive_rate) positives, placed by a seeded
// permutation. Every window is stationary AR(1) noise; positives add a linear
// ramp over the final precursor_length steps of the first signal_features.
WindowBatch synth_generate(const SyntheticTaskSpec& spec);

struct Standardizer {
  static constexpr double kMinStd = 1e-8;
  Vec mean;
  Vec std;
  std::vector<std::size_t> clamped_features;  // zero-variance features

  WindowBatch apply(const WindowBatch& batch) const;
};

Standardizer fit_standardizer(const WindowBatch& train);
inline WindowBatch apply_standardizer(const Standardizer& s, const WindowBatch& batch) {
  return s.apply(batch);
}

// SKAB-style traces: header row, first column a timestamp, numeric sensor
// columns, an integer "anomaly" column and an optional "changepoint" column.
struct SensorTrace {
  std::vector<std::string> sensor_names;
  Mat values;  // steps x sensors
  std::vector<int> anomaly;
};

SensorTrace read_sensor_csv(const std::filesystem::path& path);

// Raw sensors followed by first differences (difference at step 0 is 0).
Mat stack_with_differences(const Mat& raw);

struct SkabOptions {
  std::size_t window_len = 24;
  std::size_t train_stride = 2;
  std::size_t eval_stride = 1;
  SplitFractions fractions{};
};

struct SkabDataset {
  DataSplits splits;  // standardized with train-only moments
  Standardizer standardizer;
  // Per trace: row index where val and test segments start.
  std::vector<std::array<std::size_t, 2>> boundaries;
};

SkabDataset skab_ingest(std::span<const std::filesystem::path> csv_paths,
                        const SkabOptions& options = {});

// Binary container: magic "RCWB", u32 version, u64 N/T/F, f64 values,
// u8 labels, i64 group ids, u8 has_timestamps, f64 timestamps. Little-endian.
void save_batch(const WindowBatch& batch, const std::filesystem::path& path);
WindowBatch load_batch(const std::filesystem::path& path);

// FNV-1a over the serialized batch; used to fingerprint run inputs.
std::uint64_t batch_fingerprint(const WindowBatch& batch);

}  // namespace rarecast
