#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rarecast/data.hpp"
#include "rarecast/losses.hpp"
#include "rarecast/model.hpp"

namespace rarecast {

struct TrainConfig {
  int max_epochs = 30;
  std::size_t batch_size = 256;
  double peak_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;
  std::uint64_t cosine_total_steps = 0;  // 0: max_epochs * batches per epoch
  int early_stop_patience = 8;
  std::uint64_t seed = 0;
  int eval_every = 1;
  std::string precision = "fp64";  // only full precision is implemented

  void validate() const;
};

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double peak_lr);

// Scales all gradients by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the norm before clipping. Throws NumericError naming the
// first non-finite tensor.
double clip_gradients(std::span<const std::span<double>> grads, std::span<const std::string> names,
                      double max_norm);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Adam with decoupled weight decay:
//   p <- p * (1 - lr * wd);  p <- p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
 public:
  AdamW() = default;
  AdamW(AdamWConfig config, std::span<const std::size_t> sizes);

  void step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads, double lr);

  std::uint64_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }
  void restore(std::uint64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  AdamWConfig config_{};
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

struct TensorViews {
  std::vector<std::string> names;
  std::vector<std::span<double>> data;
  std::vector<std::size_t> sizes;
};

TensorViews tensor_views(ModelParams& params);

struct EpochLog {
  int epoch = 0;
  std::uint64_t step = 0;  // optimizer steps completed
  double lr = 0.0;
  double gamma = 0.0;
  double focal = 0.0, evidential = 0.0, evt = 0.0, precursor = 0.0, total = 0.0;
  double val_tss = 0.0, val_ece = 0.0, val_brier = 0.0, tau = 0.5;
  bool improved = false;
};

struct StepLog {
  int epoch = 0;
  std::uint64_t step = 0;
  LossBreakdown loss;
};

struct TrainState {
  ModelParams params;
  ModelParams best_params;
  std::uint64_t adam_steps = 0;
  std::vector<std::vector<double>> adam_m, adam_v;
  int epoch = 0;  // epochs completed
  std::uint64_t step = 0;
  double best_val_metric = -1.0;
  int best_epoch = -1;
  int epochs_since_improvement = 0;
  bool finished = false;
  std::string stop_reason;
};

struct Evaluation {
  Vec prob;
  ForwardOutput out;
};

// Eval-mode forward in chunks. Only `prob` is needed for decisions; the other
// head outputs are diagnostics.
Evaluation evaluate(const ModelParams& params, const ModelConfig& config, const WindowBatch& batch,
                    std::size_t chunk = 2048);

class Trainer {
 public:
  Trainer(ModelConfig model, TrainConfig train, LossWeights weights, const WindowBatch& train_data,
          const WindowBatch& val_data, ModelParams initial);
  Trainer(ModelConfig model, TrainConfig train, LossWeights weights, const WindowBatch& train_data,
          const WindowBatch& val_data, TrainState resumed);

  // Runs one epoch; returns false once training has finished.
  bool run_epoch();
  void run();

  const TrainState& state() const { return state_; }
  const std::vector<EpochLog>& epoch_log() const { return epoch_log_; }
  const std::vector<StepLog>& step_log() const { return step_log_; }
  std::uint64_t total_steps() const { return total_steps_; }

 private:
  void setup();

  ModelConfig model_;
  TrainConfig train_;
  LossWeights weights_;
  const WindowBatch& train_data_;
  const WindowBatch& val_data_;
  TrainState state_;
  AdamW optimizer_;
  std::uint64_t total_steps_ = 0;
  std::vector<EpochLog> epoch_log_;
  std::vector<StepLog> step_log_;
};

// Checkpoint of a whole training state ("RCTS"), bit-exact round trip.
void save_train_state(const TrainState& state, const ModelConfig& config, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path, ModelConfig* config = nullptr);

}  // namespace rarecast
