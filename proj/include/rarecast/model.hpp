#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rarecast/common.hpp"
#include "rarecast/data.hpp"

namespace rarecast {

enum class Pooling { attention, mean };

struct ModelConfig {
  int d = 128;
  int layers = 6;
  int heads = 4;
  int ffn = 256;
  double dropout = 0.20;
  int steps = 10;
  int features = 9;
  Pooling pooling = Pooling::attention;

  static ModelConfig reference() { return {}; }
  // Throws ConfigError.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct Linear {
  Mat weight;  // out x in
  Vec bias;    // out
};

struct LayerNorm {
  Vec gain;
  Vec shift;
};

struct EncoderLayer {
  Linear query, key, value, out;
  LayerNorm attn_norm;
  Linear ffn_in, ffn_out;
  LayerNorm ffn_norm;
};

// Every trainable tensor of the network. Also used as the gradient and
// optimizer-moment container, so all instances for a config share one layout.
struct ModelParams {
  Linear embed;
  LayerNorm embed_norm;
  Vec pe_scale;  // single learnable scalar
  std::vector<EncoderLayer> layers;
  Vec pool_scorer;
  Linear shared;
  Linear classifier;
  Linear evidential;
  Linear evt;
  Linear precursor;

  static ModelParams zeros(const ModelConfig& config);
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit norms,
  // pe_scale = 1.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  using TensorVisitor = std::function<void(std::string_view name, std::span<double> data,
                                           Eigen::Index rows, Eigen::Index cols)>;
  using ConstTensorVisitor = std::function<void(std::string_view name, std::span<const double> data,
                                                Eigen::Index rows, Eigen::Index cols)>;
  // Visits tensors in a fixed order with stable dotted names.
  void visit(const TensorVisitor& fn);
  void visit(const ConstTensorVisitor& fn) const;

  std::size_t scalar_count() const;
  void set_zero();
};

enum class Mode { train, eval };

struct NigOutput {
  Vec mu, nu, alpha, beta;
};

struct GpdOutput {
  Vec xi, sigma;
};

struct ForwardOutput {
  Vec logit;
  Vec prob;
  NigOutput nig;
  GpdOutput gpd;
  Vec precursor_logit;
  Mat attn_weights;  // N x T
  Mat pooled;        // N x d

  std::size_t size() const { return static_cast<std::size_t>(logit.size()); }
};

// dLoss/d(output) for every differentiable head output. Empty vectors mean
// "no gradient from this output".
struct OutputGrads {
  Vec logit;
  Vec mu, nu, alpha, beta;
  Vec xi, sigma;
  Vec precursor_logit;
};

struct ForwardCache;

// Caches intermediate activations of a forward pass for backpropagation.
class ForwardTrace {
 public:
  ForwardTrace();
  ~ForwardTrace();
  ForwardTrace(ForwardTrace&&) noexcept;
  ForwardTrace& operator=(ForwardTrace&&) noexcept;

 private:
  friend ForwardOutput forward(const ModelParams&, const ModelConfig&, const Eigen::Ref<const Mat>&,
                               Mode, Rng*, ForwardTrace*);
  friend void backward(const ModelParams&, const ModelConfig&, const ForwardTrace&,
                       const OutputGrads&, ModelParams&, Mat*);
  std::unique_ptr<ForwardCache> cache_;
};

// Transformation constants for the constrained head outputs.
struct HeadTransforms {
  static constexpr double kFloor = 1e-6;
  static constexpr double kXiMin = -0.5;
  static constexpr double kXiMax = 1.0;
};

// tokens: (N*T) x F. Train mode needs an rng for dropout; eval mode is
// deterministic. When `trace` is non-null, activations are kept for backward().
ForwardOutput forward(const ModelParams& params, const ModelConfig& config,
                      const Eigen::Ref<const Mat>& tokens, Mode mode, Rng* rng = nullptr,
                      ForwardTrace* trace = nullptr);

ForwardOutput forward(const ModelParams& params, const ModelConfig& config,
                      const WindowBatch& batch, Mode mode, Rng* rng = nullptr,
                      ForwardTrace* trace = nullptr);

// Accumulates parameter gradients into `grads` (not zeroed here) and, when
// requested, writes d(loss)/d(tokens) into `input_grad`.
void backward(const ModelParams& params, const ModelConfig& config, const ForwardTrace& trace,
              const OutputGrads& out_grads, ModelParams& grads, Mat* input_grad = nullptr);

// Interleaved sinusoidal codes: column 2i is sin(t / 10000^(2i/d)), 2i+1 the cosine.
Mat sinusoidal_pe(int steps, int d);

// d(classification logit)/d(window), T x F, evaluated in eval mode.
Mat saliency(const ModelParams& params, const ModelConfig& config, const Eigen::Ref<const Mat>& window);

double gelu(double x);
double gelu_grad(double x);
double softplus(double x);
double sigmoid(double x);

// Per-module budget grouped like the published complexity table.
struct ModuleBudget {
  std::string module;
  std::size_t params = 0;
  std::uint64_t macs = 0;
};

enum class FlopCounting { mac, flop2x };

struct ComplexityReport {
  std::vector<ModuleBudget> rows;  // embedding, encoder, bottleneck, classification, evidential, evt, precursor
  std::size_t total_params() const;
  std::uint64_t total_macs() const;
  static std::uint64_t flops(std::uint64_t macs, FlopCounting counting) {
    return counting == FlopCounting::flop2x ? 2 * macs : macs;
  }
};

ComplexityReport count_params(const ModelConfig& config);
inline ComplexityReport count_flops(const ModelConfig& config) { return count_params(config); }

// Checkpoint: magic "RCCK", u32 version, config block, then for each named
// tensor: u32 name length, name bytes, u64 rows, u64 cols, f64 data.
void save_params(const ModelParams& params, const ModelConfig& config, const std::filesystem::path& path);
std::pair<ModelParams, ModelConfig> load_params(const std::filesystem::path& path);
void write_params(std::ostream& out, const ModelParams& params);
void read_params(std::istream& in, ModelParams& params);
void write_config(std::ostream& out, const ModelConfig& config);
ModelConfig read_config(std::istream& in);

}  // namespace rarecast
