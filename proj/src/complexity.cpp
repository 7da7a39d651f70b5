#include <numeric>

#include "rarecast/model.hpp"

namespace rarecast {

std::size_t ComplexityReport::total_params() const {
  return std::accumulate(rows.begin(), rows.end(), std::size_t{0},
                         [](std::size_t acc, const ModuleBudget& r) { return acc + r.params; });
}

std::uint64_t ComplexityReport::total_macs() const {
  return std::accumulate(rows.begin(), rows.end(), std::uint64_t{0},
                         [](std::uint64_t acc, const ModuleBudget& r) { return acc + r.macs; });
}

// Multiply-accumulates of matrix products for one window (batch = 1).
// Elementwise work (norms, activations, softmax, bias adds) is not counted.
ComplexityReport count_params(const ModelConfig& config) {
  config.validate();
  const std::uint64_t d = static_cast<std::uint64_t>(config.d);
  const std::uint64_t T = static_cast<std::uint64_t>(config.steps);
  const std::uint64_t F = static_cast<std::uint64_t>(config.features);
  const std::uint64_t ffn = static_cast<std::uint64_t>(config.ffn);
  const std::uint64_t L = static_cast<std::uint64_t>(config.layers);

  ComplexityReport r;
  // W_emb, b_emb, norm gain/shift and the positional scale.
  r.rows.push_back({"embedding+pe", d * F + d + 2 * d + 1, T * F * d});

  const std::uint64_t per_layer_params = 4 * (d * d + d) + (d * ffn + ffn) + (ffn * d + d) + 4 * d;
  const std::uint64_t per_layer_macs = 4 * T * d * d   // Q, K, V, O projections
                                       + 2 * T * T * d  // scores and weighted sum
                                       + 2 * T * d * ffn;
  r.rows.push_back({"encoder", L * per_layer_params, L * per_layer_macs});

  const std::uint64_t pool_macs = config.pooling == Pooling::attention ? 2 * T * d : T * d;
  r.rows.push_back({"bottleneck", d, pool_macs});
  r.rows.push_back({"classification", (d * d + d) + (d + 1), d * d + d});
  r.rows.push_back({"evidential", 4 * d + 4, 4 * d});
  r.rows.push_back({"evt", 2 * d + 2, 2 * d});
  r.rows.push_back({"precursor", d + 1, d});
  return r;
}

}  // namespace rarecast
