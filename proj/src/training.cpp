#include "rarecast/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "rarecast/decisions.hpp"
#include "rarecast/metrics.hpp"

namespace rarecast {

void TrainConfig::validate() const {
  if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(peak_lr >= 0.0)) throw ConfigError("peak_lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (precision != "fp64")
    throw ConfigError("precision '" + precision + "' is not available; only fp64 training is implemented");
}

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double peak_lr) {
  if (total_steps == 0) return peak_lr;
  const double frac = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

double clip_gradients(std::span<const std::span<double>> grads, std::span<const std::string> names,
                      double max_norm) {
  double sq = 0.0;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    for (double g : grads[k]) {
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in " + (k < names.size() ? names[k] : std::to_string(k)));
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto g : grads)
      for (double& x : g) x *= scale;
  }
  return norm;
}

AdamW::AdamW(AdamWConfig config, std::span<const std::size_t> sizes) : config_(config) {
  for (std::size_t n : sizes) {
    m_.emplace_back(n, 0.0);
    v_.emplace_back(n, 0.0);
  }
}

void AdamW::step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                 double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw ShapeError("AdamW: tensor count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto g = grads[k];
    auto& m = m_[k];
    auto& v = v_[k];
    if (p.size() != m.size() || g.size() != m.size()) throw ShapeError("AdamW: tensor size mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] *= decay;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

void AdamW::restore(std::uint64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw ShapeError("AdamW: restored state has wrong layout");
  for (std::size_t k = 0; k < m_.size(); ++k)
    if (m[k].size() != m_[k].size() || v[k].size() != v_[k].size())
      throw ShapeError("AdamW: restored moment has wrong size");
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

TensorViews tensor_views(ModelParams& params) {
  TensorViews views;
  params.visit(ModelParams::TensorVisitor(
      [&](std::string_view name, std::span<double> data, Eigen::Index, Eigen::Index) {
        views.names.emplace_back(name);
        views.data.push_back(data);
        views.sizes.push_back(data.size());
      }));
  return views;
}

namespace {

void append_rows(Vec& dst, const Vec& src) {
  const Eigen::Index old = dst.size();
  dst.conservativeResize(old + src.size());
  dst.tail(src.size()) = src;
}

void append_rows(Mat& dst, const Mat& src) {
  const Eigen::Index old = dst.rows();
  dst.conservativeResize(old + src.rows(), src.cols());
  dst.bottomRows(src.rows()) = src;
}

void append_output(ForwardOutput& dst, const ForwardOutput& src) {
  append_rows(dst.logit, src.logit);
  append_rows(dst.prob, src.prob);
  append_rows(dst.nig.mu, src.nig.mu);
  append_rows(dst.nig.nu, src.nig.nu);
  append_rows(dst.nig.alpha, src.nig.alpha);
  append_rows(dst.nig.beta, src.nig.beta);
  append_rows(dst.gpd.xi, src.gpd.xi);
  append_rows(dst.gpd.sigma, src.gpd.sigma);
  append_rows(dst.precursor_logit, src.precursor_logit);
  append_rows(dst.attn_weights, src.attn_weights);
  append_rows(dst.pooled, src.pooled);
}

Mat gather_tokens(const WindowBatch& batch, std::span<const std::size_t> idx) {
  const auto T = static_cast<Eigen::Index>(batch.steps);
  Mat tokens(static_cast<Eigen::Index>(idx.size()) * T, static_cast<Eigen::Index>(batch.features));
  for (std::size_t k = 0; k < idx.size(); ++k)
    tokens.middleRows(static_cast<Eigen::Index>(k) * T, T) = batch.window(idx[k]);
  return tokens;
}

}  // namespace

Evaluation evaluate(const ModelParams& params, const ModelConfig& config, const WindowBatch& batch,
                    std::size_t chunk) {
  Evaluation ev;
  if (batch.empty()) {
    ev.out = forward(params, config, batch, Mode::eval);
    ev.prob = ev.out.prob;
    return ev;
  }
  if (batch.steps != static_cast<std::size_t>(config.steps) || batch.features != static_cast<std::size_t>(config.features))
    throw ShapeError("evaluate: batch shape does not match model config");
  const auto T = static_cast<Eigen::Index>(batch.steps);
  const auto all = batch.tokens();
  bool first = true;
  for (std::size_t start = 0; start < batch.size(); start += chunk) {
    const std::size_t len = std::min(chunk, batch.size() - start);
    ForwardOutput part = forward(params, config,
                                 all.middleRows(static_cast<Eigen::Index>(start) * T, static_cast<Eigen::Index>(len) * T),
                                 Mode::eval);
    if (first) {
      ev.out = std::move(part);
      first = false;
    } else {
      append_output(ev.out, part);
    }
  }
  ev.prob = ev.out.prob;
  return ev;
}

Trainer::Trainer(ModelConfig model, TrainConfig train, LossWeights weights, const WindowBatch& train_data,
                 const WindowBatch& val_data, ModelParams initial)
    : model_(model), train_(std::move(train)), weights_(weights), train_data_(train_data), val_data_(val_data) {
  state_.params = std::move(initial);
  state_.best_params = state_.params;
  setup();
}

Trainer::Trainer(ModelConfig model, TrainConfig train, LossWeights weights, const WindowBatch& train_data,
                 const WindowBatch& val_data, TrainState resumed)
    : model_(model),
      train_(std::move(train)),
      weights_(weights),
      train_data_(train_data),
      val_data_(val_data),
      state_(std::move(resumed)) {
  setup();
  optimizer_.restore(state_.adam_steps, state_.adam_m, state_.adam_v);
}

void Trainer::setup() {
  model_.validate();
  train_.validate();
  if (train_data_.empty()) throw ConfigError("training split is empty");
  if (val_data_.empty()) throw ConfigError("validation split is empty");
  if (train_data_.steps != static_cast<std::size_t>(model_.steps) ||
      train_data_.features != static_cast<std::size_t>(model_.features))
    throw ShapeError("training windows do not match the model's T x F");
  const std::uint64_t per_epoch = (train_data_.size() + train_.batch_size - 1) / train_.batch_size;
  total_steps_ = train_.cosine_total_steps ? train_.cosine_total_steps
                                           : per_epoch * static_cast<std::uint64_t>(train_.max_epochs);
  const TensorViews views = tensor_views(state_.params);
  optimizer_ = AdamW({train_.beta1, train_.beta2, train_.adam_eps, train_.weight_decay}, views.sizes);
  if (train_.max_epochs == 0) state_.finished = true;
}

bool Trainer::run_epoch() {
  if (state_.finished) return false;
  const int epoch = state_.epoch;
  const std::size_t n = train_data_.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = derive_rng(train_.seed, 0xe90c, static_cast<std::uint32_t>(epoch));
  shuffle_in_place(order, shuffle_rng);

  const ModelParams last_good = state_.params;
  ModelParams grads = ModelParams::zeros(model_);
  TensorViews pviews = tensor_views(state_.params);
  TensorViews gviews = tensor_views(grads);
  std::vector<std::span<const double>> gconst(gviews.data.begin(), gviews.data.end());

  EpochLog log;
  log.epoch = epoch;
  log.gamma = anneal_gamma(epoch, weights_.focal_schedule);
  std::size_t batches = 0;
  bool diverged = false;
  std::string diverge_reason;
  for (std::size_t start = 0; start < n; start += train_.batch_size) {
    const std::size_t len = std::min(train_.batch_size, n - start);
    const std::span<const std::size_t> idx(order.data() + start, len);
    const Mat tokens = gather_tokens(train_data_, idx);
    std::vector<int> y(len);
    for (std::size_t k = 0; k < len; ++k) y[k] = train_data_.labels[idx[k]];

    Rng drop_rng = derive_rng(train_.seed, 0xd409, static_cast<std::uint32_t>(state_.step),
                              static_cast<std::uint32_t>(state_.step >> 32));
    LossBreakdown b;
    try {
      ForwardTrace trace;
      const ForwardOutput out = forward(state_.params, model_, tokens, Mode::train, &drop_rng, &trace);
      OutputGrads og;
      b = composite_loss(out, y, weights_, epoch, &og);
      if (!std::isfinite(b.total)) throw NumericError("non-finite loss at step " + std::to_string(state_.step));
      grads.set_zero();
      backward(state_.params, model_, trace, og, grads);
      clip_gradients(gviews.data, gviews.names, train_.clip_norm);
    } catch (const NumericError& e) {
      diverged = true;
      diverge_reason = e.what();
      break;
    }
    const double lr = cosine_lr(state_.step, total_steps_, train_.peak_lr);
    optimizer_.step(pviews.data, gconst, lr);
    log.lr = lr;
    ++state_.step;
    ++batches;
    log.focal += b.focal;
    log.evidential += b.evidential;
    log.evt += b.evt;
    log.precursor += b.precursor;
    log.total += b.total;
    step_log_.push_back({epoch, state_.step, b});
  }

  if (diverged) {
    state_.params = last_good;
    state_.finished = true;
    state_.stop_reason = "diverged: " + diverge_reason;
    return false;
  }

  if (batches > 0) {
    const double inv = 1.0 / static_cast<double>(batches);
    log.focal *= inv;
    log.evidential *= inv;
    log.evt *= inv;
    log.precursor *= inv;
    log.total *= inv;
  }
  log.step = state_.step;
  state_.epoch = epoch + 1;

  if ((epoch + 1) % train_.eval_every == 0 || state_.epoch >= train_.max_epochs) {
    const Evaluation ev = evaluate(state_.params, model_, val_data_);
    const std::span<const double> p(ev.prob.data(), static_cast<std::size_t>(ev.prob.size()));
    const ThresholdReport sweep = threshold_sweep(p, val_data_.labels);
    log.tau = sweep.tau_star;
    log.val_tss = tss(confusion(p, val_data_.labels, sweep.tau_star));
    log.val_brier = brier(p, val_data_.labels);
    log.val_ece = ece_equal_frequency(p, val_data_.labels, std::min(kDefaultCalibrationBins, p.size())).ece;
    if (log.val_tss > state_.best_val_metric) {
      state_.best_val_metric = log.val_tss;
      state_.best_epoch = epoch;
      state_.best_params = state_.params;
      state_.epochs_since_improvement = 0;
      log.improved = true;
    } else {
      ++state_.epochs_since_improvement;
    }
  }
  epoch_log_.push_back(log);

  state_.adam_steps = optimizer_.steps();
  state_.adam_m = optimizer_.first_moment();
  state_.adam_v = optimizer_.second_moment();

  if (state_.epochs_since_improvement >= train_.early_stop_patience) {
    state_.finished = true;
    state_.stop_reason = "early stop";
  } else if (state_.epoch >= train_.max_epochs) {
    state_.finished = true;
    state_.stop_reason = "max epochs";
  }
  return !state_.finished;
}

void Trainer::run() {
  while (run_epoch()) {
  }
}

static_assert(std::endian::native == std::endian::little, "train state layout assumes little-endian");

namespace {

constexpr char kStateMagic[4] = {'R', 'C', 'T', 'S'};
constexpr std::uint32_t kStateVersion = 1;

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("truncated train state");
  return v;
}

void put_moments(std::ostream& out, const std::vector<std::vector<double>>& m) {
  put(out, static_cast<std::uint64_t>(m.size()));
  for (const auto& t : m) {
    put(out, static_cast<std::uint64_t>(t.size()));
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

std::vector<std::vector<double>> get_moments(std::istream& in) {
  std::vector<std::vector<double>> m(get<std::uint64_t>(in));
  for (auto& t : m) {
    t.resize(get<std::uint64_t>(in));
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw ParseError("truncated optimizer moments");
  }
  return m;
}

}  // namespace

void save_train_state(const TrainState& s, const ModelConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kStateMagic, 4);
  put(out, kStateVersion);
  write_config(out, config);
  write_params(out, s.params);
  write_params(out, s.best_params);
  put(out, s.adam_steps);
  put_moments(out, s.adam_m);
  put_moments(out, s.adam_v);
  put<std::int32_t>(out, s.epoch);
  put(out, s.step);
  put(out, s.best_val_metric);
  put<std::int32_t>(out, s.best_epoch);
  put<std::int32_t>(out, s.epochs_since_improvement);
  put<std::uint8_t>(out, s.finished ? 1 : 0);
  put(out, static_cast<std::uint32_t>(s.stop_reason.size()));
  out.write(s.stop_reason.data(), static_cast<std::streamsize>(s.stop_reason.size()));
}

TrainState load_train_state(const std::filesystem::path& path, ModelConfig* config_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kStateMagic, 4) != 0) throw ParseError("not a train state: " + path.string());
  if (get<std::uint32_t>(in) != kStateVersion) throw ParseError("unsupported train state version");
  const ModelConfig config = read_config(in);
  TrainState s;
  s.params = ModelParams::zeros(config);
  read_params(in, s.params);
  s.best_params = ModelParams::zeros(config);
  read_params(in, s.best_params);
  s.adam_steps = get<std::uint64_t>(in);
  s.adam_m = get_moments(in);
  s.adam_v = get_moments(in);
  s.epoch = get<std::int32_t>(in);
  s.step = get<std::uint64_t>(in);
  s.best_val_metric = get<double>(in);
  s.best_epoch = get<std::int32_t>(in);
  s.epochs_since_improvement = get<std::int32_t>(in);
  s.finished = get<std::uint8_t>(in) != 0;
  s.stop_reason.resize(get<std::uint32_t>(in));
  in.read(s.stop_reason.data(), static_cast<std::streamsize>(s.stop_reason.size()));
  if (config_out) *config_out = config;
  return s;
}

}  // namespace rarecast
