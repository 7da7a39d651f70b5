#include "rarecast/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rarecast {

void ModelConfig::validate() const {
  if (d <= 0 || heads <= 0 || ffn <= 0 || steps <= 0 || features <= 0 || layers < 0)
    throw ConfigError("model dimensions must be positive");
  if (d % heads != 0) throw ConfigError("d must be divisible by the number of heads");
  if (d % 2 != 0) throw ConfigError("d must be even for sinusoidal positional codes");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Parameter container

namespace {

Linear make_linear(int in, int out) { return {Mat::Zero(out, in), Vec::Zero(out)}; }
LayerNorm make_norm(int d) { return {Vec::Ones(d), Vec::Zero(d)}; }

template <class P, class Fn>
void visit_tensors(P& p, Fn&& fn) {
  auto lin = [&](const std::string& name, auto& l) {
    fn(name + ".weight", l.weight.data(), l.weight.rows(), l.weight.cols());
    fn(name + ".bias", l.bias.data(), l.bias.size(), Eigen::Index{1});
  };
  auto norm = [&](const std::string& name, auto& n) {
    fn(name + ".gain", n.gain.data(), n.gain.size(), Eigen::Index{1});
    fn(name + ".shift", n.shift.data(), n.shift.size(), Eigen::Index{1});
  };
  lin("embed", p.embed);
  norm("embed_norm", p.embed_norm);
  fn(std::string("pe_scale"), p.pe_scale.data(), p.pe_scale.size(), Eigen::Index{1});
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& layer = p.layers[i];
    const std::string pre = "layers." + std::to_string(i) + ".";
    lin(pre + "query", layer.query);
    lin(pre + "key", layer.key);
    lin(pre + "value", layer.value);
    lin(pre + "out", layer.out);
    norm(pre + "attn_norm", layer.attn_norm);
    lin(pre + "ffn_in", layer.ffn_in);
    lin(pre + "ffn_out", layer.ffn_out);
    norm(pre + "ffn_norm", layer.ffn_norm);
  }
  fn(std::string("pool_scorer"), p.pool_scorer.data(), p.pool_scorer.size(), Eigen::Index{1});
  lin("shared", p.shared);
  lin("classifier", p.classifier);
  lin("evidential", p.evidential);
  lin("evt", p.evt);
  lin("precursor", p.precursor);
}

}  // namespace

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  const int d = config.d;
  ModelParams p;
  p.embed = make_linear(config.features, d);
  p.embed_norm = make_norm(d);
  p.pe_scale = Vec::Ones(1);
  p.layers.resize(static_cast<std::size_t>(config.layers));
  for (auto& layer : p.layers) {
    layer.query = make_linear(d, d);
    layer.key = make_linear(d, d);
    layer.value = make_linear(d, d);
    layer.out = make_linear(d, d);
    layer.attn_norm = make_norm(d);
    layer.ffn_in = make_linear(d, config.ffn);
    layer.ffn_out = make_linear(config.ffn, d);
    layer.ffn_norm = make_norm(d);
  }
  p.pool_scorer = Vec::Zero(d);
  p.shared = make_linear(d, d);
  p.classifier = make_linear(d, 1);
  p.evidential = make_linear(d, 4);
  p.evt = make_linear(d, 2);
  p.precursor = make_linear(d, 1);
  p.set_zero();
  return p;
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zeros(config);
  Rng rng = derive_rng(seed, 0x1417);
  auto fill = [&](Mat& w) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = bound * (2.0 * uniform01(rng) - 1.0);
  };
  auto fill_linear = [&](Linear& l) { fill(l.weight); };
  auto reset_norm = [](LayerNorm& n) {
    n.gain.setOnes();
    n.shift.setZero();
  };
  fill_linear(p.embed);
  reset_norm(p.embed_norm);
  p.pe_scale(0) = 1.0;
  for (auto& layer : p.layers) {
    fill_linear(layer.query);
    fill_linear(layer.key);
    fill_linear(layer.value);
    fill_linear(layer.out);
    reset_norm(layer.attn_norm);
    fill_linear(layer.ffn_in);
    fill_linear(layer.ffn_out);
    reset_norm(layer.ffn_norm);
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.d));
  for (Eigen::Index i = 0; i < p.pool_scorer.size(); ++i)
    p.pool_scorer(i) = bound * (2.0 * uniform01(rng) - 1.0);
  fill_linear(p.shared);
  fill_linear(p.classifier);
  fill_linear(p.evidential);
  fill_linear(p.evt);
  fill_linear(p.precursor);
  return p;
}

void ModelParams::visit(const TensorVisitor& fn) {
  visit_tensors(*this, [&](const std::string& name, double* data, Eigen::Index rows, Eigen::Index cols) {
    fn(name, std::span<double>(data, static_cast<std::size_t>(rows * cols)), rows, cols);
  });
}

void ModelParams::visit(const ConstTensorVisitor& fn) const {
  visit_tensors(*this, [&](const std::string& name, const double* data, Eigen::Index rows,
                           Eigen::Index cols) {
    fn(name, std::span<const double>(data, static_cast<std::size_t>(rows * cols)), rows, cols);
  });
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  visit(ConstTensorVisitor([&](std::string_view, std::span<const double> data, Eigen::Index, Eigen::Index) {
    n += data.size();
  }));
  return n;
}

void ModelParams::set_zero() {
  visit(TensorVisitor([](std::string_view, std::span<double> data, Eigen::Index, Eigen::Index) {
    std::fill(data.begin(), data.end(), 0.0);
  }));
}

// ---------------------------------------------------------------------------
// Building blocks

Mat sinusoidal_pe(int steps, int d) {
  if (d <= 0 || d % 2 != 0) throw ConfigError("positional encoding needs an even, positive d");
  Mat pe(steps, d);
  for (int t = 0; t < steps; ++t) {
    for (int i = 0; i < d / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / d);
      pe(t, 2 * i) = std::sin(t * freq);
      pe(t, 2 * i + 1) = std::cos(t * freq);
    }
  }
  return pe;
}

namespace {

constexpr double kNormEps = 1e-5;

struct NormCache {
  Mat xhat;
  Vec inv_std;
};

struct LayerCache {
  Mat input;
  Mat q, k, v;
  Mat probs;  // (N*H*T) x T
  Mat context;
  Mat attn_mask;
  NormCache attn_norm;
  Mat mid;  // post-attention normalized states
  Mat ffn_pre;
  Mat ffn_act;
  Mat ffn_mask;
  NormCache ffn_norm;
};

Mat apply_linear(const Mat& x, const Linear& l) {
  Mat y = x * l.weight.transpose();
  y.rowwise() += l.bias.transpose();
  return y;
}

Mat linear_backward(const Mat& dy, const Mat& x, const Linear& l, Linear& g) {
  g.weight.noalias() += dy.transpose() * x;
  g.bias += dy.colwise().sum().transpose();
  return dy * l.weight;
}

Mat layer_norm(const Mat& x, const LayerNorm& p, NormCache* cache) {
  const Eigen::Index d = x.cols();
  Vec mean = x.rowwise().mean();
  Mat centered = x.colwise() - mean;
  Vec var = centered.array().square().rowwise().sum() / static_cast<double>(d);
  Vec inv = (var.array() + kNormEps).rsqrt();
  Mat xhat = centered.array().colwise() * inv.array();
  Mat y = (xhat.array().rowwise() * p.gain.transpose().array()).rowwise() + p.shift.transpose().array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

Mat layer_norm_backward(const Mat& dy, const LayerNorm& p, const NormCache& c, LayerNorm& g) {
  g.gain += (dy.array() * c.xhat.array()).colwise().sum().transpose().matrix();
  g.shift += dy.colwise().sum().transpose();
  const auto d = static_cast<double>(dy.cols());
  Mat dxhat = dy.array().rowwise() * p.gain.transpose().array();
  Vec mean_dxhat = dxhat.rowwise().sum() / d;
  Vec mean_dxhat_xhat = (dxhat.array() * c.xhat.array()).rowwise().sum().matrix() / d;
  Mat dx = (dxhat.colwise() - mean_dxhat) - (c.xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
  return dx.array().colwise() * c.inv_std.array();
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Mat m(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng) < p ? 0.0 : keep;
  return m;
}

void check_finite(const Mat& m, const std::string& where) {
  if (!m.allFinite()) throw NumericError("non-finite activation in " + where);
}

void softmax_rows(Eigen::Ref<Mat> s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp();
    s.row(r) /= s.row(r).sum();
  }
}

Mat attention_forward(const Mat& q, const Mat& k, const Mat& v, int n, int steps, int heads,
                      Mat* probs_out) {
  const Eigen::Index T = steps;
  const Eigen::Index dh = q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat ctx(q.rows(), q.cols());
  Mat probs(static_cast<Eigen::Index>(n) * heads * T, T);
  for (Eigen::Index w = 0; w < n; ++w) {
    for (Eigen::Index h = 0; h < heads; ++h) {
      auto a = probs.middleRows((w * heads + h) * T, T);
      a.noalias() = q.block(w * T, h * dh, T, dh) * k.block(w * T, h * dh, T, dh).transpose();
      a *= scale;
      softmax_rows(a);
      ctx.block(w * T, h * dh, T, dh).noalias() = a * v.block(w * T, h * dh, T, dh);
    }
  }
  if (probs_out) *probs_out = std::move(probs);
  return ctx;
}

void attention_backward(const Mat& dctx, const LayerCache& c, int n, int steps, int heads, Mat& dq,
                        Mat& dk, Mat& dv) {
  const Eigen::Index T = steps;
  const Eigen::Index dh = c.q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  dq.resize(c.q.rows(), c.q.cols());
  dk.resize(c.q.rows(), c.q.cols());
  dv.resize(c.q.rows(), c.q.cols());
  Mat da(T, T), ds(T, T);
  for (Eigen::Index w = 0; w < n; ++w) {
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto a = c.probs.middleRows((w * heads + h) * T, T);
      const auto dc = dctx.block(w * T, h * dh, T, dh);
      dv.block(w * T, h * dh, T, dh).noalias() = a.transpose() * dc;
      da.noalias() = dc * c.v.block(w * T, h * dh, T, dh).transpose();
      const Vec rowdot = (da.array() * a.array()).rowwise().sum();
      ds = a.array() * (da.colwise() - rowdot).array();
      ds *= scale;
      dq.block(w * T, h * dh, T, dh).noalias() = ds * c.k.block(w * T, h * dh, T, dh);
      dk.block(w * T, h * dh, T, dh).noalias() = ds.transpose() * c.q.block(w * T, h * dh, T, dh);
    }
  }
}

}  // namespace

struct ForwardCache {
  int n = 0;
  Mode mode = Mode::eval;
  Mat tokens;
  NormCache embed_norm;
  Mat pe_tiled;
  Mat embed_mask;
  std::vector<LayerCache> layers;
  Mat final_states;
  Mat attn;  // N x T
  Mat pooled;
  Mat shared_pre;
  Mat shared_act;
  Mat evid_raw;
  Mat evt_raw;
};

ForwardTrace::ForwardTrace() = default;
ForwardTrace::~ForwardTrace() = default;
ForwardTrace::ForwardTrace(ForwardTrace&&) noexcept = default;
ForwardTrace& ForwardTrace::operator=(ForwardTrace&&) noexcept = default;

ForwardOutput forward(const ModelParams& params, const ModelConfig& config,
                      const Eigen::Ref<const Mat>& tokens, Mode mode, Rng* rng, ForwardTrace* trace) {
  config.validate();
  const Eigen::Index T = config.steps;
  if (tokens.cols() != config.features)
    throw ShapeError("input has " + std::to_string(tokens.cols()) + " features, model expects " +
                     std::to_string(config.features));
  if (tokens.rows() % T != 0) throw ShapeError("token rows are not a multiple of the window length");
  if (params.layers.size() != static_cast<std::size_t>(config.layers) || params.embed.weight.rows() != config.d)
    throw ShapeError("parameters do not match model config");
  const int n = static_cast<int>(tokens.rows() / T);
  const bool dropping = mode == Mode::train && config.dropout > 0.0;
  if (dropping && rng == nullptr) throw ConfigError("train-mode forward needs an rng");

  ForwardCache local;
  ForwardCache& c = trace ? *(trace->cache_ = std::make_unique<ForwardCache>()) : local;
  const bool keep = trace != nullptr;
  c.n = n;
  c.mode = mode;

  ForwardOutput out;
  if (n == 0) {
    const Eigen::Index z = 0;
    out.logit = out.prob = out.precursor_logit = Vec(z);
    out.nig = {Vec(z), Vec(z), Vec(z), Vec(z)};
    out.gpd = {Vec(z), Vec(z)};
    out.attn_weights = Mat(z, T);
    out.pooled = Mat(z, config.d);
    return out;
  }

  if (keep) c.tokens = tokens;
  Mat h = layer_norm(apply_linear(tokens, params.embed), params.embed_norm, keep ? &c.embed_norm : nullptr);
  const Mat pe = sinusoidal_pe(config.steps, config.d);
  Mat pe_tiled = pe.replicate(n, 1);
  h += params.pe_scale(0) * pe_tiled;
  if (dropping) {
    Mat mask = dropout_mask(h.rows(), h.cols(), config.dropout, *rng);
    h.array() *= mask.array();
    if (keep) c.embed_mask = std::move(mask);
  }
  if (keep) c.pe_tiled = std::move(pe_tiled);
  check_finite(h, "embedding");

  if (keep) c.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const EncoderLayer& p = params.layers[l];
    LayerCache scratch;
    LayerCache& lc = keep ? c.layers[l] : scratch;
    lc.q = apply_linear(h, p.query);
    lc.k = apply_linear(h, p.key);
    lc.v = apply_linear(h, p.value);
    lc.context = attention_forward(lc.q, lc.k, lc.v, n, config.steps, config.heads, keep ? &lc.probs : nullptr);
    Mat attn = apply_linear(lc.context, p.out);
    if (dropping) {
      lc.attn_mask = dropout_mask(attn.rows(), attn.cols(), config.dropout, *rng);
      attn.array() *= lc.attn_mask.array();
    }
    Mat mid = layer_norm(h + attn, p.attn_norm, keep ? &lc.attn_norm : nullptr);
    lc.ffn_pre = apply_linear(mid, p.ffn_in);
    lc.ffn_act = lc.ffn_pre.unaryExpr([](double x) { return gelu(x); });
    Mat f = apply_linear(lc.ffn_act, p.ffn_out);
    if (dropping) {
      lc.ffn_mask = dropout_mask(f.rows(), f.cols(), config.dropout, *rng);
      f.array() *= lc.ffn_mask.array();
    }
    Mat next = layer_norm(mid + f, p.ffn_norm, keep ? &lc.ffn_norm : nullptr);
    check_finite(next, "encoder layer " + std::to_string(l));
    if (keep) {
      lc.input = std::move(h);
      lc.mid = std::move(mid);
    }
    h = std::move(next);
  }

  // Single-query bottleneck: softmax over time of w . h_t.
  Mat alpha(n, T);
  if (config.pooling == Pooling::attention) {
    const Vec scores = h * params.pool_scorer;
    alpha = Eigen::Map<const Mat>(scores.data(), n, T);
    softmax_rows(alpha);
  } else {
    alpha.setConstant(1.0 / static_cast<double>(T));
  }
  Mat z(n, config.d);
  for (Eigen::Index w = 0; w < n; ++w) z.row(w).noalias() = alpha.row(w) * h.middleRows(w * T, T);
  check_finite(z, "bottleneck");

  Mat shared_pre = apply_linear(z, params.shared);
  Mat m = shared_pre.unaryExpr([](double x) { return gelu(x); });
  const Mat logit = apply_linear(m, params.classifier);
  Mat evid = apply_linear(m, params.evidential);
  Mat evt = apply_linear(m, params.evt);
  const Mat prec = apply_linear(m, params.precursor);
  check_finite(logit, "classification head");
  check_finite(evid, "evidential head");
  check_finite(evt, "evt head");
  check_finite(prec, "precursor head");

  constexpr double floor = HeadTransforms::kFloor;
  out.logit = logit.col(0);
  out.prob = out.logit.unaryExpr([](double x) { return sigmoid(x); });
  out.nig.mu = evid.col(0);
  out.nig.nu = evid.col(1).unaryExpr([](double x) { return softplus(x) + floor; });
  out.nig.alpha = evid.col(2).unaryExpr([](double x) { return softplus(x) + 1.0 + floor; });
  out.nig.beta = evid.col(3).unaryExpr([](double x) { return softplus(x) + floor; });
  out.gpd.xi = evt.col(0).unaryExpr(
      [](double x) { return std::clamp(x, HeadTransforms::kXiMin, HeadTransforms::kXiMax); });
  out.gpd.sigma = evt.col(1).unaryExpr([](double x) { return softplus(x) + floor; });
  out.precursor_logit = prec.col(0);
  out.attn_weights = alpha;
  out.pooled = z;

  if (keep) {
    c.final_states = std::move(h);
    c.attn = std::move(alpha);
    c.pooled = std::move(z);
    c.shared_pre = std::move(shared_pre);
    c.shared_act = std::move(m);
    c.evid_raw = std::move(evid);
    c.evt_raw = std::move(evt);
  }
  return out;
}

ForwardOutput forward(const ModelParams& params, const ModelConfig& config, const WindowBatch& batch,
                      Mode mode, Rng* rng, ForwardTrace* trace) {
  if (batch.steps != static_cast<std::size_t>(config.steps) && !batch.empty())
    throw ShapeError("batch window length " + std::to_string(batch.steps) + " differs from config T=" +
                     std::to_string(config.steps));
  if (batch.empty()) {
    Mat none(0, config.features);
    return forward(params, config, none, mode, rng, trace);
  }
  return forward(params, config, batch.tokens(), mode, rng, trace);
}

void backward(const ModelParams& params, const ModelConfig& config, const ForwardTrace& trace,
              const OutputGrads& g, ModelParams& grads, Mat* input_grad) {
  if (!trace.cache_) throw ConfigError("backward called without a recorded forward pass");
  const ForwardCache& c = *trace.cache_;
  const int n = c.n;
  const Eigen::Index T = config.steps;
  if (n == 0) return;
  auto grad_or_zero = [n](const Vec& v) -> Vec {
    if (v.size() == 0) return Vec::Zero(n);
    if (v.size() != n) throw ShapeError("output gradient has wrong length");
    return v;
  };

  // Head outputs through their constraint transforms.
  Mat d_logit(n, 1), d_prec(n, 1), d_evid(n, 4), d_evt(n, 2);
  d_logit.col(0) = grad_or_zero(g.logit);
  d_prec.col(0) = grad_or_zero(g.precursor_logit);
  const Vec dmu = grad_or_zero(g.mu), dnu = grad_or_zero(g.nu), dal = grad_or_zero(g.alpha),
            dbe = grad_or_zero(g.beta), dxi = grad_or_zero(g.xi), dsi = grad_or_zero(g.sigma);
  for (Eigen::Index i = 0; i < n; ++i) {
    d_evid(i, 0) = dmu(i);
    d_evid(i, 1) = dnu(i) * sigmoid(c.evid_raw(i, 1));
    d_evid(i, 2) = dal(i) * sigmoid(c.evid_raw(i, 2));
    d_evid(i, 3) = dbe(i) * sigmoid(c.evid_raw(i, 3));
    const double raw_xi = c.evt_raw(i, 0);
    d_evt(i, 0) = (raw_xi > HeadTransforms::kXiMin && raw_xi < HeadTransforms::kXiMax) ? dxi(i) : 0.0;
    d_evt(i, 1) = dsi(i) * sigmoid(c.evt_raw(i, 1));
  }

  Mat dm = linear_backward(d_logit, c.shared_act, params.classifier, grads.classifier);
  dm += linear_backward(d_evid, c.shared_act, params.evidential, grads.evidential);
  dm += linear_backward(d_evt, c.shared_act, params.evt, grads.evt);
  dm += linear_backward(d_prec, c.shared_act, params.precursor, grads.precursor);
  const Mat d_shared_pre = dm.array() * c.shared_pre.unaryExpr([](double x) { return gelu_grad(x); }).array();
  const Mat dz = linear_backward(d_shared_pre, c.pooled, params.shared, grads.shared);

  // Bottleneck.
  const Mat& h_final = c.final_states;
  Mat dh(h_final.rows(), h_final.cols());
  for (Eigen::Index w = 0; w < n; ++w) {
    const auto hw = h_final.middleRows(w * T, T);
    dh.middleRows(w * T, T).noalias() = c.attn.row(w).transpose() * dz.row(w);
    if (config.pooling == Pooling::attention) {
      const Eigen::RowVectorXd dalpha = (hw * dz.row(w).transpose()).transpose();
      const double dot = dalpha.dot(c.attn.row(w));
      const Eigen::RowVectorXd ds = c.attn.row(w).array() * (dalpha.array() - dot);
      dh.middleRows(w * T, T).noalias() += ds.transpose() * params.pool_scorer.transpose();
      grads.pool_scorer.noalias() += hw.transpose() * ds.transpose();
    }
  }

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const EncoderLayer& p = params.layers[li];
    EncoderLayer& gp = grads.layers[li];
    const LayerCache& lc = c.layers[li];
    Mat dsum = layer_norm_backward(dh, p.ffn_norm, lc.ffn_norm, gp.ffn_norm);
    Mat dmid = dsum;
    Mat df = lc.ffn_mask.size() ? Mat(dsum.array() * lc.ffn_mask.array()) : dsum;
    const Mat dact = linear_backward(df, lc.ffn_act, p.ffn_out, gp.ffn_out);
    const Mat dpre = dact.array() * lc.ffn_pre.unaryExpr([](double x) { return gelu_grad(x); }).array();
    dmid += linear_backward(dpre, lc.mid, p.ffn_in, gp.ffn_in);

    Mat dsum1 = layer_norm_backward(dmid, p.attn_norm, lc.attn_norm, gp.attn_norm);
    Mat dattn = lc.attn_mask.size() ? Mat(dsum1.array() * lc.attn_mask.array()) : dsum1;
    const Mat dctx = linear_backward(dattn, lc.context, p.out, gp.out);
    Mat dq, dk, dv;
    attention_backward(dctx, lc, n, config.steps, config.heads, dq, dk, dv);
    Mat dinput = std::move(dsum1);
    dinput += linear_backward(dq, lc.input, p.query, gp.query);
    dinput += linear_backward(dk, lc.input, p.key, gp.key);
    dinput += linear_backward(dv, lc.input, p.value, gp.value);
    dh = std::move(dinput);
  }

  if (c.embed_mask.size()) dh.array() *= c.embed_mask.array();
  grads.pe_scale(0) += (dh.array() * c.pe_tiled.array()).sum();
  const Mat dpre = layer_norm_backward(dh, params.embed_norm, c.embed_norm, grads.embed_norm);
  const Mat dx = linear_backward(dpre, c.tokens, params.embed, grads.embed);
  if (input_grad) *input_grad = dx;
}

Mat saliency(const ModelParams& params, const ModelConfig& config, const Eigen::Ref<const Mat>& window) {
  if (window.rows() != config.steps || window.cols() != config.features)
    throw ShapeError("saliency expects a single T x F window");
  ForwardTrace trace;
  forward(params, config, window, Mode::eval, nullptr, &trace);
  OutputGrads g;
  g.logit = Vec::Ones(1);
  ModelParams scratch = ModelParams::zeros(config);
  Mat input_grad;
  backward(params, config, trace, g, scratch, &input_grad);
  if (!input_grad.allFinite()) throw NumericError("non-finite saliency gradient");
  return input_grad;
}

}  // namespace rarecast
