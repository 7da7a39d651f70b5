#include "rarecast/report_io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>

namespace rarecast {

namespace {

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_field(const Json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::string pooling_name(Pooling p) { return p == Pooling::mean ? "mean" : "attention"; }

Json cm_json(const ConfusionMatrix& cm) { return {{"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}}; }

Json summary_json(const std::vector<MetricSummary>& s) {
  Json out = Json::object();
  for (const auto& m : s) {
    Json e = {{"mean", m.mean}, {"n", m.n}};
    e["sd"] = m.sd_defined ? Json(m.sd) : Json(nullptr);
    out[m.name] = e;
  }
  return out;
}

std::string fp_hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

SplitFractions fractions_from_json(const Json& j) {
  check_keys(j, {"train", "val", "test"}, "data.fractions");
  SplitFractions f;
  read_field(j, "train", f.train, "data.fractions");
  read_field(j, "val", f.val, "data.fractions");
  read_field(j, "test", f.test, "data.fractions");
  return f;
}

SkabOptions skab_from_json(const Json& j) {
  check_keys(j, {"window_len", "train_stride", "eval_stride"}, "data.skab");
  SkabOptions o;
  read_field(j, "window_len", o.window_len, "data.skab");
  read_field(j, "train_stride", o.train_stride, "data.skab");
  read_field(j, "eval_stride", o.eval_stride, "data.skab");
  return o;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

}  // namespace

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

ModelConfig model_config_from_json(const Json& j, const ModelConfig& base) {
  const std::string w = "model";
  check_keys(j, {"d", "layers", "heads", "ffn", "dropout", "steps", "features", "pooling"}, w);
  ModelConfig c = base;
  read_field(j, "d", c.d, w);
  read_field(j, "layers", c.layers, w);
  read_field(j, "heads", c.heads, w);
  read_field(j, "ffn", c.ffn, w);
  read_field(j, "dropout", c.dropout, w);
  read_field(j, "steps", c.steps, w);
  read_field(j, "features", c.features, w);
  std::string pooling = pooling_name(c.pooling);
  read_field(j, "pooling", pooling, w);
  if (pooling == "attention") c.pooling = Pooling::attention;
  else if (pooling == "mean") c.pooling = Pooling::mean;
  else throw ConfigError("model.pooling: expected 'attention' or 'mean', got '" + pooling + "'");
  c.validate();
  return c;
}

Json to_json(const ModelConfig& c) {
  return {{"d", c.d},         {"layers", c.layers},     {"heads", c.heads},
          {"ffn", c.ffn},     {"dropout", c.dropout},   {"steps", c.steps},
          {"features", c.features}, {"pooling", pooling_name(c.pooling)}};
}

TrainConfig train_config_from_json(const Json& j) {
  const std::string w = "train";
  check_keys(j,
             {"max_epochs", "batch_size", "peak_lr", "beta1", "beta2", "adam_eps", "weight_decay", "clip_norm",
              "cosine_total_steps", "early_stop_patience", "seed", "eval_every", "precision"},
             w);
  TrainConfig c;
  read_field(j, "max_epochs", c.max_epochs, w);
  read_field(j, "batch_size", c.batch_size, w);
  read_field(j, "peak_lr", c.peak_lr, w);
  read_field(j, "beta1", c.beta1, w);
  read_field(j, "beta2", c.beta2, w);
  read_field(j, "adam_eps", c.adam_eps, w);
  read_field(j, "weight_decay", c.weight_decay, w);
  read_field(j, "clip_norm", c.clip_norm, w);
  read_field(j, "cosine_total_steps", c.cosine_total_steps, w);
  read_field(j, "early_stop_patience", c.early_stop_patience, w);
  read_field(j, "seed", c.seed, w);
  read_field(j, "eval_every", c.eval_every, w);
  read_field(j, "precision", c.precision, w);
  c.validate();
  return c;
}

Json to_json(const TrainConfig& c) {
  return {{"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size},
          {"peak_lr", c.peak_lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"weight_decay", c.weight_decay},
          {"clip_norm", c.clip_norm},
          {"cosine_total_steps", c.cosine_total_steps},
          {"early_stop_patience", c.early_stop_patience},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"precision", c.precision}};
}

LossWeights loss_weights_from_json(const Json& j) {
  const std::string w = "loss";
  check_keys(j,
             {"focal", "evidential", "evt", "precursor", "evt_quantile", "gamma_start", "gamma_end",
              "anneal_epochs", "nig_reg_weight", "nig_target_margin", "evt_stability"},
             w);
  LossWeights l;
  read_field(j, "focal", l.focal, w);
  read_field(j, "evidential", l.evidential, w);
  read_field(j, "evt", l.evt, w);
  read_field(j, "precursor", l.precursor, w);
  read_field(j, "evt_quantile", l.evt_quantile, w);
  read_field(j, "gamma_start", l.focal_schedule.gamma_start, w);
  read_field(j, "gamma_end", l.focal_schedule.gamma_end, w);
  read_field(j, "anneal_epochs", l.focal_schedule.anneal_epochs, w);
  read_field(j, "nig_reg_weight", l.nig_reg_weight, w);
  read_field(j, "nig_target_margin", l.nig_target_margin, w);
  read_field(j, "evt_stability", l.evt_stability, w);
  if (l.evt_quantile <= 0.0 || l.evt_quantile >= 1.0) throw ConfigError("loss.evt_quantile must lie in (0, 1)");
  for (double v : {l.focal, l.evidential, l.evt, l.precursor})
    if (v < 0.0) throw ConfigError("loss weights must be non-negative");
  return l;
}

Json to_json(const LossWeights& l) {
  return {{"focal", l.focal},
          {"evidential", l.evidential},
          {"evt", l.evt},
          {"precursor", l.precursor},
          {"evt_quantile", l.evt_quantile},
          {"gamma_start", l.focal_schedule.gamma_start},
          {"gamma_end", l.focal_schedule.gamma_end},
          {"anneal_epochs", l.focal_schedule.anneal_epochs},
          {"nig_reg_weight", l.nig_reg_weight},
          {"nig_target_margin", l.nig_target_margin},
          {"evt_stability", l.evt_stability}};
}

SyntheticTaskSpec synthetic_spec_from_json(const Json& j) {
  const std::string w = "synthetic";
  check_keys(j,
             {"n_windows", "steps", "features", "positive_rate", "precursor_amplitude", "precursor_length",
              "noise_persistence", "n_groups", "signal_features", "seed"},
             w);
  SyntheticTaskSpec s;
  read_field(j, "n_windows", s.n_windows, w);
  read_field(j, "steps", s.steps, w);
  read_field(j, "features", s.features, w);
  read_field(j, "positive_rate", s.positive_rate, w);
  read_field(j, "precursor_amplitude", s.precursor_amplitude, w);
  read_field(j, "precursor_length", s.precursor_length, w);
  read_field(j, "noise_persistence", s.noise_persistence, w);
  read_field(j, "n_groups", s.n_groups, w);
  read_field(j, "signal_features", s.signal_features, w);
  read_field(j, "seed", s.seed, w);
  return s;
}

Json to_json(const SyntheticTaskSpec& s) {
  return {{"n_windows", s.n_windows},
          {"steps", s.steps},
          {"features", s.features},
          {"positive_rate", s.positive_rate},
          {"precursor_amplitude", s.precursor_amplitude},
          {"precursor_length", s.precursor_length},
          {"noise_persistence", s.noise_persistence},
          {"n_groups", s.n_groups},
          {"signal_features", s.signal_features},
          {"seed", s.seed}};
}

ExperimentConfig experiment_config_from_json(const Json& j, const std::filesystem::path& base_dir) {
  check_keys(j, {"model", "train", "loss", "data", "bootstrap_draws", "fixed_tau"}, "config");
  ExperimentConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j["model"], c.model);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  if (j.contains("loss")) c.loss = loss_weights_from_json(j["loss"]);
  read_field(j, "bootstrap_draws", c.bootstrap_draws, "config");
  if (j.contains("fixed_tau") && !j["fixed_tau"].is_null()) {
    double t = 0.5;
    read_field(j, "fixed_tau", t, "config");
    c.fixed_tau = t;
  }
  if (j.contains("data")) {
    const Json& d = j["data"];
    check_keys(d, {"source", "synthetic", "batch_path", "skab_paths", "skab", "fractions", "split_seed", "standardize"},
               "data");
    std::string source = "synthetic";
    read_field(d, "source", source, "data");
    if (source == "synthetic") c.data.kind = DataSource::Kind::synthetic;
    else if (source == "batch") c.data.kind = DataSource::Kind::batch_file;
    else if (source == "skab") c.data.kind = DataSource::Kind::skab;
    else throw ConfigError("data.source: expected 'synthetic', 'batch' or 'skab', got '" + source + "'");
    if (d.contains("synthetic")) c.data.synthetic = synthetic_spec_from_json(d["synthetic"]);
    if (d.contains("batch_path")) {
      std::string p;
      read_field(d, "batch_path", p, "data");
      c.data.batch_path = resolve(base_dir, p);
    }
    if (d.contains("skab_paths")) {
      std::vector<std::string> ps;
      read_field(d, "skab_paths", ps, "data");
      for (const auto& p : ps) c.data.skab_paths.push_back(resolve(base_dir, p));
    }
    if (d.contains("skab")) c.data.skab = skab_from_json(d["skab"]);
    if (d.contains("fractions")) c.data.fractions = fractions_from_json(d["fractions"]);
    read_field(d, "split_seed", c.data.split_seed, "data");
    read_field(d, "standardize", c.data.standardize, "data");
    if (c.data.kind == DataSource::Kind::batch_file && c.data.batch_path.empty())
      throw ConfigError("data.batch_path is required for source 'batch'");
    if (c.data.kind == DataSource::Kind::skab && c.data.skab_paths.empty())
      throw ConfigError("data.skab_paths is required for source 'skab'");
  }
  if (c.data.kind == DataSource::Kind::synthetic) {
    c.model.steps = static_cast<int>(c.data.synthetic.steps);
    c.model.features = static_cast<int>(c.data.synthetic.features);
  }
  return c;
}

Json to_json(const ExperimentConfig& c) {
  Json data;
  switch (c.data.kind) {
    case DataSource::Kind::synthetic:
      data["source"] = "synthetic";
      data["synthetic"] = to_json(c.data.synthetic);
      break;
    case DataSource::Kind::batch_file:
      data["source"] = "batch";
      data["batch_path"] = c.data.batch_path.generic_string();
      break;
    case DataSource::Kind::skab: {
      data["source"] = "skab";
      Json ps = Json::array();
      for (const auto& p : c.data.skab_paths) ps.push_back(p.generic_string());
      data["skab_paths"] = ps;
      data["skab"] = {{"window_len", c.data.skab.window_len},
                      {"train_stride", c.data.skab.train_stride},
                      {"eval_stride", c.data.skab.eval_stride}};
      break;
    }
  }
  data["fractions"] = {
      {"train", c.data.fractions.train}, {"val", c.data.fractions.val}, {"test", c.data.fractions.test}};
  data["split_seed"] = c.data.split_seed;
  data["standardize"] = c.data.standardize;
  Json j = {{"model", to_json(c.model)},
            {"train", to_json(c.train)},
            {"loss", to_json(c.loss)},
            {"data", data},
            {"bootstrap_draws", c.bootstrap_draws}};
  j["fixed_tau"] = c.fixed_tau ? Json(*c.fixed_tau) : Json(nullptr);
  return j;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_text_file(const std::string& text, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void write_json_file(const Json& j, const std::filesystem::path& path) { write_text_file(j.dump(2) + "\n", path); }

Json to_json(const CalibrationReport& r) {
  Json bins = Json::array();
  for (const auto& b : r.bins)
    bins.push_back({{"lower", b.lower},
                    {"upper", b.upper},
                    {"mean_pred", b.mean_pred},
                    {"frac_positive", b.frac_positive},
                    {"count", b.count}});
  return {{"schema_version", kReportSchemaVersion},
          {"n", r.n},
          {"ece", r.ece},
          {"brier", r.brier},
          {"max_gap", r.max_gap},
          {"empty", r.empty},
          {"bins_reduced", r.bins_reduced},
          {"bins", bins}};
}

Json to_json(const BootstrapResult& r) {
  Json j = {{"ci_low", r.ci_low}, {"ci_high", r.ci_high}, {"median", r.median},
            {"n_draws", r.n_draws}, {"n_skipped", r.n_skipped}, {"seed", r.seed}};
  j["point"] = r.point_defined ? Json(r.point) : Json(nullptr);
  return j;
}

Json to_json(const ThresholdReport& r) {
  Json grid = Json::array();
  for (const auto& row : r.grid)
    grid.push_back({{"tau", row.tau},
                    {"tss", row.tss},
                    {"f1", row.f1},
                    {"precision", row.precision},
                    {"recall", row.recall},
                    {"specificity", row.specificity},
                    {"balanced", row.balanced},
                    {"confusion", cm_json(row.cm)}});
  return {{"schema_version", kReportSchemaVersion},
          {"tau_star", r.tau_star},
          {"fallback_used", r.fallback_used},
          {"grid", grid}};
}

Json to_json(const CostCurve& c) {
  Json pts = Json::array();
  for (const auto& p : c.points) pts.push_back({{"tau", p.tau}, {"fn", p.fn}, {"fp", p.fp}, {"cost", p.cost}});
  return {{"schema_version", kReportSchemaVersion},
          {"c_fn", c.c_fn},
          {"c_fp", c.c_fp},
          {"tau_min_cost", c.tau_min_cost},
          {"points", pts}};
}

Json to_json(const ReplayResult& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    Json e = {{"tau", row.tau}};
    e["first_crossing"] = row.first_crossing ? Json(*row.first_crossing) : Json(nullptr);
    e["lead_time"] = row.lead_time ? Json(*row.lead_time) : Json(nullptr);
    e["longest_alert"] = row.longest_alert;
    e["longest_alert_samples"] = row.longest_alert_samples;
    rows.push_back(e);
  }
  return {{"schema_version", kReportSchemaVersion},
          {"event_time", r.event_time},
          {"cadence", r.cadence},
          {"rows", rows}};
}

Json to_json(const ComplexityReport& r) {
  Json rows = Json::array();
  for (const auto& m : r.rows)
    rows.push_back({{"module", m.module},
                    {"params", m.params},
                    {"macs", m.macs},
                    {"flops", ComplexityReport::flops(m.macs, FlopCounting::flop2x)}});
  return {{"schema_version", kReportSchemaVersion},
          {"rows", rows},
          {"total_params", r.total_params()},
          {"total_macs", r.total_macs()},
          {"total_flops", ComplexityReport::flops(r.total_macs(), FlopCounting::flop2x)}};
}

Json to_json(const ExperimentReport& r) {
  Json runs = Json::array();
  for (const auto& s : r.runs) {
    Json m = {{"tss", s.test.tss},
              {"f1", s.test.f1},
              {"precision", s.test.precision},
              {"recall", s.test.recall},
              {"specificity", s.test.specificity},
              {"brier", s.test.brier},
              {"ece", s.test.ece},
              {"auroc", s.test.auroc},
              {"pr_auc", s.test.pr_auc},
              {"confusion", cm_json(s.test.cm)}};
    runs.push_back({{"seed", s.seed},
                    {"flagged", s.flagged},
                    {"flag_reason", s.flag_reason},
                    {"stop_reason", s.stop_reason},
                    {"epochs", s.epochs},
                    {"best_epoch", s.best_epoch},
                    {"val_tss", s.val_tss},
                    {"tau", s.tau},
                    {"tau_fallback", s.tau_fallback},
                    {"test", m}});
  }
  return {{"schema_version", kReportSchemaVersion},
          {"data_fingerprint", fp_hex(r.data_fingerprint)},
          {"runs", runs},
          {"summary", summary_json(r.summary)},
          {"summary_unflagged", summary_json(r.summary_unflagged)},
          {"tss_ci", to_json(r.tss_ci)}};
}

Json to_json(const AblationReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    Json e = {{"variant", variant_name(row.variant)}, {"trained", row.trained}, {"note", row.note}};
    if (row.trained) {
      e["summary"] = summary_json(row.summary);
      e["delta_tss_mean"] = row.delta_tss_mean;
      e["delta_tss_median"] = row.delta_tss_median;
      e["p_value"] = row.p_value;
    }
    rows.push_back(e);
  }
  return {{"schema_version", kReportSchemaVersion}, {"rows", rows}};
}

Json to_json(const SweepReport& r) {
  static const char* kinds[] = {"lambda_grid", "evt_quantile", "focal_schedule"};
  Json cells = Json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"label", c.label},
                     {"coords", c.coords},
                     {"tss", c.tss},
                     {"ece", c.ece},
                     {"tail_brier", c.tail_brier},
                     {"mid_brier", c.mid_brier}});
  return {{"schema_version", kReportSchemaVersion}, {"kind", kinds[static_cast<int>(r.kind)]}, {"cells", cells}};
}

std::string calibration_csv(const CalibrationReport& r) {
  std::ostringstream os;
  os << "bin,lower,upper,mean_pred,frac_positive,count\n";
  for (std::size_t i = 0; i < r.bins.size(); ++i) {
    const auto& b = r.bins[i];
    os << i << ',' << fmt_double(b.lower) << ',' << fmt_double(b.upper) << ',' << fmt_double(b.mean_pred) << ','
       << fmt_double(b.frac_positive) << ',' << b.count << '\n';
  }
  return os.str();
}

std::string threshold_csv(const ThresholdReport& r) {
  std::ostringstream os;
  os << "tau,tp,fp,tn,fn,tss,f1,precision,recall,specificity,balanced\n";
  for (const auto& row : r.grid)
    os << fmt_double(row.tau) << ',' << row.cm.tp << ',' << row.cm.fp << ',' << row.cm.tn << ',' << row.cm.fn << ','
       << fmt_double(row.tss) << ',' << fmt_double(row.f1) << ',' << fmt_double(row.precision) << ','
       << fmt_double(row.recall) << ',' << fmt_double(row.specificity) << ',' << fmt_double(row.balanced) << '\n';
  return os.str();
}

std::string cost_csv(const CostCurve& c) {
  std::ostringstream os;
  os << "tau,fn,fp,cost\n";
  for (const auto& p : c.points)
    os << fmt_double(p.tau) << ',' << p.fn << ',' << p.fp << ',' << fmt_double(p.cost) << '\n';
  return os.str();
}

std::string epoch_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,step,lr,gamma,focal,evidential,evt,precursor,total,val_tss,val_ece,val_brier,tau,improved\n";
  for (const auto& e : log)
    os << e.epoch << ',' << e.step << ',' << fmt_double(e.lr) << ',' << fmt_double(e.gamma) << ','
       << fmt_double(e.focal) << ',' << fmt_double(e.evidential) << ',' << fmt_double(e.evt) << ','
       << fmt_double(e.precursor) << ',' << fmt_double(e.total) << ',' << fmt_double(e.val_tss) << ','
       << fmt_double(e.val_ece) << ',' << fmt_double(e.val_brier) << ',' << fmt_double(e.tau) << ','
       << (e.improved ? 1 : 0) << '\n';
  return os.str();
}

std::string step_log_csv(const std::vector<StepLog>& log) {
  std::ostringstream os;
  os << "epoch,step,gamma,focal,evidential,evt,precursor,total,u,n_exceedances,support_violations\n";
  for (const auto& s : log)
    os << s.epoch << ',' << s.step << ',' << fmt_double(s.loss.gamma) << ',' << fmt_double(s.loss.focal) << ','
       << fmt_double(s.loss.evidential) << ',' << fmt_double(s.loss.evt) << ',' << fmt_double(s.loss.precursor)
       << ',' << fmt_double(s.loss.total) << ',' << fmt_double(s.loss.u) << ',' << s.loss.n_exceedances << ','
       << s.loss.support_violations << '\n';
  return os.str();
}

std::string complexity_table(const ComplexityReport& r, FlopCounting counting) {
  std::ostringstream os;
  os << "module,params,params_m,flops,flops_m\n";
  auto row = [&](const std::string& name, std::size_t p, std::uint64_t macs) {
    const std::uint64_t f = ComplexityReport::flops(macs, counting);
    char pm[32], fm[32];
    std::snprintf(pm, sizeof pm, "%.3f", static_cast<double>(p) / 1e6);
    std::snprintf(fm, sizeof fm, "%.2f", static_cast<double>(f) / 1e6);
    os << name << ',' << p << ',' << pm << ',' << f << ',' << fm << '\n';
  };
  for (const auto& m : r.rows) row(m.module, m.params, m.macs);
  row("total", r.total_params(), r.total_macs());
  return os.str();
}

std::string ablation_csv(const AblationReport& r) {
  std::ostringstream os;
  os << "variant,trained,tss_mean,tss_sd,delta_tss_mean,delta_tss_median,p_value,note\n";
  for (const auto& row : r.rows) {
    os << variant_name(row.variant) << ',' << (row.trained ? 1 : 0) << ',';
    if (row.trained) {
      const MetricSummary* t = nullptr;
      for (const auto& m : row.summary)
        if (m.name == "tss") t = &m;
      os << (t ? fmt_double(t->mean) : "") << ',' << (t && t->sd_defined ? fmt_double(t->sd) : "") << ','
         << fmt_double(row.delta_tss_mean) << ',' << fmt_double(row.delta_tss_median) << ','
         << fmt_double(row.p_value);
    } else {
      os << ",,,,";
    }
    os << ",\"" << row.note << "\"\n";
  }
  return os.str();
}

std::string sweep_csv(const SweepReport& r) {
  std::ostringstream os;
  os << "label,coords,tss,ece,tail_brier,mid_brier\n";
  for (const auto& c : r.cells) {
    std::string coords;
    for (std::size_t i = 0; i < c.coords.size(); ++i) coords += (i ? ";" : "") + fmt_double(c.coords[i]);
    os << c.label << ',' << coords << ',' << fmt_double(c.tss) << ',' << fmt_double(c.ece) << ','
       << fmt_double(c.tail_brier) << ',' << fmt_double(c.mid_brier) << '\n';
  }
  return os.str();
}

std::string lambda_matrix_csv(const SweepReport& r, bool ece) {
  if (r.kind != SweepSpec::Kind::lambda_grid) throw ConfigError("lambda matrix needs a lambda_grid sweep");
  std::vector<double> rows, cols;
  auto add = [](std::vector<double>& v, double x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
  };
  for (const auto& c : r.cells) {
    add(rows, c.coords.at(0));
    add(cols, c.coords.at(1));
  }
  std::ostringstream os;
  os << "kappa_evid\\kappa_evt";
  for (double c : cols) os << ',' << fmt_double(c);
  os << '\n';
  for (double rv : rows) {
    os << fmt_double(rv);
    for (double cv : cols) {
      os << ',';
      for (const auto& c : r.cells)
        if (c.coords[0] == rv && c.coords[1] == cv) os << fmt_double(ece ? c.ece : c.tss);
    }
    os << '\n';
  }
  return os.str();
}

std::string predictions_csv(const PredictionTable& t) {
  if (t.labels.size() != t.prob.size() || t.groups.size() != t.prob.size())
    throw LengthError("prediction table columns differ in length");
  std::ostringstream os;
  os << "index,prob,label,group\n";
  for (std::size_t i = 0; i < t.prob.size(); ++i)
    os << i << ',' << fmt_double(t.prob[i]) << ',' << t.labels[i] << ',' << t.groups[i] << '\n';
  return os.str();
}

namespace {

std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path, const std::string& header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw ParseError(path.string() + ": expected header '" + header + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

template <typename T>
T parse_num(const std::string& s, const std::filesystem::path& path, std::size_t row) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ParseError(path.string() + ": row " + std::to_string(row) + ": cannot parse '" + s + "'");
  return v;
}

}  // namespace

PredictionTable read_predictions_csv(const std::filesystem::path& path) {
  PredictionTable t;
  const auto rows = read_csv_rows(path, "index,prob,label,group");
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != 4) throw ParseError(path.string() + ": row " + std::to_string(r + 1) + ": expected 4 fields");
    const double p = parse_num<double>(rows[r][1], path, r + 1);
    const int y = parse_num<int>(rows[r][2], path, r + 1);
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError(path.string() + ": probability outside [0,1]");
    if (y != 0 && y != 1) throw DomainError(path.string() + ": label outside {0,1}");
    t.prob.push_back(p);
    t.labels.push_back(y);
    t.groups.push_back(parse_num<std::int64_t>(rows[r][3], path, r + 1));
  }
  return t;
}

std::vector<TracePoint> read_trace_csv(const std::filesystem::path& path) {
  std::vector<TracePoint> out;
  const auto rows = read_csv_rows(path, "time,prob");
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != 2) throw ParseError(path.string() + ": row " + std::to_string(r + 1) + ": expected 2 fields");
    out.push_back({parse_num<double>(rows[r][0], path, r + 1), parse_num<double>(rows[r][1], path, r + 1)});
  }
  return out;
}

}  // namespace rarecast
