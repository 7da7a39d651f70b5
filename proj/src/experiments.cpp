#include "rarecast/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "rarecast/decisions.hpp"
#include "rarecast/report_io.hpp"

namespace rarecast {

ModelConfig ExperimentConfig::desk_model() {
  ModelConfig c;
  c.d = 16;
  c.layers = 1;
  c.heads = 2;
  c.ffn = 32;
  c.dropout = 0.1;
  c.steps = 12;
  c.features = 4;
  return c;
}

PreparedData prepare_data(const DataSource& source) {
  PreparedData out;
  if (source.kind == DataSource::Kind::skab) {
    SkabOptions opts = source.skab;
    opts.fractions = source.fractions;
    SkabDataset ds = skab_ingest(source.skab_paths, opts);
    out.splits = std::move(ds.splits);
    out.standardizer_clamped = ds.standardizer.clamped_features;
    out.fingerprint = batch_fingerprint(out.splits.train) ^ (batch_fingerprint(out.splits.test) * 31);
    return out;
  }
  const WindowBatch batch =
      source.kind == DataSource::Kind::synthetic ? synth_generate(source.synthetic) : load_batch(source.batch_path);
  out.fingerprint = batch_fingerprint(batch);
  DataSplits raw = group_stratified_split(batch, source.fractions, source.split_seed);
  if (source.standardize) {
    const Standardizer s = fit_standardizer(raw.train);
    out.standardizer_clamped = s.clamped_features;
    out.splits = {s.apply(raw.train), raw.val.empty() ? raw.val : s.apply(raw.val),
                  raw.test.empty() ? raw.test : s.apply(raw.test)};
  } else {
    out.splits = std::move(raw);
  }
  return out;
}

TestMetrics compute_test_metrics(std::span<const double> prob, std::span<const int> y, double tau) {
  TestMetrics m;
  m.cm = confusion(prob, y, tau);
  m.tss = tss(m.cm);
  m.f1 = f1(m.cm);
  m.precision = precision(m.cm);
  m.recall = recall(m.cm);
  m.specificity = specificity(m.cm);
  m.brier = brier(prob, y);
  m.ece = ece_equal_frequency(prob, y, std::min(kDefaultCalibrationBins, prob.size())).ece;
  m.auroc = auroc(prob, y);
  m.pr_auc = pr_auc(prob, y);
  return m;
}

SeedRun run_seed(const ExperimentConfig& config, const DataSplits& splits, std::uint64_t seed,
                 const std::filesystem::path& run_dir) {
  if (splits.test.empty()) throw ConfigError("test split is empty");
  TrainConfig tc = config.train;
  tc.seed = seed;
  ModelConfig mc = config.model;
  mc.steps = static_cast<int>(splits.train.steps);
  mc.features = static_cast<int>(splits.train.features);

  Trainer trainer(mc, tc, config.loss, splits.train, splits.val, ModelParams::init(mc, seed));
  trainer.run();
  const TrainState& st = trainer.state();

  SeedRun run;
  run.seed = seed;
  run.stop_reason = st.stop_reason;
  run.epochs = st.epoch;
  run.best_epoch = st.best_epoch;
  run.val_tss = st.best_val_metric;
  run.epochs_log = trainer.epoch_log();
  if (st.stop_reason.rfind("diverged", 0) == 0) {
    run.flagged = true;
    run.flag_reason = st.stop_reason;
  }
  // Never-improved runs keep their initial parameters as "best".
  const ModelParams& model = st.best_epoch >= 0 ? st.best_params : st.params;

  const Evaluation val = evaluate(model, mc, splits.val);
  if (config.fixed_tau) {
    run.tau = *config.fixed_tau;
  } else {
    const ThresholdReport sweep =
        threshold_sweep({val.prob.data(), static_cast<std::size_t>(val.prob.size())}, splits.val.labels);
    run.tau = sweep.tau_star;
    run.tau_fallback = sweep.fallback_used;
  }
  const Evaluation test = evaluate(model, mc, splits.test);
  run.test_prob.assign(test.prob.data(), test.prob.data() + test.prob.size());
  run.test = compute_test_metrics(run.test_prob, splits.test.labels, run.tau);

  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    save_params(model, mc, run_dir / "checkpoint.bin");
    save_train_state(st, mc, run_dir / "train_state.bin");
    write_text_file(epoch_log_csv(trainer.epoch_log()), run_dir / "epoch_log.csv");
    write_text_file(step_log_csv(trainer.step_log()), run_dir / "loss_log.csv");
    write_text_file(predictions_csv({run.test_prob, splits.test.labels, splits.test.group_ids}),
                    run_dir / "test_predictions.csv");
  }
  return run;
}

namespace {

std::vector<MetricSummary> summarize(const std::vector<SeedRun>& runs, bool drop_flagged) {
  using Getter = double (*)(const SeedRun&);
  const std::vector<std::pair<std::string, Getter>> metrics = {
      {"tss", [](const SeedRun& r) { return r.test.tss; }},
      {"f1", [](const SeedRun& r) { return r.test.f1; }},
      {"precision", [](const SeedRun& r) { return r.test.precision; }},
      {"recall", [](const SeedRun& r) { return r.test.recall; }},
      {"specificity", [](const SeedRun& r) { return r.test.specificity; }},
      {"brier", [](const SeedRun& r) { return r.test.brier; }},
      {"ece", [](const SeedRun& r) { return r.test.ece; }},
      {"auroc", [](const SeedRun& r) { return r.test.auroc; }},
      {"pr_auc", [](const SeedRun& r) { return r.test.pr_auc; }},
      {"val_tss", [](const SeedRun& r) { return r.val_tss; }},
      {"tau", [](const SeedRun& r) { return r.tau; }},
  };
  std::vector<MetricSummary> out;
  for (const auto& [name, get] : metrics) {
    MetricSummary s;
    s.name = name;
    std::vector<double> xs;
    for (const auto& r : runs)
      if (!(drop_flagged && r.flagged)) xs.push_back(get(r));
    s.n = xs.size();
    if (!xs.empty()) {
      double sum = 0.0;
      for (double x : xs) sum += x;
      s.mean = sum / static_cast<double>(xs.size());
    }
    if (xs.size() >= 2) {
      double ss = 0.0;
      for (double x : xs) ss += (x - s.mean) * (x - s.mean);
      s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
      s.sd_defined = true;
    }
    out.push_back(s);
  }
  return out;
}

// Alerts of every seed at its own threshold, stacked; groups keep their ids so
// a resampled group brings its windows from all seeds.
struct StackedAlerts {
  std::vector<double> alert;
  std::vector<int> y;
  std::vector<std::int64_t> groups;
};

StackedAlerts stack_alerts(const std::vector<SeedRun>& runs, const WindowBatch& test) {
  StackedAlerts s;
  for (const auto& r : runs) {
    for (std::size_t i = 0; i < r.test_prob.size(); ++i) {
      s.alert.push_back(r.test_prob[i] >= r.tau ? 1.0 : 0.0);
      s.y.push_back(test.labels[i]);
      s.groups.push_back(test.group_ids[i]);
    }
  }
  return s;
}

std::size_t distinct_groups(std::span<const std::int64_t> g) {
  std::vector<std::int64_t> v(g.begin(), g.end());
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

double summary_mean(const std::vector<MetricSummary>& s, const std::string& name) {
  for (const auto& m : s)
    if (m.name == name) return m.mean;
  return 0.0;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config, const PreparedData& data,
                                const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir) {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  ExperimentReport rep;
  rep.data_fingerprint = data.fingerprint;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_json_file(to_json(config), out_dir / "config.json");
  }
  for (std::uint64_t seed : seeds) {
    const auto dir = out_dir.empty() ? std::filesystem::path{} : out_dir / ("seed_" + std::to_string(seed));
    try {
      rep.runs.push_back(run_seed(config, data.splits, seed, dir));
    } catch (const Error& e) {
      SeedRun failed;
      failed.seed = seed;
      failed.flagged = true;
      failed.flag_reason = std::string("failed: ") + e.what();
      failed.test_prob.assign(data.splits.test.size(), 0.0);
      failed.test = compute_test_metrics(failed.test_prob, data.splits.test.labels, 0.5);
      rep.runs.push_back(std::move(failed));
    }
  }
  rep.summary = summarize(rep.runs, false);
  rep.summary_unflagged = summarize(rep.runs, true);

  const StackedAlerts stacked = stack_alerts(rep.runs, data.splits.test);
  if (distinct_groups(stacked.groups) >= 2 && config.bootstrap_draws > 0)
    rep.tss_ci = bootstrap_ci(tss_at(0.5), stacked.alert, stacked.y, stacked.groups, config.bootstrap_draws,
                              config.data.split_seed);

  if (!out_dir.empty()) {
    Json j = to_json(rep);
    j["config"] = to_json(config);
    write_json_file(j, out_dir / "report.json");
  }
  return rep;
}

ExperimentReport run_experiment(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds,
                                const std::filesystem::path& out_dir) {
  return run_experiment(config, prepare_data(config.data), seeds, out_dir);
}

std::string variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::full: return "full";
    case AblationVariant::no_evidential: return "no_evidential";
    case AblationVariant::no_evt: return "no_evt";
    case AblationVariant::no_evid_evt: return "no_evid_evt";
    case AblationVariant::mean_pooling: return "mean_pooling";
    case AblationVariant::cross_entropy: return "cross_entropy";
    case AblationVariant::no_precursor: return "no_precursor";
    case AblationVariant::fp32: return "fp32";
  }
  return "full";
}

std::vector<AblationVariant> all_variants() {
  return {AblationVariant::full,         AblationVariant::no_evidential, AblationVariant::no_evt,
          AblationVariant::no_evid_evt,  AblationVariant::mean_pooling,  AblationVariant::cross_entropy,
          AblationVariant::no_precursor, AblationVariant::fp32};
}

AblationVariant parse_variant(const std::string& name) {
  for (auto v : all_variants())
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown ablation variant '" + name + "'");
}

ExperimentConfig apply_variant(const ExperimentConfig& base, AblationVariant v) {
  ExperimentConfig c = base;
  switch (v) {
    case AblationVariant::full:
    case AblationVariant::fp32: break;
    case AblationVariant::no_evidential: c.loss.evidential = 0.0; break;
    case AblationVariant::no_evt: c.loss.evt = 0.0; break;
    case AblationVariant::no_evid_evt:
      c.loss.evidential = 0.0;
      c.loss.evt = 0.0;
      break;
    case AblationVariant::mean_pooling: c.model.pooling = Pooling::mean; break;
    case AblationVariant::cross_entropy:
      c.loss.focal = 1.0;
      c.loss.evidential = 0.0;
      c.loss.evt = 0.0;
      c.loss.precursor = 0.0;
      c.loss.focal_schedule = {0.0, 0.0, 0};
      break;
    case AblationVariant::no_precursor: c.loss.precursor = 0.0; break;
  }
  return c;
}

AblationReport run_ablation(const ExperimentConfig& base, std::vector<AblationVariant> variants,
                            const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir) {
  variants.erase(std::remove(variants.begin(), variants.end(), AblationVariant::full), variants.end());
  variants.insert(variants.begin(), AblationVariant::full);
  const PreparedData data = prepare_data(base.data);

  AblationReport rep;
  for (AblationVariant v : variants) {
    AblationRow row;
    row.variant = v;
    if (v == AblationVariant::fp32) {
      row.trained = false;
      row.note = "recognized but inert: only full-precision (fp64) training is implemented at desk scale";
      rep.rows.push_back(std::move(row));
      continue;
    }
    const ExperimentConfig cfg = apply_variant(base, v);
    const auto dir = out_dir.empty() ? std::filesystem::path{} : out_dir / variant_name(v);
    row.report = run_experiment(cfg, data, seeds, dir);
    row.summary = row.report.summary;
    rep.rows.push_back(std::move(row));
  }

  const ExperimentReport* full = &rep.rows.front().report;
  const StackedAlerts full_alerts = stack_alerts(full->runs, data.splits.test);
  for (auto& row : rep.rows) {
    if (!row.trained) continue;
    std::vector<double> deltas;
    for (std::size_t s = 0; s < row.report.runs.size(); ++s)
      deltas.push_back(row.report.runs[s].test.tss - full->runs[s].test.tss);
    row.delta_tss_mean = summary_mean(row.summary, "tss") - summary_mean(full->summary, "tss");
    row.delta_tss_median = percentile(deltas, 0.5);
    const StackedAlerts alerts = stack_alerts(row.report.runs, data.splits.test);
    if (distinct_groups(alerts.groups) >= 2 && base.bootstrap_draws > 0) {
      row.p_value = paired_bootstrap_test(tss_at(0.5), full_alerts.alert, alerts.alert, alerts.y, alerts.groups,
                                          base.bootstrap_draws, base.data.split_seed)
                        .p_value;
    }
  }
  if (!out_dir.empty()) {
    write_json_file(to_json(rep), out_dir / "ablation.json");
    write_text_file(ablation_csv(rep), out_dir / "ablation.csv");
  }
  return rep;
}

TailSplitBrier tail_brier(std::span<const double> prob, std::span<const int> y, double tail_fraction) {
  if (prob.empty()) throw LengthError("tail_brier: empty input");
  TailSplitBrier out;
  out.threshold = nearest_rank_quantile(prob, 1.0 - tail_fraction);
  double st = 0.0, sm = 0.0;
  std::size_t nt = 0, nm = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double e = (prob[i] - y[i]) * (prob[i] - y[i]);
    if (prob[i] >= out.threshold) {
      st += e;
      ++nt;
    } else {
      sm += e;
      ++nm;
    }
  }
  out.tail = nt ? st / static_cast<double>(nt) : 0.0;
  out.mid = nm ? sm / static_cast<double>(nm) : 0.0;
  return out;
}

SweepReport run_sweep(const SweepSpec& spec, const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                      const std::filesystem::path& out_dir) {
  SweepReport rep;
  rep.kind = spec.kind;
  std::vector<std::pair<SweepCell, ExperimentConfig>> cells;
  switch (spec.kind) {
    case SweepSpec::Kind::lambda_grid:
      for (double ke : spec.kappa) {
        for (double kt : spec.kappa) {
          ExperimentConfig c = base;
          c.loss.evidential = base.loss.evidential * ke;
          c.loss.evt = base.loss.evt * kt;
          SweepCell cell;
          cell.coords = {ke, kt};
          cell.label = "kevid_" + fmt_double(ke) + "_kevt_" + fmt_double(kt);
          cells.emplace_back(cell, c);
        }
      }
      break;
    case SweepSpec::Kind::evt_quantile:
      for (double u : spec.quantiles) {
        ExperimentConfig c = base;
        c.loss.evt_quantile = u;
        SweepCell cell;
        cell.coords = {u};
        cell.label = "u_" + fmt_double(u);
        cells.emplace_back(cell, c);
      }
      break;
    case SweepSpec::Kind::focal_schedule:
      for (const auto& s : spec.schedules) {
        ExperimentConfig c = base;
        c.loss.focal_schedule = s;
        SweepCell cell;
        cell.coords = {s.gamma_start, s.gamma_end, static_cast<double>(s.anneal_epochs)};
        cell.label = "gamma_" + fmt_double(s.gamma_start) + "_" + fmt_double(s.gamma_end) + "_" +
                     std::to_string(s.anneal_epochs);
        cells.emplace_back(cell, c);
      }
      break;
  }
  if (cells.empty()) throw ConfigError("sweep grid is empty");
  std::stable_sort(cells.begin(), cells.end(),
                   [](const auto& a, const auto& b) { return a.first.coords < b.first.coords; });

  const PreparedData data = prepare_data(base.data);
  for (auto& [cell, cfg] : cells) {
    const auto dir = out_dir.empty() ? std::filesystem::path{} : out_dir / cell.label;
    cell.report = run_experiment(cfg, data, seeds, dir);
    cell.tss = summary_mean(cell.report.summary, "tss");
    cell.ece = summary_mean(cell.report.summary, "ece");
    double tail = 0.0, mid = 0.0;
    for (const auto& r : cell.report.runs) {
      const TailSplitBrier tb = tail_brier(r.test_prob, data.splits.test.labels);
      tail += tb.tail;
      mid += tb.mid;
    }
    const auto k = static_cast<double>(cell.report.runs.size());
    cell.tail_brier = tail / k;
    cell.mid_brier = mid / k;
    rep.cells.push_back(std::move(cell));
  }
  if (!out_dir.empty()) {
    write_json_file(to_json(rep), out_dir / "sweep.json");
    write_text_file(sweep_csv(rep), out_dir / "sweep.csv");
    if (spec.kind == SweepSpec::Kind::lambda_grid) {
      write_text_file(lambda_matrix_csv(rep, false), out_dir / "tss_matrix.csv");
      write_text_file(lambda_matrix_csv(rep, true), out_dir / "ece_matrix.csv");
    }
  }
  return rep;
}

}  // namespace rarecast
