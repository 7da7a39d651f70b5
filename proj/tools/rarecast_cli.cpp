#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rarecast/decisions.hpp"
#include "rarecast/experiments.hpp"
#include "rarecast/report_io.hpp"

namespace fs = std::filesystem;
using namespace rarecast;

namespace {

struct GlobalOptions {
  std::string config;
  std::string seeds = "0";
  std::string out = "runs";
  bool deterministic = false;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("invalid seed '" + item + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("no seeds given");
  return seeds;
}

ExperimentConfig load_config(const GlobalOptions& g) {
  if (g.config.empty()) return {};
  const fs::path path(g.config);
  return experiment_config_from_json(read_json_file(path), path.parent_path());
}

std::pair<double, double> parse_ratio(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("ratio must look like C_FN:C_FP, got '" + text + "'");
  try {
    const double fn = std::stod(text.substr(0, colon));
    const double fp = std::stod(text.substr(colon + 1));
    if (!(fn > 0.0) || !(fp > 0.0)) throw ConfigError("ratio terms must be positive");
    return {fn, fp};
  } catch (const std::logic_error&) {
    throw ConfigError("invalid ratio '" + text + "'");
  }
}

const MetricSummary& find_summary(const std::vector<MetricSummary>& s, const std::string& name) {
  for (const auto& m : s)
    if (m.name == name) return m;
  throw ConfigError("missing summary metric " + name);
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rarecast: rare-event forecasting with an attention-bottleneck transformer"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--seeds", g.seeds, "Comma-separated training seeds")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_flag("--deterministic", g.deterministic, "Single-threaded reproducible mode (always on)");

  auto* train = app.add_subcommand("train", "Train and evaluate one run per seed");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a window batch with a checkpoint");
  std::string ckpt, batch_path;
  std::optional<double> tau_opt;
  std::size_t bins = kDefaultCalibrationBins;
  evaluate_cmd->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  evaluate_cmd->add_option("--data", batch_path, "Window batch file")->required();
  evaluate_cmd->add_option("--tau", tau_opt, "Alert threshold (default: swept on this data)");
  evaluate_cmd->add_option("--bins", bins, "Reliability bins")->capture_default_str();

  auto* tsweep = app.add_subcommand("threshold-sweep", "Sweep the 0.10..0.90 threshold grid");
  std::string pred_path;
  tsweep->add_option("--predictions", pred_path, "Predictions CSV (index,prob,label,group)")->required();

  auto* csweep = app.add_subcommand("cost-sweep", "Expected-cost curve over the threshold grid");
  std::string ratio = "20:1";
  csweep->add_option("--predictions", pred_path, "Predictions CSV")->required();
  csweep->add_option("--ratio", ratio, "Cost ratio C_FN:C_FP")->capture_default_str();

  auto* ablate = app.add_subcommand("ablate", "Run ablation variants against the full model");
  std::vector<std::string> variants;
  ablate->add_option("--variants", variants, "Variants (default: all)")->delimiter(',');

  auto* sweep = app.add_subcommand("sweep", "Sensitivity sweeps");
  std::string kind = "lambda_grid";
  sweep->add_option("--kind", kind, "lambda_grid | evt_quantile | focal_schedule")
      ->check(CLI::IsMember({"lambda_grid", "evt_quantile", "focal_schedule"}))
      ->capture_default_str();

  auto* sal = app.add_subcommand("saliency", "Input-gradient saliency of one window");
  std::size_t index = 0;
  sal->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  sal->add_option("--data", batch_path, "Window batch file")->required();
  sal->add_option("--index", index, "Window index")->capture_default_str();

  auto* replay = app.add_subcommand("replay", "Lead time of threshold crossings on a probability trace");
  std::string trace_path;
  double event_time = 0.0, cadence = 1.0;
  std::vector<double> thresholds = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  replay->add_option("--trace", trace_path, "Trace CSV (time,prob)")->required();
  replay->add_option("--event-time", event_time, "Time of the event")->required();
  replay->add_option("--cadence", cadence, "Sampling interval")->capture_default_str();
  replay->add_option("--thresholds", thresholds, "Thresholds")->delimiter(',');

  auto* complexity = app.add_subcommand("complexity", "Per-module parameter and FLOP budget");
  std::string counting = "flop2x";
  bool reference = false;
  complexity->add_option("--counting", counting, "mac | flop2x")
      ->check(CLI::IsMember({"mac", "flop2x"}))
      ->capture_default_str();
  complexity->add_flag("--reference", reference, "Use the reference backbone instead of the config's");

  auto* synth = app.add_subcommand("synth", "Generate a planted-precursor window batch");
  std::string spec_path;
  synth->add_option("--spec", spec_path, "Synthetic task spec (JSON); defaults when omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    const fs::path out(g.out);
    if (*train) {
      const ExperimentConfig cfg = load_config(g);
      const auto seeds = parse_seeds(g.seeds);
      const ExperimentReport rep = run_experiment(cfg, seeds, out);
      const auto& tss = find_summary(rep.summary, "tss");
      std::size_t flagged = 0;
      for (const auto& r : rep.runs) flagged += r.flagged ? 1 : 0;
      std::cout << "train: seeds=" << seeds.size() << " test_tss=" << fixed(tss.mean)
                << (tss.sd_defined ? "+-" + fixed(tss.sd) : "") << " ci=[" << fixed(rep.tss_ci.ci_low) << ","
                << fixed(rep.tss_ci.ci_high) << "] flagged=" << flagged << " report=" << (out / "report.json").string()
                << "\n";
    } else if (*evaluate_cmd) {
      const auto [params, mc] = load_params(ckpt);
      const WindowBatch batch = load_batch(batch_path);
      const Evaluation ev = evaluate(params, mc, batch);
      const std::vector<double> prob(ev.prob.data(), ev.prob.data() + ev.prob.size());
      const double tau = tau_opt ? *tau_opt : threshold_sweep(prob, batch.labels).tau_star;
      const TestMetrics m = compute_test_metrics(prob, batch.labels, tau);
      fs::create_directories(out);
      write_text_file(predictions_csv({prob, batch.labels, batch.group_ids}), out / "predictions.csv");
      const CalibrationReport cal = ece_equal_frequency(prob, batch.labels, std::min(bins, prob.size()));
      write_text_file(calibration_csv(cal), out / "reliability.csv");
      Json j = {{"schema_version", kReportSchemaVersion},
                {"tau", tau},
                {"tss", m.tss},
                {"f1", m.f1},
                {"precision", m.precision},
                {"recall", m.recall},
                {"specificity", m.specificity},
                {"brier", m.brier},
                {"ece", m.ece},
                {"auroc", m.auroc},
                {"pr_auc", m.pr_auc},
                {"confusion", {{"tp", m.cm.tp}, {"fp", m.cm.fp}, {"tn", m.cm.tn}, {"fn", m.cm.fn}}}};
      j["calibration"] = to_json(cal);
      j["calibration_negatives"] = to_json(subset_calibration(prob, batch.labels, CalibrationSubset::negatives()));
      j["calibration_positives"] = to_json(subset_calibration(prob, batch.labels, CalibrationSubset::positives()));
      j["calibration_above_0.8"] = to_json(subset_calibration(prob, batch.labels, CalibrationSubset::above(0.8)));
      write_json_file(j, out / "metrics.json");
      std::cout << "evaluate: n=" << prob.size() << " tau=" << fixed(tau, 2) << " tss=" << fixed(m.tss)
                << " ece=" << fixed(m.ece) << " brier=" << fixed(m.brier) << "\n";
    } else if (*tsweep) {
      const PredictionTable t = read_predictions_csv(pred_path);
      const ThresholdReport r = threshold_sweep(t.prob, t.labels);
      write_text_file(threshold_csv(r), out / "threshold_sweep.csv");
      write_json_file(to_json(r), out / "threshold_sweep.json");
      std::cout << "threshold-sweep: tau_star=" << fixed(r.tau_star, 2) << (r.fallback_used ? " (fallback)" : "")
                << " grid=" << r.grid.size() << "\n";
    } else if (*csweep) {
      const auto [c_fn, c_fp] = parse_ratio(ratio);
      const PredictionTable t = read_predictions_csv(pred_path);
      const CostCurve c = cost_sweep(t.prob, t.labels, c_fn, c_fp);
      write_text_file(cost_csv(c), out / "cost_sweep.csv");
      write_json_file(to_json(c), out / "cost_sweep.json");
      std::cout << "cost-sweep: ratio=" << ratio << " tau_min_cost=" << fixed(c.tau_min_cost, 2) << "\n";
    } else if (*ablate) {
      const ExperimentConfig cfg = load_config(g);
      std::vector<AblationVariant> vs;
      for (const auto& v : variants) vs.push_back(parse_variant(v));
      if (vs.empty()) vs = all_variants();
      const AblationReport rep = run_ablation(cfg, vs, parse_seeds(g.seeds), out);
      std::cout << "ablate: variants=" << rep.rows.size();
      for (const auto& row : rep.rows)
        if (row.trained && row.variant != AblationVariant::full)
          std::cout << " " << variant_name(row.variant) << "=" << fixed(row.delta_tss_mean);
      std::cout << " report=" << (out / "ablation.csv").string() << "\n";
    } else if (*sweep) {
      SweepSpec spec;
      spec.kind = kind == "lambda_grid"    ? SweepSpec::Kind::lambda_grid
                  : kind == "evt_quantile" ? SweepSpec::Kind::evt_quantile
                                           : SweepSpec::Kind::focal_schedule;
      const SweepReport rep = run_sweep(spec, load_config(g), parse_seeds(g.seeds), out);
      std::cout << "sweep: kind=" << kind << " cells=" << rep.cells.size()
                << " report=" << (out / "sweep.csv").string() << "\n";
    } else if (*sal) {
      const auto [params, mc] = load_params(ckpt);
      const WindowBatch batch = load_batch(batch_path);
      if (index >= batch.size()) throw ConfigError("window index out of range");
      const Mat s = saliency(params, mc, batch.window(index));
      std::ostringstream os;
      os << "step";
      for (Eigen::Index f = 0; f < s.cols(); ++f) os << ",f" << f;
      os << '\n';
      for (Eigen::Index t = 0; t < s.rows(); ++t) {
        os << t;
        for (Eigen::Index f = 0; f < s.cols(); ++f) os << ',' << fmt_double(s(t, f));
        os << '\n';
      }
      write_text_file(os.str(), out / "saliency.csv");
      Eigen::Index t_max = 0, f_max = 0;
      s.cwiseAbs().maxCoeff(&t_max, &f_max);
      std::cout << "saliency: window=" << index << " label=" << batch.labels[index] << " peak=(step " << t_max
                << ", feature " << f_max << ")\n";
    } else if (*replay) {
      const auto trace = read_trace_csv(trace_path);
      const ReplayResult r = replay_lead_time(trace, thresholds, event_time, cadence);
      write_json_file(to_json(r), out / "replay.json");
      std::ostringstream os;
      os << "tau,first_crossing,lead_time,longest_alert\n";
      for (const auto& row : r.rows)
        os << fmt_double(row.tau) << ',' << (row.first_crossing ? fmt_double(*row.first_crossing) : "") << ','
           << (row.lead_time ? fmt_double(*row.lead_time) : "") << ',' << fmt_double(row.longest_alert) << '\n';
      write_text_file(os.str(), out / "replay.csv");
      std::size_t crossed = 0;
      for (const auto& row : r.rows) crossed += row.first_crossing ? 1 : 0;
      std::cout << "replay: thresholds=" << r.rows.size() << " crossed=" << crossed << "\n";
    } else if (*complexity) {
      const ModelConfig mc = reference || g.config.empty() ? ModelConfig::reference() : load_config(g).model;
      const ComplexityReport r = count_params(mc);
      const FlopCounting fc = counting == "mac" ? FlopCounting::mac : FlopCounting::flop2x;
      const std::string table = complexity_table(r, fc);
      write_text_file(table, out / "complexity.csv");
      write_json_file(to_json(r), out / "complexity.json");
      std::cout << table;
      std::cout << "complexity: params=" << r.total_params() << " flops=" << ComplexityReport::flops(r.total_macs(), fc)
                << " (" << counting << ")\n";
    } else if (*synth) {
      const SyntheticTaskSpec spec = spec_path.empty() ? SyntheticTaskSpec{} : synthetic_spec_from_json(read_json_file(spec_path));
      const WindowBatch batch = synth_generate(spec);
      fs::create_directories(out);
      save_batch(batch, out / "windows.bin");
      std::cout << "synth: windows=" << batch.size() << " positives=" << batch.positives()
                << " path=" << (out / "windows.bin").string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
