#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "rarecast/report_io.hpp"

using namespace rarecast;
namespace fs = std::filesystem;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status = Status::pass;
  std::string detail;
};

struct Context {
  fs::path workdir;
  fs::path skab_dir;
  int skab_seeds = 1;
};

std::string num(double v, int digits = 4) {
  std::ostringstream ss;
  ss << std::setprecision(digits) << v;
  return ss.str();
}

std::string fixed(double v, int digits) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::pass : Status::fail, std::move(detail)}; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome parameter_budget(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  const ComplexityReport r = count_params(ModelConfig::reference());
  const double secs = seconds_since(t0);
  const std::vector<std::pair<std::string, double>> table{{"embedding+pe", 1.54}, {"encoder", 794.88},
                                                          {"bottleneck", 0.13},   {"classification", 16.64},
                                                          {"evidential", 0.52},   {"evt", 0.26},
                                                          {"precursor", 0.13}};
  bool ok = r.rows.size() == table.size();
  std::string rows;
  for (std::size_t i = 0; ok && i < table.size(); ++i) {
    const double k = std::round(static_cast<double>(r.rows[i].params) / 10.0) / 100.0;
    ok = ok && r.rows[i].module == table[i].first && std::abs(k - table[i].second) < 1e-9;
    rows += (i ? "/" : "") + fixed(k, 2);
  }
  const long long total = static_cast<long long>(r.total_params());
  ok = ok && std::llabs(total - 814089) <= 1 && secs < 1.0;
  return verdict(ok, "rows " + rows + " k, total " + std::to_string(total) + " (target 814089 +/- 1)");
}

Outcome flop_budget(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  const ComplexityReport r = count_flops(ModelConfig::reference());
  const double secs = seconds_since(t0);
  const double total = static_cast<double>(ComplexityReport::flops(r.total_macs(), FlopCounting::flop2x));
  const double dev = total / 16.63e6 - 1.0;
  const double share = static_cast<double>(r.rows[1].macs) / static_cast<double>(r.total_macs());
  return verdict(std::abs(dev) < 0.05 && share > 0.95 && secs < 1.0,
                 "flop2x " + fixed(total / 1e6, 3) + "M (" + fixed(100.0 * dev, 2) + "% vs 16.63M), encoder share " +
                     fixed(100.0 * share, 2) + "%");
}

Outcome gradient_suite(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto checks = gradcheck::loss_term_checks(gradcheck::small_problem());
  const double secs = seconds_since(t0);
  bool ok = secs < 60.0;
  std::string detail = "max rel. error:";
  for (const auto& c : checks) {
    ok = ok && c.worst < 1e-4;
    detail += " " + c.name + " " + num(c.worst, 2);
  }
  return verdict(ok, detail + " (limit 1e-4)");
}

Outcome loss_identities(const Context&) {
  Rng rng(404);
  double focal_gap = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 1 + uniform_index(rng, 200);
    std::vector<double> p(n);
    std::vector<int> y(n);
    double ref = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = 1e-4 + (1.0 - 2e-4) * uniform01(rng);
      y[i] = uniform01(rng) < 0.3;
      ref += y[i] ? -std::log(p[i]) : -std::log1p(-p[i]);
    }
    focal_gap = std::max(focal_gap, std::abs(focal_loss(p, y, 0.0) - ref / static_cast<double>(n)));
  }

  double gpd_gap = 0.0;
  for (double x : {0.01, 0.5, 1.0, 2.0, 3.0})
    for (double sigma : {1.0, 1.3, 2.5})
      for (double xi : {1e-6, -1e-6}) gpd_gap = std::max(gpd_gap, std::abs(gpd_nll(x, xi, sigma) - gpd_nll(x, 0.0, sigma)));

  const auto prob = gradcheck::small_problem(17, 40);
  const ForwardOutput out = forward(prob.params, prob.config, prob.tokens, Mode::eval);
  double linear_gap = 0.0;
  for (int term = 0; term < 4; ++term) {
    std::vector<double> totals;
    for (double lam : {0.0, 0.1, 0.2, 0.3, 0.4}) {
      LossWeights w{};
      double* fields[4] = {&w.focal, &w.evidential, &w.evt, &w.precursor};
      *fields[term] = lam;
      totals.push_back(composite_loss(out, prob.labels, w, 5).total);
    }
    for (std::size_t k = 2; k < totals.size(); ++k)
      linear_gap = std::max(linear_gap, std::abs((totals[k] - totals[k - 1]) - (totals[1] - totals[0])));
  }
  return verdict(focal_gap < 1e-12 && gpd_gap < 1e-5 && linear_gap < 1e-12,
                 "focal(0) vs BCE " + num(focal_gap, 2) + ", GPD branch gap (x/sigma <= 3) " + num(gpd_gap, 2) +
                     ", lambda second difference " + num(linear_gap, 2));
}

Outcome metric_oracles(const Context&) {
  Rng rng(505);
  double worst = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 15 + uniform_index(rng, 986);
    const auto f = oracle::random_fixture(rng, n);
    const double tau = 0.1 + 0.8 * uniform01(rng);
    const ConfusionMatrix cm = confusion(f.p, f.y, tau);
    const oracle::Counts c = oracle::count(f.p, f.y, tau);
    auto gap = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
    gap(tss(cm), oracle::tss(c));
    gap(recall(cm), oracle::recall(c));
    if (c.tp + c.fp > 0) gap(precision(cm), oracle::precision(c));
    if (c.tp > 0) gap(f1(cm), oracle::f1(c));
    gap(ece_equal_frequency(f.p, f.y, 15).ece, oracle::ece(f.p, f.y, 15));
    gap(brier(f.p, f.y), oracle::brier(f.p, f.y));
    gap(auroc(f.p, f.y), oracle::auroc(f.p, f.y));
  }
  const ConfusionMatrix valve{5694, 134, 6591, 81};
  auto r3 = [](double x) { return std::round(x * 1000.0) / 1000.0; };
  const bool valve_ok = r3(tss(valve)) == 0.966 && r3(precision(valve)) == 0.977 && r3(recall(valve)) == 0.986;
  return verdict(worst < 1e-9 && valve_ok, "200 fixtures max gap " + num(worst, 2) + "; valve TSS " +
                                              fixed(tss(valve), 3) + ", precision " + fixed(precision(valve), 3) +
                                              ", recall " + fixed(recall(valve), 3));
}

Outcome decision_protocol(const Context&) {
  const std::size_t grid = threshold_grid().size();
  const double perfect = balanced_score({25, 0, 75, 0});
  const std::vector<std::pair<double, ConfusionMatrix>> per_tau{{0.46, {80, 45, 71580, 12}},
                                                                {0.24, {92, 115, 71510, 0}}};
  const CostCurve c = cost_sweep(per_tau, 20.0, 1.0);
  const bool ok = grid == 81 && std::abs(perfect - 1.0) < 1e-12 && c.points[0].cost == 285.0 &&
                  c.points[1].cost == 115.0 && c.tau_min_cost == 0.24;
  return verdict(ok, "grid " + std::to_string(grid) + " points, perfect balanced score " + num(perfect, 6) +
                         ", cost 20:1 " + num(c.points[0].cost) + " vs " + num(c.points[1].cost) + " -> tau " +
                         fixed(c.tau_min_cost, 2));
}

Outcome calibration_statistics(const Context&) {
  Rng rng(606);
  std::vector<double> p(100000);
  std::vector<int> y(100000);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = uniform01(rng);
    y[i] = uniform01(rng) < p[i];
  }
  const double e = ece_equal_frequency(p, y).ece;

  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    auto f = oracle::random_fixture(rng, 40 + uniform_index(rng, 200));
    for (auto& v : f.p) v = std::min(1.0, v * 1.4);
    for (const auto subset : {CalibrationSubset::negatives(), CalibrationSubset::above(0.8)}) {
      std::vector<double> sp;
      std::vector<int> sy;
      for (std::size_t i = 0; i < f.p.size(); ++i) {
        const bool keep = subset.kind == CalibrationSubset::Kind::negatives ? f.y[i] == 0 : f.p[i] > 0.8;
        if (keep) {
          sp.push_back(f.p[i]);
          sy.push_back(f.y[i]);
        }
      }
      const CalibrationReport r = subset_calibration(f.p, f.y, subset);
      if (sp.empty()) {
        worst = std::max(worst, r.empty ? 0.0 : 1.0);
        continue;
      }
      worst = std::max(worst, std::abs(r.ece - oracle::ece(sp, sy, std::min<std::size_t>(15, sp.size()))));
    }
  }
  return verdict(e < 0.02 && worst < 1e-12,
                 "calibrated sampler ECE " + num(e, 3) + " (N=100000), subset vs manual max gap " + num(worst, 2));
}

Outcome bootstrap_checks(const Context&) {
  const auto f = oracle::three_groups();
  const auto a = bootstrap_ci(tss_at(0.5), f.p, f.y, f.g, 10000, 12);
  const auto b = bootstrap_ci(tss_at(0.5), f.p, f.y, f.g, 10000, 12);
  const bool deterministic = a.ci_low == b.ci_low && a.ci_high == b.ci_high && a.median == b.median;
  const auto exact = oracle::enumerate_tss(f, 0.5);
  const double gap = std::max({std::abs(a.ci_low - oracle::exact_quantile(exact, 0.025)),
                               std::abs(a.median - oracle::exact_quantile(exact, 0.5)),
                               std::abs(a.ci_high - oracle::exact_quantile(exact, 0.975))});
  const double p_same = paired_bootstrap_test(tss_at(0.5), f.p, f.p, f.y, f.g, 10000, 12).p_value;
  return verdict(deterministic && gap < 0.01 && p_same == 1.0,
                 std::string(deterministic ? "seed-deterministic" : "NOT deterministic") +
                     ", MC vs exhaustive percentile gap " + num(gap, 2) + ", paired p (identical) " + num(p_same));
}

std::vector<double> per_seed(const ExperimentReport& r, double SeedRun::*field) {
  std::vector<double> out;
  for (const auto& run : r.runs) out.push_back(run.*field);
  return out;
}

std::vector<double> per_seed_test_tss(const ExperimentReport& r) {
  std::vector<double> out;
  for (const auto& run : r.runs) out.push_back(run.test.tss);
  return out;
}

std::string join(const std::vector<double>& v, int digits = 3) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fixed(v[i], digits);
  return s;
}

Outcome desk_learning(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg;
  cfg.train.max_epochs = 30;
  cfg.bootstrap_draws = 2000;
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  const AblationReport rep = run_ablation(
      cfg, {AblationVariant::mean_pooling, AblationVariant::cross_entropy}, seeds, ctx.workdir / "desk_learning");
  const double secs = seconds_since(t0);

  const ExperimentReport& full = rep.rows[0].report;
  const ExperimentReport& mean_pool = rep.rows[1].report;
  const ExperimentReport& bce = rep.rows[2].report;
  const auto val = per_seed(full, &SeedRun::val_tss);
  const bool learned = std::all_of(val.begin(), val.end(), [](double v) { return v > 0.8; });
  const double full_med = percentile(per_seed_test_tss(full), 0.5);
  const double mean_med = percentile(per_seed_test_tss(mean_pool), 0.5);
  const bool direction = mean_med <= full_med;
  std::vector<double> epochs;
  for (const auto& run : full.runs) epochs.push_back(static_cast<double>(run.epochs));
  std::cout << "      full model best val TSS per seed: " << join(val) << "; epochs run: " << join(epochs, 0) << "\n";
  std::cout << "      median test TSS: full " << fixed(full_med, 3) << ", mean pooling " << fixed(mean_med, 3)
            << " (paired p " << fixed(rep.rows[1].p_value, 3) << ")\n";
  std::cout << "      diagnostic, cross-entropy-only variant best val TSS per seed: "
            << join(per_seed(bce, &SeedRun::val_tss)) << "\n";
  return verdict(learned && direction && secs < 1200.0,
                 std::string("val TSS > 0.8 on every seed: ") + (learned ? "yes" : "no") +
                     "; mean-pooling median test TSS <= full: " + (direction ? "yes" : "no") + "; " +
                     fixed(secs, 0) + " s");
}

Outcome skab_target(const Context& ctx) {
  if (ctx.skab_dir.empty()) return {Status::skip, "set RARECAST_SKAB_DIR (or --skab-dir) to a SKAB checkout to run"};
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(ctx.skab_dir))
    if (e.is_regular_file() && e.path().extension() == ".csv" && e.path().filename() != "anomaly-free.csv")
      paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) return {Status::fail, "no CSV traces under " + ctx.skab_dir.string()};

  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg;
  cfg.data.kind = DataSource::Kind::skab;
  cfg.data.skab_paths = paths;
  cfg.model = ModelConfig::reference();
  cfg.model.d = 96;
  cfg.model.layers = 4;
  cfg.model.ffn = 192;
  cfg.model.steps = static_cast<int>(cfg.data.skab.window_len);
  cfg.model.features = 2 * static_cast<int>(read_sensor_csv(paths.front()).values.cols());
  cfg.fixed_tau = 0.5;
  cfg.bootstrap_draws = 1000;
  std::vector<std::uint64_t> seeds;
  for (int s = 0; s < ctx.skab_seeds; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
  const ExperimentReport r = run_experiment(cfg, seeds, ctx.workdir / "skab");
  const double secs = seconds_since(t0);
  const auto t = per_seed_test_tss(r);
  double mean = 0.0;
  for (double v : t) mean += v / static_cast<double>(t.size());
  return verdict(mean >= 0.90 && secs < 2700.0, std::to_string(paths.size()) + " traces, test TSS at 0.5: " + join(t) +
                                                    " (mean " + fixed(mean, 3) + ", target >= 0.90); " +
                                                    fixed(secs, 0) + " s");
}

Outcome not_reproducible(const Context&) {
  return {Status::pass,
          "stated: NOT reproduced here are the nine solar-flare headline results and their per-task tables, "
          "the M5-72h operating thresholds 0.240/0.460, the absolute ablation metrics and the prospective "
          "lead times; they need proprietary-pipeline data and full-scale training and are covered only by "
          "the mechanism-level criteria above"};
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), root).generic_string()] = ss.str();
  }
  return out;
}

Outcome determinism(const Context& ctx) {
  ExperimentConfig cfg;
  cfg.data.synthetic.n_windows = 2400;
  cfg.data.synthetic.positive_rate = 0.02;
  cfg.data.synthetic.n_groups = 40;
  cfg.train.max_epochs = 2;
  cfg.bootstrap_draws = 300;
  SweepSpec sweep;
  sweep.kind = SweepSpec::Kind::evt_quantile;
  sweep.quantiles = {0.85, 0.95};

  std::vector<std::map<std::string, std::string>> trees;
  for (const char* rerun : {"a", "b"}) {
    const fs::path dir = ctx.workdir / "determinism" / rerun;
    fs::remove_all(dir);
    run_experiment(cfg, {0, 1}, dir / "train");
    run_sweep(sweep, cfg, {0}, dir / "sweep");
    const PreparedData data = prepare_data(cfg.data);
    const auto [params, mc] = load_params(dir / "train" / "seed_0" / "checkpoint.bin");
    const Evaluation ev = evaluate(params, mc, data.splits.test);
    const std::span<const double> p(ev.prob.data(), static_cast<std::size_t>(ev.prob.size()));
    write_text_file(predictions_csv({{p.begin(), p.end()}, data.splits.test.labels, data.splits.test.group_ids}),
                    dir / "eval" / "predictions.csv");
    write_json_file(to_json(ece_equal_frequency(p, data.splits.test.labels)), dir / "eval" / "reliability.json");
    trees.push_back(tree_contents(dir));
  }
  std::size_t differing = 0;
  for (const auto& [name, bytes] : trees[0]) {
    const auto it = trees[1].find(name);
    if (it == trees[1].end() || it->second != bytes) ++differing;
  }
  differing += trees[1].size() > trees[0].size() ? trees[1].size() - trees[0].size() : 0;
  return verdict(differing == 0 && !trees[0].empty(), std::to_string(trees[0].size()) +
                                                          " files (logs, checkpoints, predictions, reports) compared, " +
                                                          std::to_string(differing) + " differ");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite: one PASS/FAIL/SKIP line per criterion"};
  Context ctx;
  ctx.workdir = "acceptance_runs";
  std::string only;
  std::vector<int> known_fail;
  std::string skab_dir;
  if (const char* env = std::getenv("RARECAST_SKAB_DIR")) skab_dir = env;
  app.add_option("--workdir", ctx.workdir, "Directory for run artifacts")->capture_default_str();
  app.add_option("--only", only, "Comma-separated criterion numbers to run");
  app.add_option("--known-fail", known_fail,
                 "Criteria recorded as failing; they still print FAIL but do not set the exit code")
      ->delimiter(',');
  app.add_option("--skab-dir", skab_dir, "SKAB data directory (default: $RARECAST_SKAB_DIR)");
  app.add_option("--skab-seeds", ctx.skab_seeds, "Seeds for the SKAB run")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  ctx.skab_dir = skab_dir;

  const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria{
      {"parameter budget", parameter_budget},
      {"FLOP budget", flop_budget},
      {"gradient suite", gradient_suite},
      {"loss identities", loss_identities},
      {"metric oracles", metric_oracles},
      {"decision protocol", decision_protocol},
      {"calibration statistics", calibration_statistics},
      {"bootstrap", bootstrap_checks},
      {"desk-scale learning", desk_learning},
      {"SKAB soft target", skab_target},
      {"not reproducible", not_reproducible},
      {"determinism", determinism}};

  std::set<int> selected;
  if (!only.empty()) {
    std::stringstream ss(only);
    std::string tok;
    while (std::getline(ss, tok, ',')) selected.insert(std::stoi(tok));
  }

  const std::set<int> known(known_fail.begin(), known_fail.end());
  int failures = 0, known_failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("error: ") + e.what()};
    }
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
    std::string note;
    if (known.count(id)) {
      if (o.status == Status::fail) {
        ++known_failures;
        note = " (known failure)";
      } else if (o.status == Status::pass) {
        ++failures;
        note = " (listed as known failure but passed; update --known-fail)";
      }
    } else {
      failures += o.status == Status::fail;
    }
    std::cout << tag << " " << std::setw(2) << id << " " << criteria[i].first << ": " << o.detail << " ["
              << fixed(seconds_since(t0), 2) << " s]" << note << std::endl;
  }
  std::cout << "summary: " << failures << " unexpected, " << known_failures << " known failure(s)" << std::endl;
  return failures == 0 ? 0 : 1;
}
