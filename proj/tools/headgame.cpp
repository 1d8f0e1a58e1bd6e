// headgame: train runs, run the verification suite, analyze and report.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "headgame/analysis.hpp"
#include "headgame/config.hpp"
#include "headgame/errors.hpp"
#include "headgame/game.hpp"
#include "headgame/rng.hpp"
#include "headgame/runlog_io.hpp"
#include "headgame/trainer.hpp"
#include "headgame/verify.hpp"

namespace fs = std::filesystem;
using namespace headgame;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::size_t threads = 1;
};

Config resolve_config(const Globals& g) {
  Config cfg = g.config.empty() ? Config{} : load_config(g.config);
  if (g.seed) cfg.train.seed = *g.seed;
  cfg.validate();
  return cfg;
}

std::vector<std::uint64_t> parse_seed_range(const std::string& text) {
  const auto dots = text.find("..");
  try {
    if (dots == std::string::npos) return {std::stoull(text)};
    const std::uint64_t a = std::stoull(text.substr(0, dots));
    const std::uint64_t b = std::stoull(text.substr(dots + 2));
    require(a <= b, "--seeds: empty range " + text);
    std::vector<std::uint64_t> out;
    for (std::uint64_t s = a; s <= b; ++s) out.push_back(s);
    return out;
  } catch (const std::logic_error&) {
    throw ValidationError("--seeds: expected N or A..B, got '" + text + "'");
  }
}

std::string run_dir_name(TrainMode mode, std::uint64_t seed) {
  return std::string(to_string(mode)) + "_seed" + std::to_string(seed);
}

// Each worker builds its own task and run; results are collected by seed.
std::vector<std::string> train_seeds(Config cfg, const std::vector<std::uint64_t>& seeds,
                                     const std::string& out, std::size_t threads) {
  std::vector<std::string> dirs(seeds.size());
  std::vector<std::string> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex io;
  auto worker = [&] {
    for (std::size_t k = next++; k < seeds.size(); k = next++) {
      Config run_cfg = cfg;
      run_cfg.train.seed = seeds[k];
      try {
        const TrainSetup setup = make_setup(run_cfg);
        const Task task = make_task(run_cfg.task, run_cfg.model.seq_len, seeds[k]);
        const RunLog log = train(setup, task, seeds[k]);
        dirs[k] = (fs::path(out) / run_dir_name(run_cfg.train.mode, seeds[k])).string();
        write_run(dirs[k], log, dump_config(run_cfg));
        std::lock_guard lock(io);
        std::cout << dirs[k] << "  gamma=" << log.final.gamma << "  c_ib=" << log.final.social.c_ib
                  << "\n";
      } catch (const TrainingAborted& e) {
        errors[k] = "seed " + std::to_string(seeds[k]) + ": aborted at step " +
                    std::to_string(e.step()) + ": " + e.what();
      } catch (const std::exception& e) {
        errors[k] = "seed " + std::to_string(seeds[k]) + ": " + e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(threads, seeds.size()); ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  for (const std::string& e : errors)
    if (!e.empty()) throw NumericError(e);
  return dirs;
}

int cmd_train(const Globals& g, const std::string& mode, const std::string& seeds) {
  Config cfg = resolve_config(g);
  if (!mode.empty()) cfg.train.mode = parse_train_mode(mode);
  const std::vector<std::uint64_t> list =
      seeds.empty() ? std::vector<std::uint64_t>{cfg.train.seed} : parse_seed_range(seeds);
  train_seeds(cfg, list, g.out, g.threads);
  return 0;
}

int cmd_verify(const Globals& g, bool list, const std::vector<std::string>& tols,
               const std::vector<std::string>& only, bool fault, const std::string& json_path) {
  if (list) {
    for (const CheckInfo& c : list_checks())
      std::printf("%-24s tol %-8g %s\n", c.name.c_str(), c.tolerance, c.description.c_str());
    return 0;
  }
  VerifyOptions opt;
  opt.only = only;
  opt.inject_ldb_fault = fault;
  if (g.seed) opt.seed = *g.seed;
  for (const std::string& t : tols) {
    const auto eq = t.find('=');
    require(eq != std::string::npos, "--tol: expected name=value, got '" + t + "'");
    try {
      opt.tolerances[t.substr(0, eq)] = std::stod(t.substr(eq + 1));
    } catch (const std::logic_error&) {
      throw ValidationError("--tol: bad value in '" + t + "'");
    }
  }
  const VerifyReport report = run_checks(opt);
  for (const CheckResult& r : report.results)
    std::printf("%s %-24s value %-12.4g tol %-8g %6.2fs  %s\n", r.passed ? "PASS" : "FAIL",
                r.name.c_str(), r.value, r.tolerance, r.seconds, r.detail.c_str());
  std::printf("%s in %.1fs\n", report.passed() ? "all checks passed" : "verification FAILED",
              report.seconds);
  const std::string path =
      json_path.empty() ? (fs::path(g.out) / "verify.json").string() : json_path;
  fs::create_directories(fs::path(path).parent_path().empty() ? fs::path(".")
                                                              : fs::path(path).parent_path());
  write_text_file(path, report.to_json());
  return report.passed() ? 0 : 1;
}

struct LoadedRun {
  std::string dir;
  RunLog log;
  Config cfg;
};

LoadedRun load(const std::string& dir) {
  LoadedRun r{dir, load_run(dir), load_config((fs::path(dir) / "config.resolved").string())};
  require(!r.log.snapshots.empty(), dir + ": run has no snapshots");
  return r;
}

// Baseline and game runs paired by seed, in seed order.
std::vector<std::pair<const LoadedRun*, const LoadedRun*>> pair_by_seed(
    const std::vector<LoadedRun>& runs) {
  std::map<std::uint64_t, std::pair<const LoadedRun*, const LoadedRun*>> by_seed;
  for (const LoadedRun& r : runs) {
    auto& slot = by_seed[r.log.seed];
    (r.log.mode == TrainMode::kBaselineCe ? slot.first : slot.second) = &r;
  }
  std::vector<std::pair<const LoadedRun*, const LoadedRun*>> out;
  for (const auto& [seed, p] : by_seed)
    if (p.first && p.second) out.push_back(p);
  return out;
}

void analyze_single(const LoadedRun& r) {
  const fs::path dir = fs::path(r.dir) / "analysis";
  fs::create_directories(dir);
  const AnalysisConfig& a = r.cfg.analysis;
  const CoalitionPartition part =
      spectral_bicluster(r.log.snapshots.back().g, {a.k, a.seed, a.restarts});
  write_text_file((dir / "coalitions.json").string(), partition_to_json(part, nullptr));
  std::ostringstream csv;
  write_partition_csv(csv, part);
  write_text_file((dir / "coalitions.csv").string(), csv.str());
  const PairDynamics dyn = pair_dynamics(r.log.snapshots, a.dynamics_threshold);
  write_text_file((dir / "dynamics.json").string(), dynamics_to_json(dyn));
  std::ostringstream traces;
  write_traces_csv(traces, dyn);
  write_text_file((dir / "traces.csv").string(), traces.str());
  std::cout << r.dir << ": k=" << part.k << " modularity=" << part.modularity
            << " strengthen/weaken/flat=" << dyn.strengthen << "/" << dyn.weaken << "/" << dyn.flat
            << "\n";
}

void analyze_pair(const LoadedRun& base, const LoadedRun& game, const fs::path& dir) {
  const AnalysisConfig& a = base.cfg.analysis;
  const std::string tag = "seed" + std::to_string(base.log.seed);
  const CoalitionPartition part =
      spectral_bicluster(base.log.snapshots.back().g, {a.k, a.seed, a.restarts});
  const Matrix delta_g = game.log.snapshots.back().g - base.log.snapshots.back().g;
  const CoalitionDeltaResult test = coalition_delta_test(delta_g, part);
  write_text_file((dir / ("delta_test_" + tag + ".json")).string(), partition_to_json(part, &test));
  std::ostringstream hist;
  write_delta_histogram_csv(hist, test, a.histogram_bins);
  write_text_file((dir / ("delta_histogram_" + tag + ".csv")).string(), hist.str());
  const RunComparison c = compare_runs(base.log, game.log);
  const std::uint64_t seeds[] = {base.log.seed};
  write_text_file((dir / ("comparison_" + tag + ".json")).string(),
                  comparison_to_json(std::span(&c, 1), seeds));
  std::cout << tag << ": Mann-Whitney U=" << test.test.u << " p=" << test.test.p_value
            << (test.test.exact ? " (exact)" : " (normal)") << "\n";
}

int cmd_analyze(const Globals& g, const std::vector<std::string>& dirs, bool fit_poa) {
  require(!dirs.empty(), "analyze: no run directories given");
  std::vector<LoadedRun> runs;
  for (const std::string& d : dirs) runs.push_back(load(d));
  for (const LoadedRun& r : runs) analyze_single(r);

  const auto pairs = pair_by_seed(runs);
  const fs::path out = fs::path(g.out) / "analysis";
  if (!pairs.empty() || fit_poa) fs::create_directories(out);
  for (const auto& [base, game] : pairs) analyze_pair(*base, *game, out);

  if (fit_poa) {
    require(!pairs.empty(), "analyze --fit-poa: needs matched baseline_ce and game runs");
    std::vector<CurvePoint> points;
    for (const auto& [base, game] : pairs) {
      const std::vector<CurvePoint> p = delta_h_points(base->log.snapshots, game->log.snapshots);
      points.insert(points.end(), p.begin(), p.end());
    }
    const AnalysisConfig& a = pairs.front().first->cfg.analysis;
    FitOptions opt;
    opt.n_boot = a.n_boot;
    opt.seed = a.seed;
    opt.grid = a.fit_grid;
    opt.band_points = a.band_points;
    const FitResult fit = fit_poa_curve(points, opt);
    write_text_file((out / "fit.json").string(), fit_to_json(fit));
    std::ostringstream csv;
    write_fit_csv(csv, fit, points);
    write_text_file((out / "fit.csv").string(), csv.str());
    std::cout << "fit: a=" << fit.a << " lambda=" << fit.lambda << " c=" << fit.c
              << " r2=" << fit.r2 << (fit.rejected ? " rejected: " + fit.reason : "") << "\n";
  }
  return 0;
}

int cmd_report(const Globals& g, const std::vector<std::string>& dirs, bool poa,
               std::size_t restarts) {
  fs::create_directories(g.out);
  if (!dirs.empty()) {
    std::vector<LoadedRun> runs;
    for (const std::string& d : dirs) runs.push_back(load(d));
    const auto pairs = pair_by_seed(runs);
    require(!pairs.empty(), "report: needs matched baseline_ce and game runs");
    std::vector<RunComparison> comps;
    std::vector<std::uint64_t> seeds;
    std::printf("%-6s %12s %12s %12s %12s\n", "seed", "d_gamma", "d_c_ib", "d_p_hat@0.2",
                "d_eval_ce");
    for (const auto& [base, game] : pairs) {
      comps.push_back(compare_runs(base->log, game->log));
      seeds.push_back(base->log.seed);
      const RunComparison& c = comps.back();
      double p02 = 0.0;
      for (std::size_t k = 0; k < c.deltas.size(); ++k)
        if (c.deltas[k] == 0.2) p02 = c.p_hat_delta[k];
      std::printf("%-6llu %12.5g %12.5g %12.5g %12.5g\n",
                  static_cast<unsigned long long>(seeds.back()), c.gamma_delta, c.c_ib_delta, p02,
                  c.eval_ce_delta);
    }
    std::vector<double> gd;
    for (const RunComparison& c : comps) gd.push_back(c.gamma_delta);
    const SignTest s = sign_test(gd);
    std::printf("gamma lower in game mode: %zu/%zu, sign test p=%.4g\n", s.positive,
                s.positive + s.negative + s.ties, s.p_value);
    write_text_file((fs::path(g.out) / "comparison.json").string(),
                    comparison_to_json(comps, seeds));
  }
  if (poa) {
    Config cfg = resolve_config(g);
    cfg.train.mode = TrainMode::kBaselineCe;
    cfg.train.stop_at_equilibrium = true;
    const TrainSetup setup = make_setup(cfg);
    const std::uint64_t first = cfg.train.seed;
    const Task task = make_task(cfg.task, cfg.model.seq_len, first);
    std::vector<std::uint64_t> seeds;
    for (std::size_t k = 0; k < restarts; ++k) seeds.push_back(first + k);

    double l_hat = 0.0;
    std::vector<std::size_t> idx(cfg.model.batch_size);
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k % task.train.size();
    const Batch batch = task.train.batch(idx);
    for (std::uint64_t s : seeds) {
      Rng init = make_stream(s, "init");
      Rng probe = make_stream(s, "lipschitz");
      l_hat = std::max(l_hat, estimate_lipschitz(init_params(cfg.model, init), cfg.model, batch,
                                                 16, 1.0, probe));
    }
    const RestartRunner runner = [&](std::uint64_t seed) {
      const RunLog log = train(setup, task, seed);
      return EquilibriumRun{seed, log.final.social.c_ib, log.final.gamma,
                            log.rows.back().grad_norm, log.equilibrium_step.has_value()};
    };
    const PoAReport report = poa_estimate(runner, seeds, l_hat, cfg.game, g.threads);
    write_text_file((fs::path(g.out) / "poa.json").string(), poa_report_to_json(report));
    std::printf("PoA lower estimate %.6g over %zu equilibria (of %zu restarts); L_hat %.4g; rhs %s\n",
                report.poa_lower, report.equilibria.size(), report.runs.size(), report.l_hat,
                report.rhs.infinite ? "inf" : std::to_string(report.rhs.value).c_str());
    if (report.nonconvergence) std::printf("warning: no restart reached the equilibrium tolerance\n");
  }
  require(!dirs.empty() || poa, "report: give run directories and/or --poa");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-head attention as a game: training, verification and analysis"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "JSON config file (defaults apply when omitted)");
  auto* seed_opt = app.add_option("--seed", seed, "run seed override");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::Range(1, 256));

  auto* train = app.add_subcommand("train", "train one run per seed");
  std::string mode, seeds;
  train->add_option("--mode", mode, "baseline_ce or game (default from config)")
      ->check(CLI::IsMember({"baseline_ce", "game"}));
  train->add_option("--seeds", seeds, "seed or inclusive range A..B");

  auto* verify = app.add_subcommand("verify", "run the verification suite");
  bool list = false, fault = false;
  std::vector<std::string> tols, only;
  std::string json_path;
  verify->add_flag("--list", list, "print check names without running");
  verify->add_option("--tol", tols, "tolerance override name=value (repeatable)");
  verify->add_option("--only", only, "run only these checks");
  verify->add_option("--json", json_path, "results document path (default <out>/verify.json)");
  verify->add_flag("--inject-ldb-fault", fault)->group("");

  auto* analyze = app.add_subcommand("analyze", "coalitions, dynamics, pair tests and curve fits");
  std::vector<std::string> analyze_dirs;
  bool fit_poa = false;
  analyze->add_option("runs", analyze_dirs, "run directories")->required();
  analyze->add_flag("--fit-poa", fit_poa, "fit the Gamma -> hallucination-gap curve");

  auto* report = app.add_subcommand("report", "matched-seed comparison and PoA estimate");
  std::vector<std::string> report_dirs;
  bool poa = false;
  std::size_t restarts = 8;
  report->add_option("runs", report_dirs, "run directories");
  report->add_flag("--poa", poa, "estimate the price of anarchy from CE restarts");
  report->add_option("--restarts", restarts, "restarts for --poa")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;

  try {
    if (*train) return cmd_train(g, mode, seeds);
    if (*verify) return cmd_verify(g, list, tols, only, fault, json_path);
    if (*analyze) return cmd_analyze(g, analyze_dirs, fit_poa);
    if (*report) return cmd_report(g, report_dirs, poa, restarts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
