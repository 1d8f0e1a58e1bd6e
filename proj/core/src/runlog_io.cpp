#include "headgame/runlog_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "headgame/errors.hpp"

namespace headgame {

using nlohmann::json;

namespace {

constexpr const char* kEstimatorNote =
    "unconditional Gaussian estimates on head outputs; conditioning on X is not modeled";

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double get_num(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (double v : m.row(r)) row.push_back(num(v));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from(const json& j) {
  const std::size_t rows = j.size();
  const std::size_t cols = rows ? j.at(0).size() : 0;
  std::vector<double> values;
  for (const json& row : j) {
    require(row.size() == cols, "run log: ragged matrix");
    for (const json& v : row) values.push_back(get_num(v));
  }
  return Matrix(rows, cols, std::move(values));
}

json vec_json(std::span<const double> v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

std::vector<double> vec_from(const json& j) {
  std::vector<double> v;
  for (const json& x : j) v.push_back(get_num(x));
  return v;
}

json final_json(const FinalReport& f) {
  json j;
  j["social"] = {{"distortion", num(f.social.distortion)},
                 {"tc_hat", num(f.social.tc_hat)},
                 {"compression_hat", num(f.social.compression_hat)},
                 {"c_ib", num(f.social.c_ib)},
                 {"tc_lower_bound_from_g", num(f.social.tc_lower_bound_from_g)},
                 {"tc_rank_deficient", f.social.tc_rank_deficient},
                 {"ce_clamped", f.social.ce_clamped}};
  j["hallucination"] = json::array();
  for (const HallucinationReport& h : f.hallucination) {
    json e = {{"delta", num(h.delta)},
              {"n", h.n},
              {"p_hat", num(h.p_hat)},
              {"std_err", num(h.std_err)},
              {"pinsker_bound", num(h.pinsker_bound)},
              {"violation", h.violation}};
    e["excess_ratio"] = h.excess_ratio ? num(*h.excess_ratio) : json(nullptr);
    e["kappa_star"] = h.kappa_star ? num(*h.kappa_star) : json(nullptr);
    j["hallucination"].push_back(std::move(e));
  }
  j["free_riders"] = json::array();
  for (const FreeRiderReport& r : f.free_riders)
    j["free_riders"].push_back({{"tau", num(r.tau)},
                                {"a", vec_json(r.a)},
                                {"fr_set", r.fr_set},
                                {"counting_bound", num(r.counting_bound)},
                                {"violation", r.violation},
                                {"tc_total", num(r.tc_total)},
                                {"telescoping_residual", num(r.telescoping_residual)}});
  j["charges"] = {{"tau_c", vec_json(f.charges.tau_c)},
                  {"tau_r", vec_json(f.charges.tau_r)},
                  {"tc_hat", num(f.charges.tc_hat)},
                  {"compression_hat", num(f.charges.compression_hat)},
                  {"compression_dominance_ok", f.charges.compression_dominance_ok},
                  {"redundancy_dominance_ok", f.charges.redundancy_dominance_ok}};
  j["g"] = matrix_json(f.g);
  j["gamma"] = num(f.gamma);
  j["eval_ce"] = num(f.eval_ce);
  return j;
}

FinalReport final_from(const json& j) {
  FinalReport f;
  const json& s = j.at("social");
  f.social.distortion = get_num(s.at("distortion"));
  f.social.tc_hat = get_num(s.at("tc_hat"));
  f.social.compression_hat = get_num(s.at("compression_hat"));
  f.social.c_ib = get_num(s.at("c_ib"));
  f.social.tc_lower_bound_from_g = get_num(s.at("tc_lower_bound_from_g"));
  f.social.tc_rank_deficient = s.at("tc_rank_deficient").get<bool>();
  f.social.ce_clamped = s.at("ce_clamped").get<bool>();
  for (const json& e : j.at("hallucination")) {
    HallucinationReport h;
    h.delta = get_num(e.at("delta"));
    h.n = e.at("n").get<std::size_t>();
    h.p_hat = get_num(e.at("p_hat"));
    h.std_err = get_num(e.at("std_err"));
    h.pinsker_bound = get_num(e.at("pinsker_bound"));
    h.violation = e.at("violation").get<bool>();
    if (!e.at("excess_ratio").is_null()) h.excess_ratio = e.at("excess_ratio").get<double>();
    if (!e.at("kappa_star").is_null()) h.kappa_star = e.at("kappa_star").get<double>();
    f.hallucination.push_back(h);
  }
  for (const json& e : j.at("free_riders")) {
    FreeRiderReport r;
    r.tau = get_num(e.at("tau"));
    r.a = vec_from(e.at("a"));
    r.fr_set = e.at("fr_set").get<std::vector<std::size_t>>();
    r.counting_bound = get_num(e.at("counting_bound"));
    r.violation = e.at("violation").get<bool>();
    r.tc_total = get_num(e.at("tc_total"));
    r.telescoping_residual = get_num(e.at("telescoping_residual"));
    f.free_riders.push_back(std::move(r));
  }
  const json& c = j.at("charges");
  f.charges.tau_c = vec_from(c.at("tau_c"));
  f.charges.tau_r = vec_from(c.at("tau_r"));
  f.charges.tc_hat = get_num(c.at("tc_hat"));
  f.charges.compression_hat = get_num(c.at("compression_hat"));
  f.charges.compression_dominance_ok = c.at("compression_dominance_ok").get<bool>();
  f.charges.redundancy_dominance_ok = c.at("redundancy_dominance_ok").get<bool>();
  f.g = matrix_from(j.at("g"));
  f.gamma = get_num(j.at("gamma"));
  f.eval_ce = get_num(j.at("eval_ce"));
  return f;
}

std::string format_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

template <typename F>
auto parse_or_throw(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ValidationError(what + ": " + e.what());
  }
}

}  // namespace

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows) {
  out << kMetricsHeader << '\n';
  for (const MetricsRow& r : rows) {
    out << r.step;
    for (double v : {r.ce, r.ldb_raw, r.abt_raw, r.abt_normalized, r.lambda_ldb_t, r.lambda_abt_t,
                     r.alpha_ce, r.alpha_ldb, r.alpha_abt, r.gamma, r.grad_norm})
      out << ',' << format_real(v);
    out << ',' << (r.arb_fallback ? 1 : 0) << '\n';
  }
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line == kMetricsHeader,
          "metrics.csv: unexpected header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    require(cells.size() == 13, "metrics.csv: expected 13 columns in '" + line + "'");
    MetricsRow r;
    r.step = std::stoull(cells[0]);
    double* fields[] = {&r.ce,        &r.ldb_raw,   &r.abt_raw,   &r.abt_normalized,
                        &r.lambda_ldb_t, &r.lambda_abt_t, &r.alpha_ce, &r.alpha_ldb,
                        &r.alpha_abt, &r.gamma,     &r.grad_norm};
    for (std::size_t k = 0; k < 11; ++k) *fields[k] = std::strtod(cells[k + 1].c_str(), nullptr);
    r.arb_fallback = cells[12] == "1";
    require(rows.empty() || r.step > rows.back().step, "metrics.csv: steps must increase");
    rows.push_back(r);
  }
  return rows;
}

std::string snapshots_to_json(const RunLog& log) {
  json j;
  j["mode"] = to_string(log.mode);
  j["seed"] = log.seed;
  j["snapshots"] = json::array();
  for (const Snapshot& s : log.snapshots)
    j["snapshots"].push_back(
        {{"step", s.step}, {"gamma", num(s.gamma)}, {"p_hat", num(s.p_hat)}, {"g", matrix_json(s.g)}});
  return j.dump(1) + "\n";
}

std::vector<Snapshot> snapshots_from_json(const std::string& text) {
  return parse_or_throw("snapshots.json", [&] {
    const json j = json::parse(text);
    std::vector<Snapshot> out;
    for (const json& s : j.at("snapshots"))
      out.push_back({s.at("step").get<std::size_t>(), matrix_from(s.at("g")),
                     get_num(s.at("gamma")), get_num(s.at("p_hat"))});
    return out;
  });
}

std::string report_to_json(const RunLog& log) {
  json j;
  j["mode"] = to_string(log.mode);
  j["seed"] = log.seed;
  j["config_fingerprint"] = log.config_fingerprint;
  j["eval_fingerprint"] = log.eval_fingerprint;
  j["steps_run"] = log.steps_run;
  j["equilibrium_step"] = log.equilibrium_step ? json(*log.equilibrium_step) : json(nullptr);
  j["estimator"] = kEstimatorNote;
  j["final"] = final_json(log.final);
  return j.dump(2) + "\n";
}

RunLog report_from_json(const std::string& text) {
  return parse_or_throw("report.json", [&] {
    const json j = json::parse(text);
    RunLog log;
    log.mode = parse_train_mode(j.at("mode").get<std::string>());
    log.seed = j.at("seed").get<std::uint64_t>();
    log.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    log.eval_fingerprint = j.at("eval_fingerprint").get<std::string>();
    log.steps_run = j.at("steps_run").get<std::size_t>();
    if (!j.at("equilibrium_step").is_null())
      log.equilibrium_step = j.at("equilibrium_step").get<std::size_t>();
    log.final = final_from(j.at("final"));
    return log;
  });
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write " + path);
  out << text;
  require(static_cast<bool>(out), "write failed for " + path);
}

void write_run(const std::string& dir, const RunLog& log, const std::string& resolved_config) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream metrics;
  write_metrics_csv(metrics, log.rows);
  write_text_file((fs::path(dir) / "metrics.csv").string(), metrics.str());
  write_text_file((fs::path(dir) / "snapshots.json").string(), snapshots_to_json(log));
  write_text_file((fs::path(dir) / "report.json").string(), report_to_json(log));
  write_text_file((fs::path(dir) / "config.resolved").string(), resolved_config);
}

RunLog load_run(const std::string& dir) {
  namespace fs = std::filesystem;
  RunLog log = report_from_json(read_text_file((fs::path(dir) / "report.json").string()));
  std::istringstream metrics(read_text_file((fs::path(dir) / "metrics.csv").string()));
  log.rows = read_metrics_csv(metrics);
  log.snapshots = snapshots_from_json(read_text_file((fs::path(dir) / "snapshots.json").string()));
  return log;
}

std::string comparison_to_json(std::span<const RunComparison> per_seed,
                               std::span<const std::uint64_t> seeds) {
  require(per_seed.size() == seeds.size(), "comparison_to_json: seed count mismatch");
  json j;
  j["sign_convention"] = "baseline minus game; positive means game mode is better";
  j["runs"] = json::array();
  std::vector<double> gamma, p02;
  for (std::size_t k = 0; k < per_seed.size(); ++k) {
    const RunComparison& c = per_seed[k];
    j["runs"].push_back({{"seed", seeds[k]},
                         {"gamma_delta", num(c.gamma_delta)},
                         {"c_ib_delta", num(c.c_ib_delta)},
                         {"eval_ce_delta", num(c.eval_ce_delta)},
                         {"deltas", vec_json(c.deltas)},
                         {"p_hat_delta", vec_json(c.p_hat_delta)},
                         {"taus", vec_json(c.taus)},
                         {"fr_count_delta", vec_json(c.fr_count_delta)}});
    gamma.push_back(c.gamma_delta);
    for (std::size_t d = 0; d < c.deltas.size(); ++d)
      if (c.deltas[d] == 0.2) p02.push_back(c.p_hat_delta[d]);
  }
  auto sign_json = [](std::span<const double> v) {
    const SignTest s = sign_test(v);
    return json{{"positive", s.positive}, {"negative", s.negative}, {"ties", s.ties},
                {"p_value", num(s.p_value)}};
  };
  j["sign_test_gamma"] = sign_json(gamma);
  if (!p02.empty()) j["sign_test_p_hat_0.2"] = sign_json(p02);
  return j.dump(2) + "\n";
}

std::string poa_report_to_json(const PoAReport& report) {
  auto run_json = [](const EquilibriumRun& r) {
    return json{{"seed", r.seed},
                {"c_ib", num(r.c_ib)},
                {"gamma", num(r.gamma)},
                {"grad_norm", num(r.grad_norm)},
                {"converged", r.converged}};
  };
  json j;
  j["runs"] = json::array();
  for (const EquilibriumRun& r : report.runs) j["runs"].push_back(run_json(r));
  j["equilibria"] = json::array();
  for (const EquilibriumRun& r : report.equilibria) j["equilibria"].push_back(run_json(r));
  j["poa_lower"] = num(report.poa_lower);
  j["nonconvergence"] = report.nonconvergence;
  j["l_hat"] = num(report.l_hat);
  j["l_hat_note"] = "empirical lower bound on L; rhs is a bound under estimated L";
  j["rhs"] = num(report.rhs.value);
  j["rhs_infinite"] = report.rhs.infinite;
  return j.dump(2) + "\n";
}

std::string partition_to_json(const CoalitionPartition& p, const CoalitionDeltaResult* delta) {
  json j = {{"labels", p.labels},
            {"k", p.k},
            {"reorder", p.reorder},
            {"modularity", num(p.modularity)},
            {"degenerate", p.degenerate}};
  if (delta != nullptr)
    j["delta_test"] = {{"u", num(delta->test.u)},
                       {"p_value", num(delta->test.p_value)},
                       {"exact", delta->test.exact},
                       {"n_intra", delta->intra.size()},
                       {"n_extra", delta->extra.size()},
                       {"mean_intra", num(delta->mean_intra)},
                       {"mean_extra", num(delta->mean_extra)}};
  return j.dump(2) + "\n";
}

std::string fit_to_json(const FitResult& fit) {
  json j = {{"a", num(fit.a)},
            {"lambda", num(fit.lambda)},
            {"c", num(fit.c)},
            {"r2", num(fit.r2)},
            {"sse", num(fit.sse)},
            {"rejected", fit.rejected},
            {"reason", fit.reason},
            {"n_boot", fit.n_boot},
            {"sse_history", vec_json(fit.sse_history)}};
  return j.dump(2) + "\n";
}

std::string dynamics_to_json(const PairDynamics& d) {
  json j = {{"strengthen", d.strengthen}, {"weaken", d.weaken}, {"flat", d.flat}};
  j["pairs"] = json::array();
  for (const PairTrace& p : d.pairs)
    j["pairs"].push_back({{"i", p.i},
                          {"j", p.j},
                          {"trend", to_string(p.trend)},
                          {"final", num(p.trace.back())},
                          {"crossing_step", p.crossing_step ? json(*p.crossing_step) : json(nullptr)}});
  return j.dump(2) + "\n";
}

}  // namespace headgame
