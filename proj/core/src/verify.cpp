#include "headgame/verify.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include <json.hpp>

#include "headgame/analysis.hpp"
#include "headgame/arbitration.hpp"
#include "headgame/attention.hpp"
#include "headgame/errors.hpp"
#include "headgame/game.hpp"
#include "headgame/interaction.hpp"
#include "headgame/rng.hpp"
#include "headgame/runlog_io.hpp"
#include "headgame/trainer.hpp"

namespace headgame {

const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::kCe: return "ce";
    case LossKind::kLdb: return "ldb";
    case LossKind::kAbt: return "abt";
  }
  return "?";
}

namespace {

ModelConfig gradient_model() {
  ModelConfig m;
  m.heads = 3;
  m.head_dim = 2;
  m.seq_len = 3;
  m.batch_size = 4;
  m.classes = 3;
  return m;
}

ParamVars vars_from_list(std::span<const ag::Var> list, std::size_t heads) {
  ParamVars pv;
  for (std::size_t i = 0; i < heads; ++i)
    pv.heads.push_back({list[4 * i], list[4 * i + 1], list[4 * i + 2], list[4 * i + 3]});
  pv.bias = list[4 * heads];
  return pv;
}

}  // namespace

ag::GradientCheck loss_gradient_check(LossKind kind, std::uint64_t seed, const LossConfig& losses,
                                      double step, bool inject_ldb_fault) {
  const ModelConfig cfg = gradient_model();
  Rng rng = make_stream(seed, "gradient_check");
  const Params params = init_params(cfg, rng);
  const Matrix inputs = gaussian_matrix(rng, cfg.batch_size * cfg.seq_len, cfg.d_model());
  std::vector<int> labels(cfg.batch_size);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(cfg.classes) - 1);
  for (int& l : labels) l = pick(rng);
  const Matrix targets = one_hot(labels, cfg.classes);
  const std::vector<Matrix> list = params.to_list();

  // ABT pair weights are constants of the objective.
  Matrix g_const;
  if (kind == LossKind::kAbt) {
    const HeadOutputs out = forward(params, inputs, cfg, &targets);
    g_const = compute_interaction(params, out).g;
  }

  const ag::Function f = [&](ag::Tape& tape, std::span<const ag::Var> vars) {
    const ParamVars pv = vars_from_list(vars, cfg.heads);
    const ForwardVars fv = build_forward(tape, pv, tape.constant(inputs), cfg);
    switch (kind) {
      case LossKind::kCe:
        return ag::softmax_cross_entropy(fv.logits, targets);
      case LossKind::kLdb: {
        const ag::Var ldb = taped_ldb(taped_interaction(pv, fv.logits, targets), losses.eps_ldb);
        return inject_ldb_fault ? ag::fault_negate_grad(ldb) : ldb;
      }
      case LossKind::kAbt:
        return taped_abt(fv.heads, g_const, losses);
    }
    throw ValidationError("loss_gradient_check: unknown loss");
  };
  return ag::check_gradient(f, list, step, 400, seed);
}

Config fast_config() {
  Config c;
  c.model.heads = 4;
  c.model.head_dim = 2;
  c.model.seq_len = 4;
  c.model.batch_size = 16;
  c.model.classes = 4;
  c.task.classes = 4;
  c.task.input_dim = 8;
  c.task.mean_std = 0.35;
  c.task.n_train = 256;
  c.task.n_eval = 256;
  c.task.seed = 11;
  c.train.steps = 300;
  c.train.snapshot_every = 25;
  c.validate();
  return c;
}

bool VerifyReport::passed() const {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

std::string VerifyReport::to_json() const {
  nlohmann::json j;
  j["passed"] = passed();
  j["seconds"] = seconds;
  j["checks"] = nlohmann::json::array();
  for (const CheckResult& r : results) {
    nlohmann::json e = {{"name", r.name},
                        {"passed", r.passed},
                        {"tolerance", r.tolerance},
                        {"detail", r.detail},
                        {"seconds", r.seconds}};
    e["value"] = std::isfinite(r.value) ? nlohmann::json(r.value) : nlohmann::json(nullptr);
    j["checks"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

namespace {

struct Outcome {
  double value = 0.0;
  bool passed = false;
  std::string detail;
};

// Shared training runs for the run-based checks, built on first use.
struct RunCache {
  Config cfg = fast_config();
  std::optional<Task> task;
  std::vector<RunLog> runs;  // game mode, seeds 1 and 2

  const Task& get_task() {
    if (!task) task = make_task(cfg.task, cfg.model.seq_len, 7);
    return *task;
  }
  const std::vector<RunLog>& get_runs() {
    if (runs.empty()) {
      const TrainSetup setup = make_setup(cfg);
      for (std::uint64_t seed : {1, 2}) runs.push_back(train(setup, get_task(), seed));
    }
    return runs;
  }
};

struct Context {
  const VerifyOptions& options;
  RunCache cache;
};

using CheckFn = std::function<Outcome(Context&, double tol)>;

struct CheckDef {
  CheckInfo info;
  CheckFn fn;
};

Outcome below(double value, double tol, const std::string& detail) {
  return {value, value < tol, detail};
}

Outcome check_sym_eig(Context& ctx, double tol) {
  Rng rng = make_stream(ctx.options.seed, "verify.sym_eig");
  double worst = 0.0;
  for (std::size_t n : {1, 2, 3, 5, 8, 16, 32, 64}) {
    const Matrix a = symmetrize(gaussian_matrix(rng, n, n));
    const SymEig e = sym_eig(a);
    const Matrix rec = eig_reconstruct(e, [](double l) { return l; });
    const Matrix vtv = matmul_tn(e.eigenvectors, e.eigenvectors);
    worst = std::max({worst, max_abs_diff(rec, a), max_abs_diff(vtv, Matrix::identity(n))});
  }
  return below(worst, tol, "max reconstruction / orthonormality error, n up to 64");
}

Outcome check_gradient_kind(Context& ctx, double tol, LossKind kind) {
  const LossConfig losses;
  double worst = 0.0;
  for (std::uint64_t p = 0; p < 10; ++p) {
    const ag::GradientCheck gc = loss_gradient_check(kind, ctx.options.seed * 1000 + p, losses, 1e-5,
                                                     ctx.options.inject_ldb_fault);
    worst = std::max(worst, gc.max_rel_err);
  }
  return below(worst, tol, std::string("max relative error over 10 points, loss ") + to_string(kind));
}

Outcome check_potential(Context& ctx, double tol) {
  Rng rng = make_stream(ctx.options.seed, "verify.potential");
  ModelConfig cfg;
  cfg.heads = 4;
  cfg.head_dim = 2;
  cfg.seq_len = 4;
  cfg.batch_size = 8;
  cfg.classes = 4;
  std::gamma_distribution<double> gamma(1.0, 1.0);
  double worst = 0.0;
  for (int state = 0; state < 20; ++state) {
    const Params params = init_params(cfg, rng);
    Batch batch;
    batch.inputs = gaussian_matrix(rng, cfg.batch_size * cfg.seq_len, cfg.d_model());
    batch.targets = softmax_rows(gaussian_matrix(rng, cfg.batch_size, cfg.classes));
    for (int v = 0; v < 3; ++v) {
      GameSpec spec;
      spec.alpha_wd = 0.01;
      spec.pi.resize(cfg.heads);
      for (double& x : spec.pi) x = gamma(rng) + 1e-3;
      const double total = std::accumulate(spec.pi.begin(), spec.pi.end(), 0.0);
      for (double& x : spec.pi) x /= total;
      worst = std::max(worst, verify_potential_identity(params, cfg, batch, spec).max_residual);
    }
  }
  return below(worst, tol, "max relative residual, 20 states x 3 share vectors");
}

// Random Gram-derived coupling pairs; some samples have a zero output block.
template <typename F>
void for_gram_samples(std::uint64_t seed, F&& visit) {
  Rng rng = make_stream(seed, "verify.gram");
  std::uniform_int_distribution<std::size_t> heads(1, 16), dh(1, 6), classes(2, 10), rows(1, 8);
  std::bernoulli_distribution zero_block(0.1);
  for (int s = 0; s < 100; ++s) {
    const std::size_t h = heads(rng), d = dh(rng), c = classes(rng);
    std::vector<Matrix> wo;
    for (std::size_t i = 0; i < h; ++i) wo.push_back(gaussian_matrix(rng, c, d));
    if (zero_block(rng)) wo[0] = Matrix(c, d);
    const Matrix eta = gaussian_matrix(rng, rows(rng), c);
    visit(interaction_matrix(weight_coupling(wo), gradient_coupling(wo, eta)));
  }
}

Outcome check_schur_psd(Context& ctx, double tol) {
  double min_eig = std::numeric_limits<double>::infinity();
  for_gram_samples(ctx.options.seed, [&](const InteractionMatrix& im) {
    min_eig = std::min(min_eig, sym_eig(im.g).eigenvalues.front());
  });
  return {min_eig, min_eig >= -tol, "min eigenvalue of G over 100 samples, H <= 16"};
}

Outcome check_gamma_identity(Context& ctx, double tol) {
  double worst = 0.0;
  for_gram_samples(ctx.options.seed, [&](const InteractionMatrix& im) {
    const std::size_t h = im.g.rows();
    double pairs = 0.0;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = i + 1; j < h; ++j) {
        const double w = im.omega(i, j) * im.rho(i, j);
        pairs += w * w;
      }
    const double g2 = frobenius_norm_sq(im.g - Matrix::identity(h));
    worst = std::max(worst, std::abs(g2 - 2.0 * pairs));
  });
  return below(worst, tol, "max |Gamma^2 - 2 sum omega^2 rho^2| over 100 samples");
}

double fixed_point_residual(const GradientSet& gs, std::span<const double> alpha) {
  const Matrix m = gradient_gram(gs);
  double r = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    double ma = 0.0;
    for (std::size_t j = 0; j < alpha.size(); ++j) ma += m(i, j) * alpha[j];
    r = std::max(r, std::abs(ma - 1.0 / alpha[i]));
  }
  return r;
}

Outcome check_nash(Context& ctx, double tol) {
  Rng rng = make_stream(ctx.options.seed, "verify.nash");
  double worst = 0.0;
  std::size_t failures = 0;
  const double fallback[] = {1.0, 1.0, 1.0};
  for (int s = 0; s < 50; ++s) {
    GradientSet gs;
    for (int k = 0; k < 3; ++k) {
      const Matrix g = gaussian_matrix(rng, 1, 20);
      gs.gradients.push_back(g.values());
    }
    const NashResult r = nash_weights(gs, fallback);
    if (!r.converged || r.fallback) ++failures;
    worst = std::max(worst, fixed_point_residual(gs, r.alpha));
  }
  return {worst, worst < tol && failures == 0,
          "max ||M a - 1/a||_inf over 50 random K=3 sets; non-converged " + std::to_string(failures)};
}

Outcome check_nash_closed_form(Context& ctx, double tol) {
  Rng rng = make_stream(ctx.options.seed, "verify.nash_closed");
  double worst = 0.0;
  for (int s = 0; s < 10; ++s) {
    const Matrix g = gaussian_matrix(rng, 1, 12);
    GradientSet one;
    one.gradients.push_back(g.values());
    const double w1[] = {1.0};
    const double a1 = nash_weights(one, w1).alpha[0];
    worst = std::max(worst, std::abs(a1 * norm(g.data()) - 1.0));

    // Disjoint supports make the pair exactly orthogonal.
    std::vector<double> u(12, 0.0), v(12, 0.0);
    for (std::size_t i = 0; i < 6; ++i) u[i] = g.data()[i];
    for (std::size_t i = 6; i < 12; ++i) v[i] = 3.0 * g.data()[i];
    GradientSet two;
    two.gradients = {u, v};
    const double w2[] = {1.0, 1.0};
    const NashResult r = nash_weights(two, w2);
    worst = std::max({worst, std::abs(r.alpha[0] * norm(u) - 1.0), std::abs(r.alpha[1] * norm(v) - 1.0)});
  }
  return below(worst, tol, "max relative error of alpha vs 1/||g|| for K=1 and orthogonal K=2");
}

Outcome check_schedule(Context&, double tol) {
  const LossConfig cfg;
  double worst = 0.0;
  for (std::size_t total : {1, 2, 10, 99, 4000}) {
    worst = std::max({worst, std::abs(schedule_lambda(0, total, cfg.lambda_ldb, cfg)),
                      std::abs(schedule_lambda(total, total, cfg.lambda_abt, cfg))});
  }
  return {worst, worst <= tol, "|lambda| at the first and last step"};
}

Outcome check_run_schedule(Context& ctx, double tol) {
  double worst = 0.0;
  for (const RunLog& log : ctx.cache.get_runs()) {
    for (const MetricsRow* r : {&log.rows.front(), &log.rows.back()})
      worst = std::max({worst, std::abs(r->lambda_ldb_t), std::abs(r->lambda_abt_t)});
  }
  return {worst, worst <= tol, "logged lambda_t at the first and last training step"};
}

Outcome check_pinsker(Context& ctx, double) {
  std::size_t violations = 0, total = 0;
  double worst = -std::numeric_limits<double>::infinity();
  for (const RunLog& log : ctx.cache.get_runs())
    for (const HallucinationReport& h : log.final.hallucination) {
      ++total;
      if (h.violation) ++violations;
      worst = std::max(worst, h.p_hat - h.pinsker_bound - 3.0 * h.std_err);
    }
  return {worst, violations == 0,
          std::to_string(violations) + " violations of " + std::to_string(total) +
              "; value is max p_hat - bound - 3 se"};
}

Outcome check_counting(Context& ctx, double) {
  std::size_t violations = 0, total = 0;
  double worst = -std::numeric_limits<double>::infinity();
  for (const RunLog& log : ctx.cache.get_runs())
    for (const FreeRiderReport& f : log.final.free_riders) {
      ++total;
      if (f.violation) ++violations;
      worst = std::max(worst, static_cast<double>(f.fr_set.size()) - f.counting_bound);
    }
  return {worst, violations == 0,
          std::to_string(violations) + " violations of " + std::to_string(total) +
              "; value is max |FR| - bound"};
}

Outcome check_telescoping(Context& ctx, double tol) {
  double worst = 0.0;
  for (const RunLog& log : ctx.cache.get_runs())
    for (const FreeRiderReport& f : log.final.free_riders)
      worst = std::max(worst, f.telescoping_residual);
  return below(worst, tol, "max |sum a_i - TC| over trained runs");
}

Outcome check_clipping(Context& ctx, double tol) {
  // A bound small enough to bind, checked after each of several single steps.
  Config cfg = ctx.cache.cfg;
  cfg.model.b_clip = 0.5;
  cfg.train.steps = 1;
  cfg.train.lr = 0.5;
  const TrainSetup setup = make_setup(cfg);
  const Task& task = ctx.cache.get_task();
  Rng init = make_stream(ctx.options.seed, "verify.clip");
  Params params = init_params(cfg.model, init);
  double worst = -std::numeric_limits<double>::infinity();
  for (std::uint64_t s = 0; s < 10; ++s) {
    params = train_from(setup, task, s + 1, params).final_params;
    for (const HeadParams& h : params.heads)
      worst = std::max(worst, frobenius_norm(h.wo) - cfg.model.b_clip);
  }
  return {worst, worst <= tol, "max ||W_O^(i)||_F - B_clip after each of 10 steps"};
}

Outcome check_determinism(Context& ctx, double) {
  const TrainSetup setup = make_setup(ctx.cache.cfg);
  const RunLog again = train(setup, ctx.cache.get_task(), 1);
  const RunLog& first = ctx.cache.get_runs().front();
  std::ostringstream a, b;
  write_metrics_csv(a, first.rows);
  write_metrics_csv(b, again.rows);
  const bool same = a.str() == b.str() && snapshots_to_json(first) == snapshots_to_json(again) &&
                    report_to_json(first) == report_to_json(again);
  return {same ? 0.0 : 1.0, same, "metrics, snapshots and report byte-identical on replay"};
}

Outcome check_tc_pairwise(Context& ctx, double tol) {
  // With d_h = 1 and H = 2 both estimators measure the same mutual
  // information; for larger H any single pair's information is a lower bound.
  Rng rng = make_stream(ctx.options.seed, "verify.tc");
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t h : {2, 3, 4}) {
    for (int s = 0; s < 3; ++s) {
      const Matrix a = gaussian_matrix(rng, h, h);
      const Matrix l = a;  // x = z a^T has covariance a a^T
      const Matrix x = matmul_nt(gaussian_matrix(rng, 10000, h), l);
      std::vector<Matrix> heads;
      for (std::size_t i = 0; i < h; ++i) heads.push_back(slice_cols(x, i, 1));
      const double full = tc_gaussian_full(heads).value;
      const Matrix corr = correlation(x);
      double max_pair = 0.0;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = i + 1; j < h; ++j) {
          Matrix two = Matrix::identity(h);
          two(i, j) = two(j, i) = corr(i, j);
          max_pair = std::max(max_pair, tc_pairwise_from_g(two));
        }
      worst = std::max(worst, max_pair - full);
      if (h == 2) worst = std::max(worst, std::abs(tc_pairwise_from_g(corr) - full));
    }
  }
  return {worst, worst <= tol, "max pairwise information minus full TC, N = 10^4, d_h = 1"};
}

double brute_force_mw_p(std::span<const double> x, std::span<const double> y) {
  std::vector<double> pooled(x.begin(), x.end());
  pooled.insert(pooled.end(), y.begin(), y.end());
  const std::size_t n = pooled.size(), n1 = x.size();
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0.0, equal = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (pooled[j] < pooled[i]) less += 1.0;
      if (pooled[j] == pooled[i]) equal += 1.0;
    }
    ranks[i] = less + (equal + 1.0) / 2.0;
  }
  const double center = static_cast<double>(n1 * y.size()) / 2.0;
  const double offset = static_cast<double>(n1 * (n1 + 1)) / 2.0;
  double observed = 0.0;
  for (std::size_t i = 0; i < n1; ++i) observed += ranks[i];
  observed = std::abs(observed - offset - center);
  std::size_t hits = 0, count = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != n1) continue;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) sum += ranks[i];
    ++count;
    if (std::abs(sum - offset - center) >= observed - 1e-9) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(count);
}

Outcome check_mann_whitney(Context& ctx, double tol) {
  Rng rng = make_stream(ctx.options.seed, "verify.mann_whitney");
  std::uniform_int_distribution<int> value(0, 5);
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t n1 = 1; n1 < 10; ++n1)
    for (std::size_t n2 = 1; n1 + n2 <= 10; ++n2)
      for (int rep = 0; rep < 3; ++rep) {
        std::vector<double> x(n1), y(n2);
        for (double& v : x) v = value(rng);
        for (double& v : y) v = value(rng) + (rep == 2 ? 0.5 : 0.0);
        const MannWhitneyResult r = mann_whitney(x, y);
        worst = std::max(worst, r.exact ? std::abs(r.p_value - brute_force_mw_p(x, y)) : 1.0);
        ++cases;
      }
  return below(worst, tol, "max |p_exact - p_enumerated| over " + std::to_string(cases) +
                               " splits with n1 + n2 <= 10");
}

struct PlantedBlocks {
  Matrix g;
  std::vector<std::size_t> labels;
};

PlantedBlocks planted_blocks(std::uint64_t seed, double noise) {
  Rng rng = make_stream(seed, "planted_blocks");
  PlantedBlocks p;
  p.labels.resize(16);
  for (std::size_t i = 0; i < 16; ++i) p.labels[i] = i / 4;
  std::shuffle(p.labels.begin(), p.labels.end(), rng);
  std::normal_distribution<double> eps(0.0, noise);
  p.g = Matrix::identity(16);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = i + 1; j < 16; ++j)
      p.g(i, j) = p.g(j, i) = (p.labels[i] == p.labels[j] ? 0.6 : 0.0) + eps(rng);
  return p;
}

Outcome check_bicluster(Context& ctx, double tol) {
  double worst = 1.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const PlantedBlocks p = planted_blocks(ctx.options.seed * 100 + s, 0.05);
    const CoalitionPartition part = spectral_bicluster(p.g, {0, s, 8});
    worst = std::min(worst, adjusted_rand_index(part.labels, p.labels));
  }
  return {worst, worst >= tol, "min ARI over 10 planted 4-block 16x16 matrices, noise 0.05"};
}

Outcome check_curve_fit(Context&, double tol) {
  std::vector<CurvePoint> pts;
  for (int k = 0; k < 25; ++k) {
    const double g = 0.1 + 0.12 * k;
    pts.push_back({g, 0.5 - 0.3 / (1.0 - 0.2 * g)});
  }
  FitOptions opt;
  opt.n_boot = 0;
  const FitResult fit = fit_poa_curve(pts, opt);
  const double err =
      std::max({std::abs(fit.a - 0.5), std::abs(fit.lambda - 0.3), std::abs(fit.c - 0.2)});
  bool monotone = true;
  for (std::size_t k = 1; k < fit.sse_history.size(); ++k)
    monotone = monotone && fit.sse_history[k] <= fit.sse_history[k - 1];
  return {err, err < tol && monotone && !fit.rejected,
          std::string("max parameter error on the planted noiseless curve; SSE history ") +
              (monotone ? "non-increasing" : "increasing")};
}

const std::vector<CheckDef>& registry() {
  static const std::vector<CheckDef> defs = {
      {{"sym_eig", 1e-10, "eigendecomposition reconstruction and orthonormality"}, check_sym_eig},
      {{"grad_ce", 1e-4, "cross-entropy gradient vs central differences"},
       [](Context& c, double t) { return check_gradient_kind(c, t, LossKind::kCe); }},
      {{"grad_ldb", 1e-4, "log-determinant barrier gradient vs central differences"},
       [](Context& c, double t) { return check_gradient_kind(c, t, LossKind::kLdb); }},
      {{"grad_abt", 1e-4, "adaptive Barlow Twins gradient vs central differences"},
       [](Context& c, double t) { return check_gradient_kind(c, t, LossKind::kAbt); }},
      {{"potential_identity", 1e-8, "private cost gradients equal share times potential gradient"},
       check_potential},
      {{"schur_psd", 1e-10, "G is PSD for Gram-derived couplings"}, check_schur_psd},
      {{"gamma_identity", 1e-10, "Gamma^2 equals twice the summed squared couplings"},
       check_gamma_identity},
      {{"nash_fixed_point", 1e-8, "bargaining weights solve M a = 1/a"}, check_nash},
      {{"nash_closed_form", 1e-10, "bargaining weights for K=1 and orthogonal K=2"},
       check_nash_closed_form},
      {{"schedule_endpoints", 0.0, "regularizer schedule is zero at both ends"}, check_schedule},
      {{"tc_pairwise_bound", 0.05, "pairwise information never exceeds full TC"}, check_tc_pairwise},
      {{"mann_whitney_exact", 1e-12, "exact Mann-Whitney p matches enumeration"}, check_mann_whitney},
      {{"bicluster_planted", 0.9, "spectral biclustering recovers planted blocks (min ARI)"},
       check_bicluster},
      {{"curve_fit_planted", 1e-3, "curve fit recovers planted parameters"}, check_curve_fit},
      {{"run_schedule_endpoints", 0.0, "trained runs log zero lambda at both ends"},
       check_run_schedule},
      {{"pinsker_chain", 0.0, "hallucination rate within the Pinsker bound on trained runs"},
       check_pinsker},
      {{"counting_bound", 0.0, "free-rider count within the counting bound on trained runs"},
       check_counting},
      {{"telescoping", 1e-8, "chain-rule increments sum to TC"}, check_telescoping},
      {{"norm_clipping", 0.0, "output blocks within B_clip after every step"}, check_clipping},
      {{"determinism", 0.0, "identical seeds give byte-identical run files"}, check_determinism},
  };
  return defs;
}

}  // namespace

std::vector<CheckInfo> list_checks() {
  std::vector<CheckInfo> out;
  for (const CheckDef& d : registry()) out.push_back(d.info);
  return out;
}

VerifyReport run_checks(const VerifyOptions& options) {
  const auto& defs = registry();
  auto known = [&](const std::string& name) {
    return std::any_of(defs.begin(), defs.end(),
                       [&](const CheckDef& d) { return d.info.name == name; });
  };
  for (const std::string& n : options.only) require(known(n), "verify: unknown check '" + n + "'");
  for (const auto& [n, v] : options.tolerances) {
    require(known(n), "verify: unknown check '" + n + "'");
    require(std::isfinite(v), "verify: tolerance for '" + n + "' must be finite");
  }

  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  Context ctx{options, {}};
  VerifyReport report;
  for (const CheckDef& d : defs) {
    if (!options.only.empty() &&
        std::find(options.only.begin(), options.only.end(), d.info.name) == options.only.end())
      continue;
    const auto it = options.tolerances.find(d.info.name);
    const double tol = it == options.tolerances.end() ? d.info.tolerance : it->second;
    const auto t0 = clock::now();
    CheckResult r;
    r.name = d.info.name;
    r.tolerance = tol;
    try {
      const Outcome o = d.fn(ctx, tol);
      r.value = o.value;
      r.passed = o.passed;
      r.detail = o.detail;
    } catch (const std::exception& e) {
      r.passed = false;
      r.value = std::numeric_limits<double>::quiet_NaN();
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    report.results.push_back(std::move(r));
  }
  report.seconds = std::chrono::duration<double>(clock::now() - start).count();
  return report;
}

}  // namespace headgame
