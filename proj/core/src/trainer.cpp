#include "headgame/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "headgame/arbitration.hpp"
#include "headgame/interaction.hpp"
#include "headgame/rng.hpp"

namespace headgame {

void TaskConfig::validate() const {
  require(classes >= 2, "task.classes must be >= 2");
  require(input_dim >= 1, "task.input_dim must be >= 1");
  require(n_train >= 1 && n_eval >= 1, "task.n_train and task.n_eval must be >= 1");
  require(pe_scale >= 0.0, "task.pe_scale must be >= 0");
  if (!priors.empty()) {
    require(priors.size() == classes, "task.priors must have one entry per class");
    double total = 0.0;
    for (double p : priors) {
      require(p > 0.0, "task.priors entries must be positive");
      total += p;
    }
    require(std::abs(total - 1.0) <= 1e-9, "task.priors must sum to 1");
  }
  if (means.empty()) {
    require(components >= 1, "task.components must be >= 1");
    require(mean_std >= 0.0, "task.mean_std must be >= 0");
    require(var_min > 0.0 && var_max >= var_min, "task: need 0 < var_min <= var_max");
    require(covariances.empty(), "task.covariances given without task.means");
    return;
  }
  require(means.size() == classes, "task.means must have one entry per class");
  require(covariances.empty() || covariances.size() == classes,
          "task.covariances must have one entry per class");
  for (std::size_t c = 0; c < classes; ++c) {
    require(!means[c].empty(), "task.means: every class needs a component");
    for (const auto& m : means[c]) require(m.size() == input_dim, "task.means: wrong dimension");
    if (covariances.empty()) continue;
    require(covariances[c].size() == means[c].size(),
            "task.covariances: one covariance per component");
    for (const auto& s : covariances[c])
      require(s.size() == input_dim * input_dim, "task.covariances: wrong size");
  }
}

void TrainConfig::validate() const {
  require(steps >= 1, "train.steps must be >= 1");
  require(lr >= 0.0, "train.lr must be >= 0");
  require(snapshot_every >= 1, "train.snapshot_every must be >= 1");
  require(equilibrium_tol > 0.0, "train.equilibrium_tol must be > 0");
  require(equilibrium_window >= 1, "train.equilibrium_window must be >= 1");
  for (double d : deltas) require(d > 0.0 && d <= 1.0, "train.deltas must lie in (0, 1]");
  for (double t : taus) require(t > 0.0, "train.taus must be > 0");
}

const char* to_string(TrainMode m) { return m == TrainMode::kGame ? "game" : "baseline_ce"; }

TrainMode parse_train_mode(const std::string& s) {
  if (s == "game") return TrainMode::kGame;
  if (s == "baseline_ce") return TrainMode::kBaselineCe;
  throw ValidationError("unknown train mode '" + s + "' (expected baseline_ce or game)");
}

// --- task -------------------------------------------------------------------------

std::string Dataset::fingerprint() const {
  return headgame::fingerprint(headgame::fingerprint(inputs.data()) +
                               headgame::fingerprint(oracle.data()));
}

Batch Dataset::batch(std::span<const std::size_t> indices) const {
  Batch b{Matrix(indices.size() * seq_len, inputs.cols()), Matrix(indices.size(), targets.cols())};
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t s = indices[k];
    require(s < size(), "Dataset::batch: index out of range");
    for (std::size_t t = 0; t < seq_len; ++t) {
      const auto src = inputs.row(s * seq_len + t);
      std::copy(src.begin(), src.end(), b.inputs.row(k * seq_len + t).begin());
    }
    const auto y = targets.row(s);
    std::copy(y.begin(), y.end(), b.targets.row(k).begin());
  }
  return b;
}

Batch Dataset::all() const { return {inputs, targets}; }

Matrix Task::positional() const {
  const std::size_t d = cfg.input_dim;
  Matrix pe(seq_len, d);
  for (std::size_t t = 0; t < seq_len; ++t)
    for (std::size_t k = 0; k < d; ++k) {
      const double freq = std::pow(10000.0, -static_cast<double>(k - k % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(t) * freq;
      pe(t, k) = cfg.pe_scale * (k % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

Matrix Task::posterior(const Matrix& raw) const {
  require(raw.cols() == cfg.input_dim && raw.rows() % seq_len == 0,
          "Task::posterior: token matrix has the wrong shape");
  const std::size_t n = raw.rows() / seq_len;
  const std::size_t d = cfg.input_dim;
  Matrix logp(n, cfg.classes);
  std::vector<double> diff(d), comp_ll;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    const auto& comps = mixture[c];
    comp_ll.resize(comps.size());
    for (std::size_t r = 0; r < raw.rows(); ++r) {
      for (std::size_t m = 0; m < comps.size(); ++m) {
        const MixtureComponent& mc = comps[m];
        double quad = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          double s = raw(r, i) - mc.mean(0, i);
          for (std::size_t j = 0; j < i; ++j) s -= mc.chol(i, j) * diff[j];
          diff[i] = s / mc.chol(i, i);
          quad += diff[i] * diff[i];
        }
        comp_ll[m] = mc.log_weight + mc.log_norm - 0.5 * quad;
      }
      const double mx = *std::max_element(comp_ll.begin(), comp_ll.end());
      double s = 0.0;
      for (double v : comp_ll) s += std::exp(v - mx);
      logp(r / seq_len, c) += mx + std::log(s);
    }
    for (std::size_t k = 0; k < n; ++k) logp(k, c) += log_priors[c];
  }
  return softmax_rows(logp);
}

double Task::mean_entropy(const Dataset& d) {
  double h = 0.0;
  for (std::size_t r = 0; r < d.oracle.rows(); ++r)
    for (double p : d.oracle.row(r))
      if (p > 0.0) h -= p * std::log(p);
  return h / static_cast<double>(d.oracle.rows());
}

namespace {

std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x = u(rng);
  for (std::size_t k = 0; k < probs.size(); ++k) {
    x -= probs[k];
    if (x < 0.0) return k;
  }
  return probs.size() - 1;
}

MixtureComponent make_component(std::span<const double> mean, const Matrix& cov, double weight) {
  MixtureComponent mc;
  mc.mean = Matrix::row_vector(mean);
  try {
    mc.chol = cholesky(cov);
  } catch (const ValidationError&) {
    throw ValidationError("make_task: singular or indefinite component covariance");
  }
  double logdet = 0.0;
  for (std::size_t i = 0; i < cov.rows(); ++i) logdet += 2.0 * std::log(mc.chol(i, i));
  const double two_pi = 2.0 * std::acos(-1.0);
  mc.log_norm = -0.5 * (logdet + static_cast<double>(cov.rows()) * std::log(two_pi));
  mc.log_weight = std::log(weight);
  return mc;
}

}  // namespace

Dataset sample_dataset(const Task& task, std::size_t n, Rng& rng) {
  const std::size_t d = task.cfg.input_dim;
  const std::size_t t_len = task.seq_len;
  std::vector<double> priors;
  for (double lp : task.log_priors) priors.push_back(std::exp(lp));
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix raw(n * t_len, d);
  std::vector<double> z(d), weights;
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t cls = sample_categorical(priors, rng);
    const auto& comps = task.mixture[cls];
    weights.clear();
    for (const MixtureComponent& mc : comps) weights.push_back(std::exp(mc.log_weight));
    for (std::size_t t = 0; t < t_len; ++t) {
      const MixtureComponent& mc = comps[sample_categorical(weights, rng)];
      for (double& v : z) v = normal(rng);
      auto row = raw.row(s * t_len + t);
      for (std::size_t i = 0; i < d; ++i) {
        double v = mc.mean(0, i);
        for (std::size_t j = 0; j <= i; ++j) v += mc.chol(i, j) * z[j];
        row[i] = v;
      }
    }
  }

  Dataset ds;
  ds.seq_len = t_len;
  ds.oracle = task.posterior(raw);
  ds.targets = Matrix(n, task.cfg.classes);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t y = sample_categorical(ds.oracle.row(s), rng);
    ds.labels.push_back(static_cast<int>(y));
    ds.targets(s, y) = 1.0;
  }
  const Matrix pe = task.positional();
  for (std::size_t r = 0; r < raw.rows(); ++r)
    for (std::size_t i = 0; i < d; ++i) raw(r, i) += pe(r % t_len, i);
  ds.inputs = std::move(raw);
  return ds;
}

Task make_task(const TaskConfig& cfg, std::size_t seq_len, std::uint64_t data_seed) {
  cfg.validate();
  require(seq_len >= 1, "make_task: seq_len must be >= 1");
  Task task;
  task.cfg = cfg;
  task.seq_len = seq_len;
  const std::size_t d = cfg.input_dim;
  for (std::size_t c = 0; c < cfg.classes; ++c)
    task.log_priors.push_back(
        std::log(cfg.priors.empty() ? 1.0 / static_cast<double>(cfg.classes) : cfg.priors[c]));

  if (cfg.means.empty()) {
    Rng rng = make_stream(cfg.seed, "task");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> var(cfg.var_min, cfg.var_max);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      task.mixture.emplace_back();
      for (std::size_t m = 0; m < cfg.components; ++m) {
        std::vector<double> mean(d);
        for (double& v : mean) v = cfg.mean_std * normal(rng);
        Matrix cov(d, d);
        for (std::size_t i = 0; i < d; ++i) cov(i, i) = var(rng);
        task.mixture.back().push_back(
            make_component(mean, cov, 1.0 / static_cast<double>(cfg.components)));
      }
    }
  } else {
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      task.mixture.emplace_back();
      const std::size_t k = cfg.means[c].size();
      for (std::size_t m = 0; m < k; ++m) {
        const Matrix cov = cfg.covariances.empty()
                               ? Matrix::identity(d)
                               : Matrix(d, d, cfg.covariances[c][m]);
        require(is_symmetric(cov, 1e-12), "make_task: component covariance must be symmetric");
        task.mixture.back().push_back(
            make_component(cfg.means[c][m], cov, 1.0 / static_cast<double>(k)));
      }
    }
  }

  Rng data = make_stream(data_seed, "data");
  task.train = sample_dataset(task, cfg.n_train, data);
  task.eval = sample_dataset(task, cfg.n_eval, data);
  return task;
}

// --- training ---------------------------------------------------------------------

TrainingAborted::TrainingAborted(std::size_t step, Params last_good, const std::string& what)
    : NumericError("training aborted at step " + std::to_string(step) + ": " + what),
      step_(step),
      last_good_(std::move(last_good)) {}

namespace {

void validate_setup(const TrainSetup& setup, const Task& task) {
  setup.model.validate();
  setup.losses.validate();
  setup.game.validate(setup.model.heads);
  setup.train.validate();
  require(task.cfg.input_dim == setup.model.d_model(),
          "task.input_dim must equal model.heads * model.head_dim");
  require(task.cfg.classes == setup.model.classes, "task.classes must equal model.classes");
  require(task.seq_len == setup.model.seq_len, "task sequence length differs from model.seq_len");
}

std::vector<double> flat_grad(const ag::Tape& tape, const std::vector<ag::Var>& leaves,
                              std::size_t count) {
  std::vector<double> g;
  g.reserve(count);
  for (const ag::Var& v : leaves) {
    const Matrix m = tape.grad(v);
    g.insert(g.end(), m.data().begin(), m.data().end());
  }
  return g;
}

// Cyclic pass over shuffled training sequences.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::size_t batch, Rng rng) : order_(n), batch_(batch), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  Rng rng_;
  std::size_t pos_ = 0;
};

Snapshot take_snapshot(std::size_t step, const Params& params, const ModelConfig& model,
                       const Dataset& eval) {
  const HeadOutputs out = forward(params, eval.inputs, model, &eval.oracle);
  const InteractionMatrix im = compute_interaction(params, out);
  const std::vector<double> e = tv_deviation(softmax_rows(out.logits), eval.oracle);
  const auto hits = std::count_if(e.begin(), e.end(), [](double x) { return x >= 0.2; });
  return {step, im.g, im.gamma, static_cast<double>(hits) / static_cast<double>(e.size())};
}

}  // namespace

FinalReport evaluate_state(const Params& params, const TrainSetup& setup, const Task& task,
                           std::uint64_t seed) {
  Rng noise = make_stream(seed, "noise");
  const Measurement m =
      measure(params, setup.model, task.eval.inputs, task.eval.oracle, setup.game, noise);
  FinalReport r;
  r.social = social_objective(m, setup.game);
  for (double delta : setup.train.deltas)
    r.hallucination.push_back(hallucination_report(m.probs, m.oracle, delta, r.social.c_ib));
  for (double tau : setup.train.taus)
    r.free_riders.push_back(free_rider_report(m.noisy_heads, setup.game, tau, r.social.c_ib));
  r.charges = externality_charges(m, setup.game);
  r.g = m.g;
  r.gamma = m.gamma;
  r.eval_ce = ce_loss(m.probs, task.eval.targets).value;
  return r;
}

RunLog train(const TrainSetup& setup, const Task& task, std::uint64_t seed) {
  setup.model.validate();
  Rng init = make_stream(seed, "init");
  return train_from(setup, task, seed, init_params(setup.model, init));
}

RunLog train_from(const TrainSetup& setup, const Task& task, std::uint64_t seed, Params params) {
  validate_setup(setup, task);
  const ModelConfig& model = setup.model;
  const LossConfig& losses = setup.losses;
  const TrainConfig& tc = setup.train;
  const bool game = tc.mode == TrainMode::kGame;
  const std::vector<double> pi = setup.game.shares(model.heads);
  const std::size_t n_params = params.parameter_count();

  RunLog log;
  log.mode = tc.mode;
  log.seed = seed;
  log.config_fingerprint = setup.config_fingerprint;
  log.eval_fingerprint = task.eval.fingerprint();

  BatchStream batches(task.train.size(), model.batch_size, make_stream(seed, "batches"));
  EmaState ema{losses.ema_init, 0};
  std::size_t below_tol = 0;
  // The last step maps to the end of the schedule, where lambda is 0.
  const std::size_t horizon = std::max<std::size_t>(tc.steps - 1, 1);

  for (std::size_t step = 0; step < tc.steps; ++step) {
    if (step % tc.snapshot_every == 0 || step + 1 == tc.steps)
      log.snapshots.push_back(take_snapshot(step, params, model, task.eval));

    const std::vector<std::size_t> idx = batches.next();
    const Batch batch = task.train.batch(idx);
    MetricsRow row;
    row.step = step;
    std::vector<double> direction;
    try {
      ag::Tape tape;
      const ParamVars pv = bind_params(tape, params, true);
      const std::vector<ag::Var> leaves = pv.to_list();
      const ForwardVars fv = build_forward(tape, pv, tape.constant(batch.inputs), model);
      const ag::Var ce = ag::softmax_cross_entropy(fv.logits, batch.targets);
      const ag::Var phi = taped_phi(ce, pv, pi, setup.game.alpha_wd);
      const ag::Var g = taped_interaction(pv, fv.logits, batch.targets);
      const Matrix g_value = g.value();
      const ag::Var ldb = taped_ldb(g, losses.eps_ldb);
      const ag::Var abt = taped_abt(fv.heads, g_value, losses);

      row.ce = ce.scalar();
      row.gamma = frobenius_norm(g_value - Matrix::identity(model.heads));
      row.ldb_raw = ldb.scalar();
      row.abt_raw = abt.scalar();
      row.abt_normalized = ema_normalize(row.abt_raw, ema, losses);

      tape.backward(phi);
      std::vector<double> g_ce = flat_grad(tape, leaves, n_params);
      if (!game) {
        row.alpha_ce = 1.0;
        direction = std::move(g_ce);
      } else {
        row.lambda_ldb_t = schedule_lambda(step, horizon, losses.lambda_ldb, losses);
        row.lambda_abt_t = schedule_lambda(step, horizon, losses.lambda_abt, losses);
        const double abt_scale = losses.ema_target / ema.ema;
        GradientSet gs;
        gs.names = {"ce", "ldb", "abt"};
        gs.gradients.push_back(std::move(g_ce));
        if (row.lambda_ldb_t > 0.0) {
          tape.backward(ldb);
          gs.gradients.push_back(flat_grad(tape, leaves, n_params));
        } else {
          gs.gradients.emplace_back(n_params, 0.0);
        }
        if (row.lambda_abt_t > 0.0 && row.abt_raw > 0.0) {
          tape.backward(abt);
          std::vector<double> ga = flat_grad(tape, leaves, n_params);
          for (double& v : ga) v *= abt_scale;
          gs.gradients.push_back(std::move(ga));
        } else {
          gs.gradients.emplace_back(n_params, 0.0);
        }
        const double fallback[] = {1.0, row.lambda_ldb_t, row.lambda_abt_t};
        const NashResult nash = nash_weights(gs, fallback);
        row.alpha_ce = nash.alpha[0];
        row.alpha_ldb = nash.alpha[1];
        row.alpha_abt = nash.alpha[2];
        row.arb_fallback = nash.fallback;
        direction = combine(gs, nash.alpha);
      }
    } catch (const NumericError& e) {
      throw TrainingAborted(step, params, e.what());
    }
    row.grad_norm = norm(direction);
    if (!std::isfinite(row.grad_norm))
      throw TrainingAborted(step, params, "non-finite update direction");

    if (tc.lr != 0.0) {
      std::vector<double> flat = params.flatten();
      for (std::size_t k = 0; k < flat.size(); ++k) flat[k] -= tc.lr * direction[k];
      params.unflatten(flat);
      clip_output_blocks(params, model.b_clip);
    }
    log.rows.push_back(row);
    log.steps_run = step + 1;

    below_tol = row.grad_norm < tc.equilibrium_tol ? below_tol + 1 : 0;
    if (below_tol >= tc.equilibrium_window && !log.equilibrium_step) {
      log.equilibrium_step = step;
      if (tc.stop_at_equilibrium) break;
    }
  }

  log.final = evaluate_state(params, setup, task, seed);
  log.final_params = std::move(params);
  return log;
}

// --- comparisons ----------------------------------------------------------------

RunComparison compare_runs(const RunLog& baseline, const RunLog& game) {
  require(baseline.eval_fingerprint == game.eval_fingerprint,
          "compare_runs: runs were evaluated on different eval sets");
  const FinalReport& b = baseline.final;
  const FinalReport& g = game.final;
  require(b.hallucination.size() == g.hallucination.size() &&
              b.free_riders.size() == g.free_riders.size(),
          "compare_runs: runs used different threshold grids");
  RunComparison c;
  c.gamma_delta = b.gamma - g.gamma;
  c.c_ib_delta = b.social.c_ib - g.social.c_ib;
  c.eval_ce_delta = b.eval_ce - g.eval_ce;
  for (std::size_t k = 0; k < b.hallucination.size(); ++k) {
    require(b.hallucination[k].delta == g.hallucination[k].delta,
            "compare_runs: runs used different delta grids");
    c.deltas.push_back(b.hallucination[k].delta);
    c.p_hat_delta.push_back(b.hallucination[k].p_hat - g.hallucination[k].p_hat);
  }
  for (std::size_t k = 0; k < b.free_riders.size(); ++k) {
    require(b.free_riders[k].tau == g.free_riders[k].tau,
            "compare_runs: runs used different tau grids");
    c.taus.push_back(b.free_riders[k].tau);
    c.fr_count_delta.push_back(static_cast<double>(b.free_riders[k].fr_set.size()) -
                               static_cast<double>(g.free_riders[k].fr_set.size()));
  }
  return c;
}

SignTest sign_test(std::span<const double> deltas) {
  SignTest s;
  for (double d : deltas) {
    if (d > 0.0)
      ++s.positive;
    else if (d < 0.0)
      ++s.negative;
    else
      ++s.ties;
  }
  const std::size_t n = s.positive + s.negative;
  if (n == 0) return s;
  const std::size_t k = std::min(s.positive, s.negative);
  // log-space binomial tail, sum_{i <= k} C(n, i) / 2^n
  double tail = 0.0;
  for (std::size_t i = 0; i <= k; ++i)
    tail += std::exp(std::lgamma(static_cast<double>(n) + 1.0) -
                     std::lgamma(static_cast<double>(i) + 1.0) -
                     std::lgamma(static_cast<double>(n - i) + 1.0) -
                     static_cast<double>(n) * std::log(2.0));
  s.p_value = std::min(1.0, 2.0 * tail);
  return s;
}

}  // namespace headgame
