#include "headgame/game.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "headgame/errors.hpp"
#include "headgame/interaction.hpp"
#include "headgame/losses.hpp"

namespace headgame {

std::vector<double> GameSpec::shares(std::size_t heads) const {
  if (pi.empty()) return std::vector<double>(heads, 1.0 / static_cast<double>(heads));
  return pi;
}

void GameSpec::validate(std::size_t heads) const {
  require(alpha_wd >= 0.0, "game.alpha_wd must be >= 0");
  require(beta_r >= 0.0, "game.beta_r must be >= 0");
  require(beta_c >= 0.0, "game.beta_c must be >= 0");
  require(sigma_z > 0.0, "game.sigma_z must be > 0");
  if (pi.empty()) return;
  require(pi.size() == heads, "game.pi must have one share per head");
  double total = 0.0;
  for (double p : pi) {
    require(p > 0.0, "game.pi entries must be positive");
    total += p;
  }
  require(std::abs(total - 1.0) <= 1e-12, "game.pi must sum to 1");
}

namespace {

double model_ce(const Params& params, const ModelConfig& cfg, const Batch& batch) {
  const HeadOutputs out = forward(params, batch.inputs, cfg);
  return ce_loss(softmax_rows(out.logits), batch.targets).value;
}

}  // namespace

double private_cost_ce(std::size_t head, const Params& params, const ModelConfig& cfg,
                       const Batch& batch, const GameSpec& spec) {
  require(head < params.heads.size(), "private_cost_ce: head index out of range");
  spec.validate(params.heads.size());
  const double pi = spec.shares(params.heads.size())[head];
  return pi * model_ce(params, cfg, batch) + 0.5 * spec.alpha_wd * params.head_norm_sq(head);
}

double potential_phi(const Params& params, const ModelConfig& cfg, const Batch& batch,
                     const GameSpec& spec) {
  spec.validate(params.heads.size());
  const std::vector<double> pi = spec.shares(params.heads.size());
  double decay = 0.0;
  for (std::size_t i = 0; i < params.heads.size(); ++i) decay += params.head_norm_sq(i) / pi[i];
  return model_ce(params, cfg, batch) + 0.5 * spec.alpha_wd * decay;
}

ag::Var taped_head_norm_sq(const HeadVars& head) {
  return ag::add(ag::add(ag::frobenius_sq(head.wq), ag::frobenius_sq(head.wk)),
                 ag::add(ag::frobenius_sq(head.wv), ag::frobenius_sq(head.wo)));
}

ag::Var taped_phi(ag::Var ce, const ParamVars& params, std::span<const double> pi,
                  double alpha_wd) {
  require(pi.size() == params.heads.size(), "taped_phi: share count mismatch");
  if (alpha_wd == 0.0) return ce;
  ag::Var decay = ag::scale(taped_head_norm_sq(params.heads[0]), 1.0 / pi[0]);
  for (std::size_t i = 1; i < params.heads.size(); ++i)
    decay = ag::add(decay, ag::scale(taped_head_norm_sq(params.heads[i]), 1.0 / pi[i]));
  return ag::add(ce, ag::scale(decay, 0.5 * alpha_wd));
}

PotentialCheck verify_potential_identity(const Params& params, const ModelConfig& cfg,
                                         const Batch& batch, const GameSpec& spec) {
  const std::size_t h = params.heads.size();
  spec.validate(h);
  const std::vector<double> pi = spec.shares(h);
  ag::Tape tape;
  const ParamVars pv = bind_params(tape, params, true);
  const ForwardVars fv = build_forward(tape, pv, tape.constant(batch.inputs), cfg);
  const ag::Var ce = ag::softmax_cross_entropy(fv.logits, batch.targets);
  const ag::Var phi = taped_phi(ce, pv, pi, spec.alpha_wd);

  auto head_grad = [&](std::size_t i) {
    std::vector<double> flat;
    for (const ag::Var& v : {pv.heads[i].wq, pv.heads[i].wk, pv.heads[i].wv, pv.heads[i].wo}) {
      const Matrix g = tape.grad(v);
      flat.insert(flat.end(), g.data().begin(), g.data().end());
    }
    return flat;
  };

  tape.backward(phi);
  std::vector<std::vector<double>> phi_grads;
  for (std::size_t i = 0; i < h; ++i) phi_grads.push_back(head_grad(i));

  PotentialCheck out;
  for (std::size_t i = 0; i < h; ++i) {
    const ag::Var cost = ag::add(ag::scale(ce, pi[i]),
                                 ag::scale(taped_head_norm_sq(pv.heads[i]), 0.5 * spec.alpha_wd));
    tape.backward(cost);
    const std::vector<double> gc = head_grad(i);
    double diff = 0.0, ref = 0.0;
    for (std::size_t k = 0; k < gc.size(); ++k) {
      const double rhs = pi[i] * phi_grads[i][k];
      diff += (gc[k] - rhs) * (gc[k] - rhs);
      ref += rhs * rhs;
    }
    const double r = std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
    out.per_head.push_back(r);
    out.max_residual = std::max(out.max_residual, r);
  }
  return out;
}

double gaussian_mutual_info_zx(const Matrix& o, double sigma_z) {
  require(sigma_z > 0.0, "gaussian_mutual_info_zx: sigma_z must be > 0");
  require(o.rows() > o.cols(), "gaussian_mutual_info_zx: need N > d_h");
  Matrix snr = covariance(o);
  snr *= 1.0 / (sigma_z * sigma_z);
  double total = 0.0;
  for (double lambda : sym_eig(symmetrize(snr)).eigenvalues) total += std::log1p(std::max(lambda, 0.0));
  return 0.5 * total;
}

namespace {

struct ClampedLogdet {
  double value = 0.0;
  bool clamped = false;
};

ClampedLogdet clamped_logdet(const Matrix& m) {
  ClampedLogdet out;
  for (double lambda : sym_eig(m).eigenvalues) {
    if (lambda < kTcClamp) out.clamped = true;
    out.value += std::log(std::max(lambda + kTcClamp, kTcClamp));
  }
  return out;
}

Matrix principal_blocks(const Matrix& corr, std::size_t head_dim,
                        std::span<const std::size_t> heads) {
  const std::size_t n = heads.size() * head_dim;
  Matrix out(n, n);
  for (std::size_t a = 0; a < heads.size(); ++a)
    for (std::size_t b = 0; b < heads.size(); ++b)
      for (std::size_t p = 0; p < head_dim; ++p)
        for (std::size_t q = 0; q < head_dim; ++q)
          out(a * head_dim + p, b * head_dim + q) =
              corr(heads[a] * head_dim + p, heads[b] * head_dim + q);
  return out;
}

TcEstimate tc_subset(const Matrix& corr, std::size_t head_dim, std::span<const std::size_t> heads) {
  if (heads.size() <= 1) return {};
  const ClampedLogdet joint = clamped_logdet(principal_blocks(corr, head_dim, heads));
  TcEstimate out{-0.5 * joint.value, joint.clamped};
  for (std::size_t h : heads) {
    const std::size_t one[] = {h};
    out.value += 0.5 * clamped_logdet(principal_blocks(corr, head_dim, one)).value;
  }
  return out;
}

std::vector<std::size_t> range(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

Matrix stacked_correlation(std::span<const Matrix> head_outputs) {
  require(!head_outputs.empty(), "tc_estimate: no heads");
  const Matrix x = hstack(head_outputs);
  require(x.rows() > x.cols(), "tc_estimate: gaussian_full needs N > H d_h");
  return correlation(x);
}

}  // namespace

TcEstimate tc_from_correlation(const Matrix& corr, std::size_t head_dim, std::size_t count) {
  require(head_dim >= 1 && count * head_dim <= corr.rows() && corr.is_square(),
          "tc_from_correlation: head layout exceeds the correlation matrix");
  const std::vector<std::size_t> heads = range(count);
  return tc_subset(corr, head_dim, heads);
}

TcEstimate tc_gaussian_full(std::span<const Matrix> head_outputs) {
  const Matrix corr = stacked_correlation(head_outputs);
  return tc_from_correlation(corr, head_outputs.front().cols(), head_outputs.size());
}

double tc_pairwise_from_g(const Matrix& g) {
  require(g.is_square(), "tc_pairwise_from_g: G must be square");
  double total = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = i + 1; j < g.cols(); ++j)
      total += -0.5 * std::log(1.0 - std::min(g(i, j) * g(i, j), 1.0 - 1e-9));
  return total;
}

TcEstimate tc_estimate(std::span<const Matrix> head_outputs, const Matrix* g, TcMode mode) {
  if (mode == TcMode::kPairwiseFromG) {
    require(g != nullptr, "tc_estimate: pairwise mode needs G");
    return {tc_pairwise_from_g(*g), false};
  }
  return tc_gaussian_full(head_outputs);
}

Measurement measure(const Params& params, const ModelConfig& cfg, const Matrix& inputs,
                    const Matrix& oracle, const GameSpec& spec, Rng& noise_rng) {
  spec.validate(params.heads.size());
  HeadOutputs out = forward(params, inputs, cfg, &oracle);
  Measurement m;
  m.g = compute_interaction(params, out).g;
  m.gamma = frobenius_norm(m.g - Matrix::identity(m.g.rows()));
  m.probs = softmax_rows(out.logits);
  m.oracle = oracle;
  for (Matrix& o : out.heads) {
    Matrix noisy = o + gaussian_matrix(noise_rng, o.rows(), o.cols(), spec.sigma_z);
    m.noisy_heads.push_back(std::move(noisy));
    m.heads.push_back(std::move(o));
  }
  return m;
}

SocialObjectiveReport social_objective(const Measurement& m, const GameSpec& spec) {
  SocialObjectiveReport r;
  const CrossEntropy ce = ce_loss(m.probs, m.oracle);
  r.distortion = ce.value;
  r.ce_clamped = ce.clamped;
  const TcEstimate tc = tc_gaussian_full(m.noisy_heads);
  r.tc_hat = tc.value;
  r.tc_rank_deficient = tc.rank_deficient;
  for (const Matrix& o : m.heads) r.compression_hat += gaussian_mutual_info_zx(o, spec.sigma_z);
  r.tc_lower_bound_from_g = tc_pairwise_from_g(m.g);
  r.c_ib = r.distortion + spec.beta_r * r.tc_hat + spec.beta_c * r.compression_hat;
  return r;
}

ExternalityCharges externality_charges(const Measurement& m, const GameSpec& spec) {
  const std::size_t h = m.heads.size();
  require(h >= 1, "externality_charges: no heads");
  ExternalityCharges out;
  for (const Matrix& o : m.heads) {
    out.tau_c.push_back(gaussian_mutual_info_zx(o, spec.sigma_z));
    out.compression_hat += out.tau_c.back();
  }
  const Matrix corr = stacked_correlation(m.noisy_heads);
  const std::size_t dh = m.noisy_heads.front().cols();
  const std::vector<std::size_t> all = range(h);
  out.tc_hat = tc_subset(corr, dh, all).value;
  for (std::size_t i = 0; i < h; ++i) {
    std::vector<std::size_t> rest;
    for (std::size_t j : all)
      if (j != i) rest.push_back(j);
    out.tau_r.push_back(std::max(0.0, out.tc_hat - tc_subset(corr, dh, rest).value));
  }
  const double sum_c = std::accumulate(out.tau_c.begin(), out.tau_c.end(), 0.0);
  const double sum_r = std::accumulate(out.tau_r.begin(), out.tau_r.end(), 0.0);
  const double slack = 1e-12;
  out.compression_dominance_ok =
      sum_c >= 0.0 && sum_c <= out.compression_hat + slack * (1.0 + out.compression_hat);
  out.redundancy_dominance_ok = sum_r >= 0.0 && sum_r <= out.tc_hat + slack * (1.0 + out.tc_hat);
  return out;
}

std::vector<double> tv_deviation(const Matrix& probs, const Matrix& oracle) {
  require(probs.same_shape(oracle), "tv_deviation: shape mismatch");
  std::vector<double> e(probs.rows(), 0.0);
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < probs.cols(); ++c) s += std::abs(probs(r, c) - oracle(r, c));
    e[r] = std::min(0.5 * s, 1.0);
  }
  return e;
}

HallucinationReport hallucination_report(const Matrix& probs, const Matrix& oracle, double delta,
                                         double c_ib) {
  require(delta > 0.0 && delta <= 1.0, "hallucination_report: delta must lie in (0, 1]");
  require(probs.rows() > 0, "hallucination_report: empty evaluation set");
  const std::vector<double> e = tv_deviation(probs, oracle);
  HallucinationReport r;
  r.delta = delta;
  r.n = e.size();
  const auto hits = std::count_if(e.begin(), e.end(), [&](double x) { return x >= delta; });
  r.p_hat = static_cast<double>(hits) / static_cast<double>(r.n);
  r.std_err = std::sqrt(r.p_hat * (1.0 - r.p_hat) / static_cast<double>(r.n));
  r.pinsker_bound = c_ib / (2.0 * delta * delta);
  r.violation = r.p_hat > r.pinsker_bound + 3.0 * r.std_err;
  return r;
}

void attach_reference(HallucinationReport& report, const HallucinationReport& reference,
                      double reference_c_ib) {
  require(report.delta == reference.delta, "attach_reference: delta mismatch");
  if (reference.p_hat > 0.0) {
    report.excess_ratio = report.p_hat / reference.p_hat;
    report.kappa_star = reference_c_ib / (2.0 * reference.delta * reference.delta * reference.p_hat);
  }
}

FreeRiderReport free_rider_report(std::span<const Matrix> head_outputs, const GameSpec& spec,
                                  double tau, double c_ib) {
  require(tau > 0.0, "free_rider_report: tau must be > 0");
  require(!head_outputs.empty(), "free_rider_report: no heads");
  FreeRiderReport r;
  r.tau = tau;
  r.counting_bound = spec.beta_r > 0.0 ? c_ib / (spec.beta_r * tau)
                                       : std::numeric_limits<double>::infinity();
  const std::size_t h = head_outputs.size();
  r.a.assign(h, 0.0);
  if (h > 1) {
    const Matrix corr = stacked_correlation(head_outputs);
    const std::size_t dh = head_outputs.front().cols();
    double previous = 0.0;
    for (std::size_t i = 1; i < h; ++i) {
      const double current = tc_from_correlation(corr, dh, i + 1).value;
      r.a[i] = std::max(0.0, current - previous);
      previous = current;
    }
    r.tc_total = previous;
  }
  for (std::size_t i = 0; i < h; ++i)
    if (r.a[i] >= tau) r.fr_set.push_back(i);
  r.violation = static_cast<double>(r.fr_set.size()) > r.counting_bound;
  r.telescoping_residual = std::abs(std::accumulate(r.a.begin(), r.a.end(), 0.0) - r.tc_total);
  return r;
}

PoaBound poa_bound_rhs(double gamma, double l_hat, double alpha_wd, double beta_r, double beta_c) {
  require(alpha_wd > 0.0, "poa_bound_rhs: alpha_wd must be > 0");
  require(l_hat >= 0.0, "poa_bound_rhs: l_hat must be >= 0");
  require(gamma >= 0.0, "poa_bound_rhs: gamma must be >= 0");
  const double x = (l_hat / alpha_wd) * gamma * gamma;
  if (x >= 1.0) return {std::numeric_limits<double>::infinity(), true};
  return {(1.0 + beta_r + beta_c) / (1.0 - x), false};
}

namespace {

// d CE / d W_O^(i) with pooled head outputs fixed.
std::vector<Matrix> wo_gradient(const std::vector<Matrix>& pooled, std::span<const Matrix> wo,
                                const Matrix& bias, const Matrix& targets) {
  const std::size_t b = targets.rows();
  Matrix logits(b, targets.cols());
  for (std::size_t i = 0; i < wo.size(); ++i) logits += matmul_nt(pooled[i], wo[i]);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t c = 0; c < logits.cols(); ++c) logits(r, c) += bias(0, c);
  const Matrix p = softmax_rows(logits);
  Matrix eta(b, targets.cols());
  for (std::size_t r = 0; r < b; ++r) {
    double mass = 0.0;
    for (std::size_t c = 0; c < targets.cols(); ++c) mass += targets(r, c);
    for (std::size_t c = 0; c < targets.cols(); ++c)
      eta(r, c) = (p(r, c) * mass - targets(r, c)) / static_cast<double>(b);
  }
  std::vector<Matrix> out;
  for (const Matrix& h : pooled) out.push_back(matmul_tn(eta, h));
  return out;
}

}  // namespace

double estimate_lipschitz(const Params& params, const ModelConfig& cfg, const Batch& batch,
                          std::size_t samples, double radius, Rng& rng) {
  require(samples >= 2, "estimate_lipschitz: need at least 2 samples");
  require(radius > 0.0, "estimate_lipschitz: radius must be > 0");
  const HeadOutputs out = forward(params, batch.inputs, cfg);
  const std::vector<Matrix> base = params.wo_blocks();
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto perturbed = [&]() {
    std::vector<Matrix> dirs;
    double n2 = 0.0;
    for (const Matrix& w : base) {
      dirs.push_back(gaussian_matrix(rng, w.rows(), w.cols()));
      n2 += frobenius_norm_sq(dirs.back());
    }
    const double s = radius * unit(rng) / std::sqrt(n2);
    for (std::size_t i = 0; i < base.size(); ++i) dirs[i] = base[i] + dirs[i] * s;
    return dirs;
  };

  double best = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::vector<Matrix> w1 = perturbed();
    const std::vector<Matrix> w2 = perturbed();
    const std::vector<Matrix> g1 = wo_gradient(out.pooled, w1, params.bias, batch.targets);
    const std::vector<Matrix> g2 = wo_gradient(out.pooled, w2, params.bias, batch.targets);
    double dg = 0.0, dw = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
      dg += frobenius_norm_sq(g1[i] - g2[i]);
      dw += frobenius_norm_sq(w1[i] - w2[i]);
    }
    if (dw > 0.0) best = std::max(best, std::sqrt(dg / dw));
  }
  return best;
}

PoAReport poa_estimate(const RestartRunner& runner, std::span<const std::uint64_t> seeds,
                       double l_hat, const GameSpec& spec, std::size_t threads) {
  require(!seeds.empty(), "poa_estimate: need at least one restart");
  PoAReport report;
  report.l_hat = l_hat;
  report.runs.resize(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t k = next++; k < seeds.size(); k = next++) report.runs[k] = runner(seeds[k]);
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, seeds.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const EquilibriumRun& r : report.runs)
    if (r.converged) report.equilibria.push_back(r);
  report.nonconvergence = report.equilibria.empty();
  if (report.nonconvergence) return report;

  double lo = std::numeric_limits<double>::infinity(), hi = 0.0, worst_gamma = 0.0;
  for (const EquilibriumRun& r : report.equilibria) {
    lo = std::min(lo, r.c_ib);
    hi = std::max(hi, r.c_ib);
    worst_gamma = std::max(worst_gamma, r.gamma);
  }
  report.poa_lower = lo > 0.0 ? hi / lo : 1.0;
  if (spec.alpha_wd > 0.0)
    report.rhs = poa_bound_rhs(worst_gamma, l_hat, spec.alpha_wd, spec.beta_r, spec.beta_c);
  else
    report.rhs = {std::numeric_limits<double>::infinity(), true};
  return report;
}

}  // namespace headgame
