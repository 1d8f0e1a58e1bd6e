#pragma once

// Heads as players. Head i controls theta_i = (W_Q, W_K, W_V, W_O)^(i) and
// pays the private cost
//
//   C_i = pi_i CE + (alpha/2) ||theta_i||^2,
//
// whose gradients match pi_i times the gradients of the shared potential
//
//   Phi = CE + (alpha/2) sum_i ||theta_i||^2 / pi_i.
//
// The social objective is distortion + beta_R TC + beta_C sum_i I(Z_i; X),
// with Z_i = O_i + N(0, sigma_z^2 I) as the stochastic encoder. Information
// terms are unconditional Gaussian estimates on head outputs (not
// conditioned on X); reports carry that caveat in their "estimator" field.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "headgame/attention.hpp"
#include "headgame/autograd.hpp"
#include "headgame/numerics.hpp"
#include "headgame/rng.hpp"

namespace headgame {

struct GameSpec {
  std::vector<double> pi;  // credit shares; empty means uniform 1/H
  double alpha_wd = 1e-4;
  double beta_r = 1.0;
  double beta_c = 0.01;
  double sigma_z = 0.05;

  // Shares for an H-head model (fills in the uniform default).
  std::vector<double> shares(std::size_t heads) const;
  void validate(std::size_t heads) const;
};

// --- costs and potential ----------------------------------------------------

double private_cost_ce(std::size_t head, const Params& params, const ModelConfig& cfg,
                       const Batch& batch, const GameSpec& spec);
double potential_phi(const Params& params, const ModelConfig& cfg, const Batch& batch,
                     const GameSpec& spec);

// Taped building blocks shared with the trainer. ce is the CE node.
ag::Var taped_head_norm_sq(const HeadVars& head);
ag::Var taped_phi(ag::Var ce, const ParamVars& params, std::span<const double> pi,
                  double alpha_wd);

struct PotentialCheck {
  double max_residual = 0.0;
  std::vector<double> per_head;
};

// max_i ||grad_i C_i - pi_i grad_i Phi|| / max(||pi_i grad_i Phi||, 1e-12),
// both sides by reverse-mode differentiation.
PotentialCheck verify_potential_identity(const Params& params, const ModelConfig& cfg,
                                         const Batch& batch, const GameSpec& spec);

// --- information estimates ----------------------------------------------------

// 1/2 logdet(I + Sigma/sigma_z^2), Sigma the population covariance of o.
double gaussian_mutual_info_zx(const Matrix& o, double sigma_z);

enum class TcMode { kGaussianFull, kPairwiseFromG };

struct TcEstimate {
  double value = 0.0;
  bool rank_deficient = false;  // correlation eigenvalue below the clamp
};

inline constexpr double kTcClamp = 1e-6;

// Gaussian multi-information across head streams from the correlation of the
// concatenated outputs: -1/2 logdet R + 1/2 sum_i logdet R_ii, eigenvalues
// clamped at kTcClamp. Needs N > H d_h.
TcEstimate tc_gaussian_full(std::span<const Matrix> head_outputs);
// Same quantity from a precomputed correlation matrix over the first `count`
// heads (principal submatrix).
TcEstimate tc_from_correlation(const Matrix& corr, std::size_t head_dim, std::size_t count);
// sum_{i<j} -1/2 ln(1 - min(G_ij^2, 1 - 1e-9)).
double tc_pairwise_from_g(const Matrix& g);
TcEstimate tc_estimate(std::span<const Matrix> head_outputs, const Matrix* g, TcMode mode);

// --- measurement ----------------------------------------------------------------

// Everything the reports need from one model state on one evaluation set.
struct Measurement {
  std::vector<Matrix> heads;        // deterministic O_i over all eval tokens
  std::vector<Matrix> noisy_heads;  // O_i + sigma_z noise
  Matrix probs;                     // model predictive rows, one per sequence
  Matrix oracle;                    // y* rows
  Matrix g;                         // interaction matrix on the eval set (eta vs oracle)
  double gamma = 0.0;
};

Measurement measure(const Params& params, const ModelConfig& cfg, const Matrix& inputs,
                    const Matrix& oracle, const GameSpec& spec, Rng& noise_rng);

struct SocialObjectiveReport {
  double distortion = 0.0;
  double tc_hat = 0.0;
  double compression_hat = 0.0;
  double c_ib = 0.0;
  double tc_lower_bound_from_g = 0.0;
  bool tc_rank_deficient = false;
  bool ce_clamped = false;
};

SocialObjectiveReport social_objective(const Measurement& m, const GameSpec& spec);

struct ExternalityCharges {
  std::vector<double> tau_c;
  std::vector<double> tau_r;
  double tc_hat = 0.0;
  double compression_hat = 0.0;
  bool compression_dominance_ok = true;  // 0 <= sum tau_c <= sum I(Z_i; X)
  bool redundancy_dominance_ok = true;   // 0 <= sum tau_r <= TC
};

// tau_c_i = I(Z_i; X); tau_r_i = max(0, TC(all) - TC(all but i)).
ExternalityCharges externality_charges(const Measurement& m, const GameSpec& spec);

struct HallucinationReport {
  double delta = 0.0;
  std::size_t n = 0;
  double p_hat = 0.0;
  double std_err = 0.0;  // sqrt(p_hat (1 - p_hat) / n)
  double pinsker_bound = 0.0;
  bool violation = false;  // p_hat > bound + 3 std_err
  std::optional<double> excess_ratio;  // p_hat / reference p_hat
  std::optional<double> kappa_star;    // c_ib(ref) / (2 delta^2 p_hat(ref))
};

// E(x) = 1/2 ||probs(x) - oracle(x)||_1 per row.
std::vector<double> tv_deviation(const Matrix& probs, const Matrix& oracle);
HallucinationReport hallucination_report(const Matrix& probs, const Matrix& oracle, double delta,
                                         double c_ib);
// Fills excess_ratio and kappa_star against a best-found reference state.
void attach_reference(HallucinationReport& report, const HallucinationReport& reference,
                      double reference_c_ib);

struct FreeRiderReport {
  double tau = 0.0;
  std::vector<double> a;  // chain-rule increments of TC in head order
  std::vector<std::size_t> fr_set;
  double counting_bound = 0.0;  // c_ib / (beta_R tau); +inf when beta_R = 0
  bool violation = false;
  double tc_total = 0.0;
  double telescoping_residual = 0.0;  // |sum a - TC(all)|
};

FreeRiderReport free_rider_report(std::span<const Matrix> head_outputs, const GameSpec& spec,
                                  double tau, double c_ib);

// --- price of anarchy ---------------------------------------------------------------

struct PoaBound {
  double value = 0.0;
  bool infinite = false;  // (L/alpha) Gamma^2 >= 1
};

// (1 + beta_R + beta_C) / (1 - (L/alpha) Gamma^2).
PoaBound poa_bound_rhs(double gamma, double l_hat, double alpha_wd, double beta_r, double beta_c);

// Largest observed ||grad D(W) - grad D(W')|| / ||W - W'|| over random pairs
// of W_O perturbations within `radius` of the current blocks, D the CE on
// batch with every other parameter fixed. A lower bound on L.
double estimate_lipschitz(const Params& params, const ModelConfig& cfg, const Batch& batch,
                          std::size_t samples, double radius, Rng& rng);

struct EquilibriumRun {
  std::uint64_t seed = 0;
  double c_ib = 0.0;
  double gamma = 0.0;
  double grad_norm = 0.0;
  bool converged = false;
};

struct PoAReport {
  std::vector<EquilibriumRun> runs;        // every restart
  std::vector<EquilibriumRun> equilibria;  // converged restarts
  double poa_lower = 0.0;                  // max c_ib / min c_ib over equilibria
  bool nonconvergence = false;             // no restart reached tolerance
  double l_hat = 0.0;
  PoaBound rhs;                            // at the largest equilibrium Gamma
};

using RestartRunner = std::function<EquilibriumRun(std::uint64_t seed)>;

// Runs one restart per seed (in parallel when threads > 1) and assembles the
// report in seed order.
PoAReport poa_estimate(const RestartRunner& runner, std::span<const std::uint64_t> seeds,
                       double l_hat, const GameSpec& spec, std::size_t threads = 1);

}  // namespace headgame
