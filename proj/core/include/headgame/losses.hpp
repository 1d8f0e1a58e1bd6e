#pragma once

// Training objectives: cross-entropy against soft or hard targets, the
// log-determinant barrier on G, the cross-head Barlow Twins loss with
// coupling-dependent pair weights, EMA loss normalization and the
// three-phase regularizer schedule.

#include <cstddef>
#include <span>
#include <vector>

#include "headgame/autograd.hpp"
#include "headgame/numerics.hpp"

namespace headgame {

struct LossConfig {
  double lambda_abt = 0.179;
  double lambda_ldb = 0.352;
  double eps_ldb = 0.01;
  double bt_alpha = 0.929;
  double bt_beta = 15.99;
  double bt_tau = 0.0;
  double ema_alpha = 0.1;
  double ema_init = 20.0;
  double ema_target = 20.0;
  double warmup_frac = 0.02;
  double cooldown_start_frac = 0.879;
  bool subtract_identity = true;
  // Differentiate through the z-score mean and standard deviation.
  bool zscore_full_jacobian = true;
  double zscore_eps = 1e-5;

  void validate() const;
};

struct EmaState {
  double ema = 20.0;
  std::size_t step = 0;
};

struct CrossEntropy {
  double value = 0.0;
  bool clamped = false;  // some supported label had probability below 1e-12
};

// Mean over rows of -sum_c y_c log p_c, probabilities clamped at 1e-12.
CrossEntropy ce_loss(const Matrix& probs, const Matrix& targets);
CrossEntropy ce_loss(const Matrix& probs, std::span<const int> labels);

// -logdet_clamped(G, eps).
double ldb_loss(const Matrix& g, double eps);

// alpha + (1 - alpha) softplus(-beta (g_ij - tau)).
double adaptive_weight(double g_ij, const LossConfig& cfg);

struct AbtResult {
  double value = 0.0;
  bool no_pairs = false;
};

// Mean over unordered head pairs of w_ij ||C_ij - I||_F^2 (or ||C_ij||_F^2
// without identity subtraction), where C_ij = O~_i^T O~_j / N on column
// z-scored head outputs.
AbtResult abt_loss(std::span<const Matrix> head_outputs, const Matrix& g, const LossConfig& cfg);

// Updates the EMA with raw first, then returns raw * target / ema.
double ema_normalize(double raw, EmaState& state, const LossConfig& cfg);

// Piecewise-linear warmup / constant / cooldown multiplier applied to
// base_lambda.
double schedule_lambda(std::size_t step, std::size_t total, double base_lambda,
                       const LossConfig& cfg);

// --- taped versions -------------------------------------------------------

ag::Var taped_ldb(ag::Var g, double eps);
// Pair weights come from g_const and are not differentiated.
ag::Var taped_abt(std::span<const ag::Var> head_outputs, const Matrix& g_const,
                  const LossConfig& cfg);

}  // namespace headgame
