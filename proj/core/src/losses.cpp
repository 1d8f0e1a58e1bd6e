#include "headgame/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "headgame/errors.hpp"

namespace headgame {

void LossConfig::validate() const {
  require(lambda_abt >= 0.0, "losses.lambda_abt must be >= 0");
  require(lambda_ldb >= 0.0, "losses.lambda_ldb must be >= 0");
  require(eps_ldb > 0.0, "losses.eps_ldb must be > 0");
  require(bt_alpha >= 0.0 && bt_alpha <= 1.0, "losses.bt_alpha must lie in [0, 1]");
  require(bt_beta >= 0.0, "losses.bt_beta must be >= 0");
  require(ema_alpha > 0.0 && ema_alpha <= 1.0, "losses.ema_alpha must lie in (0, 1]");
  require(ema_init > 0.0, "losses.ema_init must be > 0");
  require(ema_target > 0.0, "losses.ema_target must be > 0");
  require(warmup_frac > 0.0 && warmup_frac < cooldown_start_frac && cooldown_start_frac < 1.0,
          "losses: need 0 < warmup_frac < cooldown_start_frac < 1");
  require(zscore_eps >= 0.0, "losses.zscore_eps must be >= 0");
}

CrossEntropy ce_loss(const Matrix& probs, const Matrix& targets) {
  require(probs.same_shape(targets), "ce_loss: shape mismatch");
  require(probs.rows() > 0, "ce_loss: empty batch");
  CrossEntropy out;
  double total = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    for (std::size_t c = 0; c < probs.cols(); ++c) {
      const double y = targets(r, c);
      if (y == 0.0) continue;
      double p = probs(r, c);
      if (p < 1e-12) {
        p = 1e-12;
        out.clamped = true;
      }
      total -= y * std::log(p);
    }
  }
  out.value = total / static_cast<double>(probs.rows());
  return out;
}

CrossEntropy ce_loss(const Matrix& probs, std::span<const int> labels) {
  require(labels.size() == probs.rows(), "ce_loss: label count mismatch");
  Matrix targets(probs.rows(), probs.cols());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    require(labels[r] >= 0 && static_cast<std::size_t>(labels[r]) < probs.cols(),
            "ce_loss: label out of range");
    targets(r, static_cast<std::size_t>(labels[r])) = 1.0;
  }
  return ce_loss(probs, targets);
}

double ldb_loss(const Matrix& g, double eps) {
  require(g.is_square(), "ldb_loss: G must be square");
  return -logdet_clamped(g, eps);
}

double adaptive_weight(double g_ij, const LossConfig& cfg) {
  return cfg.bt_alpha + (1.0 - cfg.bt_alpha) * softplus(-cfg.bt_beta * (g_ij - cfg.bt_tau));
}

namespace {

// Per-entry weights and targets for the stacked (H d_h)^2 cross-correlation:
// only blocks (i, j) with i < j are active.
struct AbtLayout {
  Matrix weights;
  Matrix target;
  std::size_t pairs = 0;
};

AbtLayout abt_layout(std::size_t heads, std::size_t dh, const Matrix& g, const LossConfig& cfg) {
  require(g.rows() == heads && g.cols() == heads, "abt_loss: G must be H x H");
  const std::size_t n = heads * dh;
  AbtLayout layout{Matrix(n, n), Matrix(n, n), heads * (heads - 1) / 2};
  if (layout.pairs == 0) return layout;
  const double inv_pairs = 1.0 / static_cast<double>(layout.pairs);
  for (std::size_t i = 0; i < heads; ++i) {
    for (std::size_t j = i + 1; j < heads; ++j) {
      const double w = adaptive_weight(g(i, j), cfg) * inv_pairs;
      for (std::size_t a = 0; a < dh; ++a) {
        for (std::size_t b = 0; b < dh; ++b) {
          layout.weights(i * dh + a, j * dh + b) = w;
          if (cfg.subtract_identity && a == b) layout.target(i * dh + a, j * dh + b) = 1.0;
        }
      }
    }
  }
  return layout;
}

}  // namespace

AbtResult abt_loss(std::span<const Matrix> head_outputs, const Matrix& g, const LossConfig& cfg) {
  const std::size_t heads = head_outputs.size();
  require(heads >= 1, "abt_loss: no heads");
  if (heads == 1) return {0.0, true};
  const std::size_t dh = head_outputs.front().cols();
  for (const Matrix& o : head_outputs)
    require(o.cols() == dh && o.rows() == head_outputs.front().rows(),
            "abt_loss: head outputs differ in shape");
  require(head_outputs.front().rows() >= 2, "abt_loss: need N >= 2");
  const Matrix z = zscore_columns(hstack(head_outputs), cfg.zscore_eps);
  Matrix c = matmul_tn(z, z);
  c *= 1.0 / static_cast<double>(z.rows());
  const AbtLayout layout = abt_layout(heads, dh, g, cfg);
  double total = 0.0;
  for (std::size_t r = 0; r < c.rows(); ++r)
    for (std::size_t k = 0; k < c.cols(); ++k) {
      const double w = layout.weights(r, k);
      if (w == 0.0) continue;
      const double d = c(r, k) - layout.target(r, k);
      total += w * d * d;
    }
  return {total, false};
}

double ema_normalize(double raw, EmaState& state, const LossConfig& cfg) {
  require(raw >= 0.0, "ema_normalize: raw loss must be nonnegative");
  require(state.ema > 0.0, "ema_normalize: EMA state must be positive");
  const double updated = cfg.ema_alpha * raw + (1.0 - cfg.ema_alpha) * state.ema;
  // A long run of zero losses can drive the average to zero; keep it positive.
  state.ema = std::max(updated, std::numeric_limits<double>::min());
  ++state.step;
  return raw * (cfg.ema_target / state.ema);
}

double schedule_lambda(std::size_t step, std::size_t total, double base_lambda,
                       const LossConfig& cfg) {
  require(total >= 1 && step <= total, "schedule_lambda: need 0 <= step <= total");
  const double f = static_cast<double>(step) / static_cast<double>(total);
  if (f < cfg.warmup_frac) return base_lambda * (f / cfg.warmup_frac);
  if (f <= cfg.cooldown_start_frac) return base_lambda;
  if (step == total) return 0.0;
  return base_lambda * (1.0 - f) / (1.0 - cfg.cooldown_start_frac);
}

ag::Var taped_ldb(ag::Var g, double eps) { return ag::scale(ag::logdet_psd(g, eps), -1.0); }

ag::Var taped_abt(std::span<const ag::Var> head_outputs, const Matrix& g_const,
                  const LossConfig& cfg) {
  require(!head_outputs.empty(), "taped_abt: no heads");
  ag::Tape& tape = *head_outputs.front().tape;
  const std::size_t heads = head_outputs.size();
  if (heads == 1) return tape.constant(Matrix(1, 1));
  const std::size_t dh = head_outputs.front().cols();
  const ag::Var z =
      ag::zscore_columns(ag::concat_cols(head_outputs), cfg.zscore_eps, cfg.zscore_full_jacobian);
  const ag::Var c = ag::scale(ag::matmul_tn(z, z), 1.0 / static_cast<double>(z.rows()));
  AbtLayout layout = abt_layout(heads, dh, g_const, cfg);
  const ag::Var diff = ag::sub(c, tape.constant(std::move(layout.target)));
  return ag::sum(ag::mul(tape.constant(std::move(layout.weights)), ag::mul(diff, diff)));
}

}  // namespace headgame
