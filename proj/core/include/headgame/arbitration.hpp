#pragma once

// Bargaining weights for combining per-loss gradients. The weights alpha > 0
// solve M alpha = 1 / alpha (elementwise), M being the Gram matrix of the
// task gradients; each scaled gradient alpha_k g_k then has the same
// projection-times-weight onto the combined direction.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "headgame/numerics.hpp"

namespace headgame {

struct GradientSet {
  std::vector<std::vector<double>> gradients;  // K flattened gradients, equal length
  std::vector<std::string> names;

  std::size_t size() const { return gradients.size(); }
  void validate() const;
};

struct NashOptions {
  std::size_t max_iters = 200;
  double tol = 1e-8;
  double damping = 0.5;
  // Safeguarded Newton steps on 1/2 a^T M a - sum log a when the damped
  // iteration has not met tol.
  bool newton_polish = true;
};

struct NashResult {
  std::vector<double> alpha;
  double residual = 0.0;  // ||M alpha - 1/alpha||_inf over non-dropped tasks
  bool converged = false;
  bool fallback = false;   // alpha holds the fallback weights
  std::size_t iterations = 0;
  std::vector<bool> dropped;  // zero gradients, weight 0
};

Matrix gradient_gram(const GradientSet& gs);

// fallback_weights: used verbatim when the solver does not converge.
NashResult nash_weights(const GradientSet& gs, std::span<const double> fallback_weights,
                        const NashOptions& options = {});

// sum_k alpha_k g_k.
std::vector<double> combine(const GradientSet& gs, std::span<const double> alpha);

}  // namespace headgame
