#pragma once

// Head interaction matrix G = Omega (.) Rho, where Omega holds Frobenius
// cosines between output blocks W_O^(i) and Rho holds cosines between the
// logit gradient backpropagated through each block, g_i = W_O^(i)^T eta.
// Gamma(G) = ||G - I||_F measures off-diagonal coupling.
//
// Heads with a zero block or zero gradient are degenerate: their row and
// column are e_i (unit diagonal, zero elsewhere).

#include <cstddef>
#include <span>
#include <vector>

#include "headgame/attention.hpp"
#include "headgame/autograd.hpp"
#include "headgame/numerics.hpp"

namespace headgame {

struct Coupling {
  Matrix matrix;                 // H x H cosine matrix
  std::vector<bool> degenerate;  // per head
};

enum class EtaMode {
  kBatchMean,  // one eta per batch (mean of per-sample logit gradients)
  kPerSample,  // average of per-sample cosine matrices
};

Coupling weight_coupling(std::span<const Matrix> wo_blocks);

// eta: B x classes matrix of per-sample logit gradients (or a single row).
Coupling gradient_coupling(std::span<const Matrix> wo_blocks, const Matrix& eta,
                           EtaMode mode = EtaMode::kBatchMean);

struct InteractionMatrix {
  Matrix omega;
  Matrix rho;
  Matrix g;
  double gamma = 0.0;
  double min_eigenvalue = 0.0;
  std::vector<std::size_t> degenerate_heads;
};

InteractionMatrix interaction_matrix(const Coupling& omega, const Coupling& rho);
InteractionMatrix interaction_matrix(const Matrix& omega, const Matrix& rho);

// |Gamma^2 - 2 sum_{i<j} omega_ij^2 rho_ij^2|.
double gamma_identity_check(const InteractionMatrix& im);

// G for a model state whose forward pass carried targets.
InteractionMatrix compute_interaction(const Params& params, const HeadOutputs& outputs,
                                      EtaMode mode = EtaMode::kBatchMean);

// Differentiable G (batch-mean eta) built on the tape from the parameter
// leaves and the logits node.
ag::Var taped_interaction(const ParamVars& params, ag::Var logits, const Matrix& targets);

}  // namespace headgame
