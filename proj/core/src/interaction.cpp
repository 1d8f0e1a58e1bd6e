#include "headgame/interaction.hpp"

#include <cmath>

#include "headgame/errors.hpp"

namespace headgame {

namespace {

Coupling cosine_matrix(const std::vector<std::vector<double>>& vectors) {
  const std::size_t h = vectors.size();
  Coupling out{Matrix(h, h), std::vector<bool>(h, false)};
  for (std::size_t i = 0; i < h; ++i) out.degenerate[i] = norm(vectors[i]) == 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    out.matrix(i, i) = 1.0;
    for (std::size_t j = i + 1; j < h; ++j) {
      const Cosine c = cosine(vectors[i], vectors[j]);
      out.matrix(i, j) = c.value;
      out.matrix(j, i) = c.value;
    }
  }
  return out;
}

std::vector<double> head_gradient(const Matrix& wo, std::span<const double> eta) {
  std::vector<double> g(wo.cols(), 0.0);
  for (std::size_t c = 0; c < wo.rows(); ++c)
    for (std::size_t k = 0; k < wo.cols(); ++k) g[k] += wo(c, k) * eta[c];
  return g;
}

}  // namespace

Coupling weight_coupling(std::span<const Matrix> wo_blocks) {
  require(!wo_blocks.empty(), "weight_coupling: empty block list");
  std::vector<std::vector<double>> flat;
  for (const Matrix& w : wo_blocks) {
    require(w.same_shape(wo_blocks.front()), "weight_coupling: blocks differ in shape");
    flat.emplace_back(w.data().begin(), w.data().end());
  }
  return cosine_matrix(flat);
}

Coupling gradient_coupling(std::span<const Matrix> wo_blocks, const Matrix& eta, EtaMode mode) {
  require(!wo_blocks.empty(), "gradient_coupling: empty block list");
  require(eta.rows() >= 1 && eta.cols() == wo_blocks.front().rows(),
          "gradient_coupling: eta width must equal the class count");
  const std::size_t h = wo_blocks.size();
  if (mode == EtaMode::kBatchMean || eta.rows() == 1) {
    const Matrix mean_eta = column_means(eta);
    std::vector<std::vector<double>> g;
    for (const Matrix& w : wo_blocks) g.push_back(head_gradient(w, mean_eta.row(0)));
    return cosine_matrix(g);
  }
  Coupling out{Matrix(h, h), std::vector<bool>(h, true)};
  for (std::size_t b = 0; b < eta.rows(); ++b) {
    std::vector<std::vector<double>> g;
    for (const Matrix& w : wo_blocks) g.push_back(head_gradient(w, eta.row(b)));
    const Coupling c = cosine_matrix(g);
    out.matrix += c.matrix;
    for (std::size_t i = 0; i < h; ++i) out.degenerate[i] = out.degenerate[i] && c.degenerate[i];
  }
  out.matrix *= 1.0 / static_cast<double>(eta.rows());
  for (std::size_t i = 0; i < h; ++i) out.matrix(i, i) = 1.0;
  return out;
}

InteractionMatrix interaction_matrix(const Matrix& omega, const Matrix& rho) {
  require(omega.is_square() && omega.same_shape(rho), "interaction_matrix: shape mismatch");
  InteractionMatrix im;
  im.omega = omega;
  im.rho = rho;
  im.g = hadamard(omega, rho);
  const std::size_t h = omega.rows();
  im.gamma = frobenius_norm(im.g - Matrix::identity(h));
  im.min_eigenvalue = sym_eig(symmetrize(im.g)).eigenvalues.front();
  return im;
}

InteractionMatrix interaction_matrix(const Coupling& omega, const Coupling& rho) {
  const std::size_t h = omega.matrix.rows();
  require(omega.degenerate.size() == h && rho.degenerate.size() == h,
          "interaction_matrix: degenerate flags size mismatch");
  Matrix w = omega.matrix;
  Matrix r = rho.matrix;
  std::vector<std::size_t> degenerate;
  for (std::size_t i = 0; i < h; ++i) {
    if (!(omega.degenerate[i] || rho.degenerate[i])) continue;
    degenerate.push_back(i);
    for (std::size_t j = 0; j < h; ++j) {
      if (j == i) continue;
      w(i, j) = w(j, i) = 0.0;
      r(i, j) = r(j, i) = 0.0;
    }
  }
  InteractionMatrix im = interaction_matrix(w, r);
  im.degenerate_heads = std::move(degenerate);
  return im;
}

double gamma_identity_check(const InteractionMatrix& im) {
  const std::size_t h = im.g.rows();
  double pair_sum = 0.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = i + 1; j < h; ++j) {
      const double w = im.omega(i, j);
      const double r = im.rho(i, j);
      pair_sum += w * w * r * r;
    }
  return std::abs(im.gamma * im.gamma - 2.0 * pair_sum);
}

InteractionMatrix compute_interaction(const Params& params, const HeadOutputs& outputs,
                                      EtaMode mode) {
  require(outputs.eta.has_value(), "compute_interaction: forward pass carried no targets");
  const std::vector<Matrix> blocks = params.wo_blocks();
  return interaction_matrix(weight_coupling(blocks), gradient_coupling(blocks, *outputs.eta, mode));
}

ag::Var taped_interaction(const ParamVars& params, ag::Var logits, const Matrix& targets) {
  ag::Tape& tape = *logits.tape;
  const ag::Var probs = ag::softmax_rows(logits);
  const ag::Var eta = ag::mean_rows(ag::sub(probs, tape.constant(targets)));
  std::vector<ag::Var> wo_rows;
  std::vector<ag::Var> grad_rows;
  for (const HeadVars& h : params.heads) {
    wo_rows.push_back(ag::flatten(h.wo));
    grad_rows.push_back(ag::matmul(eta, h.wo));
  }
  const ag::Var omega = ag::cosine_gram(ag::concat_rows(wo_rows));
  const ag::Var rho = ag::cosine_gram(ag::concat_rows(grad_rows));
  return ag::mul(omega, rho);
}

}  // namespace headgame
