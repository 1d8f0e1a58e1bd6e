#pragma once

// Reverse-mode differentiation over Matrix-valued nodes.
//
// A Tape records primitive operations in creation order, which is already a
// topological order. backward(root) seeds d(root)/d(root) = 1 and walks the
// record in reverse, accumulating adjoints into every node that depends on a
// leaf. Constants never receive adjoints.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "headgame/numerics.hpp"

namespace headgame::ag {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value);
  Var constant(Matrix value);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  // Adjoint of a node after backward(); a zero matrix when the node was not
  // reached.
  Matrix grad(Var v) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const char* op_name(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  // Clears any previous adjoints, so the same tape can be differentiated
  // from several roots in turn. Root must be 1x1.
  void backward(Var root);

  // Used by primitive implementations.
  Var push(const char* op, Matrix value, std::vector<std::size_t> parents, BackwardFn fn);
  const Matrix& adjoint(std::size_t id) const { return nodes_[id].adjoint; }
  void accumulate(std::size_t id, const Matrix& contribution);
  void accumulate(std::size_t id, Matrix&& contribution);

 private:
  struct Node {
    const char* op = "";
    Matrix value;
    Matrix adjoint;
    bool has_adjoint = false;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// --- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);
Var matmul_tn(Var a, Var b);  // a^T b
Var matmul_nt(Var a, Var b);  // a b^T
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var add_row(Var a, Var row);  // broadcast a 1 x cols row over every row of a
Var log(Var a);
Var exp(Var a);
Var sqrt(Var a);
Var sum(Var a);
Var mean(Var a);
Var mean_rows(Var a);  // 1 x cols
Var frobenius_sq(Var a);
Var flatten(Var a);  // 1 x size, row-major
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var softmax_rows(Var a);
// Mean over rows of -sum_c y_rc log softmax(logits)_rc.
Var softmax_cross_entropy(Var logits, const Matrix& targets);
// Column z-score with population moments. With full_jacobian = false the
// mean and standard deviation are treated as constants in the backward pass.
Var zscore_columns(Var a, double eps, bool full_jacobian = true);
// sum_i ln max(lambda_i(a + eps I), eps). Gradient flows only through
// eigenvalues above the clamp.
Var logdet_psd(Var a, double eps);
// Cosine-similarity matrix of the rows of a. Zero rows are degenerate: unit
// diagonal, zero off-diagonal, no gradient.
Var cosine_gram(Var a);
// Softmax attention applied independently to consecutive blocks of
// seq_len rows: out_b = softmax(q_b k_b^T * scale) v_b.
Var block_attention(Var q, Var k, Var v, std::size_t seq_len, double scale);
// Mean of consecutive blocks of seq_len rows.
Var mean_pool_blocks(Var a, std::size_t seq_len);
// Identity forward, negated backward. Exists only to build deliberately
// broken gradients for the verification suite's mutation checks.
Var fault_negate_grad(Var a);

// --- differentiation helpers ------------------------------------------------

using Function = std::function<Var(Tape&, std::span<const Var>)>;

double evaluate(const Function& f, std::span<const Matrix> params);
// df/dp for each parameter. Throws ValidationError if f is not scalar.
std::vector<Matrix> grad(const Function& f, std::span<const Matrix> params);

struct GradientCheck {
  double max_rel_err = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

// Central differences over every coordinate, or over a random subsample of
// max_coords coordinates when the parameters are larger than that. Relative
// error denominator: max(|analytic|, |numeric|, 1e-8).
GradientCheck check_gradient(const Function& f, std::span<const Matrix> params, double step,
                             std::size_t max_coords = 400, std::uint64_t seed = 0);

}  // namespace headgame::ag
