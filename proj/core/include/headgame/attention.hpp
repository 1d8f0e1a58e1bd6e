#pragma once

// Single-layer multi-head attention classifier. Each head produces
// O_i = softmax(Q_i K_i^T / sqrt(d_h)) V_i over its own sequence; sequences
// are mean-pooled and each head's pooled output is mapped into logit space by
// its own output block W_O^(i) (classes x d_h):
//
//   logits = sum_i pooled_i W_O^(i)^T + bias
//
// Per-head outputs are exposed before the output projection so that the
// interaction and loss modules can inspect them.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "headgame/autograd.hpp"
#include "headgame/numerics.hpp"
#include "headgame/rng.hpp"

namespace headgame {

struct ModelConfig {
  std::size_t heads = 8;
  std::size_t head_dim = 4;
  std::size_t seq_len = 8;
  std::size_t batch_size = 32;
  std::size_t classes = 8;
  double init_scale = 1.0;
  double b_clip = 10.0;  // Frobenius bound on every W_O block

  std::size_t d_model() const { return heads * head_dim; }
  void validate() const;
};

struct HeadParams {
  Matrix wq;  // d_model x d_h
  Matrix wk;  // d_model x d_h
  Matrix wv;  // d_model x d_h
  Matrix wo;  // classes x d_h
};

struct Params {
  std::vector<HeadParams> heads;
  Matrix bias;  // 1 x classes

  std::size_t head_count() const { return heads.size(); }
  std::size_t parameter_count() const;
  // ||theta_i||^2 over head i's W_Q, W_K, W_V, W_O.
  double head_norm_sq(std::size_t i) const;
  std::vector<Matrix> wo_blocks() const;

  // Fixed ordering: for each head wq, wk, wv, wo; then bias.
  std::vector<Matrix> to_list() const;
  static Params from_list(std::span<const Matrix> list, std::size_t heads);
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  std::vector<std::string> names() const;
};

Params init_params(const ModelConfig& cfg, Rng& rng);

// Rescales any W_O block whose Frobenius norm exceeds b_clip.
void clip_output_blocks(Params& params, double b_clip);

// Rows of a (B*T) x d_model input batch plus per-sequence targets.
struct Batch {
  Matrix inputs;   // (B*T) x d_model
  Matrix targets;  // B x classes, rows on the simplex (one-hot or soft)
};

struct HeadOutputs {
  std::vector<Matrix> heads;  // O_i, (B*T) x d_h
  std::vector<Matrix> pooled; // per-sequence mean of O_i, B x d_h
  Matrix logits;              // B x classes
  std::optional<Matrix> eta;  // d CE / d logits, present when targets were given
};

HeadOutputs forward(const Params& params, const Matrix& inputs, const ModelConfig& cfg,
                    const Matrix* targets = nullptr);

Matrix predict_probs(const Matrix& logits);
Matrix one_hot(std::span<const int> labels, std::size_t classes);

// --- taped forward ------------------------------------------------------------

struct HeadVars {
  ag::Var wq, wk, wv, wo;
};

struct ParamVars {
  std::vector<HeadVars> heads;
  ag::Var bias;

  std::vector<ag::Var> to_list() const;
};

// Leaves for every parameter (or constants when trainable = false).
ParamVars bind_params(ag::Tape& tape, const Params& params, bool trainable = true);

struct ForwardVars {
  std::vector<ag::Var> heads;   // O_i
  std::vector<ag::Var> pooled;  // B x d_h
  ag::Var logits;
};

ForwardVars build_forward(ag::Tape& tape, const ParamVars& params, ag::Var inputs,
                          const ModelConfig& cfg);

// --- checkpoints ----------------------------------------------------------------
//
// Text container, stable across versions:
//
//   headgame-checkpoint 1
//   <matrix count>
//   <name> <rows> <cols>
//   <row-major values, one matrix row per line, %.17g>
//   ...
//
// Values round-trip exactly.

void save_checkpoint(std::ostream& out, const Params& params);
Params load_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Params& params);
Params load_checkpoint(const std::string& path);

}  // namespace headgame
