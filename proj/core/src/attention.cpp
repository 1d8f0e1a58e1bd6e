#include "headgame/attention.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "headgame/errors.hpp"

namespace headgame {

void ModelConfig::validate() const {
  require(heads >= 1, "model.heads must be >= 1");
  require(head_dim >= 1, "model.head_dim must be >= 1");
  require(seq_len >= 1, "model.seq_len must be >= 1");
  require(batch_size >= 1, "model.batch_size must be >= 1");
  require(classes >= 2, "model.classes must be >= 2");
  require(init_scale > 0.0, "model.init_scale must be positive");
  require(b_clip > 0.0, "model.b_clip must be positive");
}

std::size_t Params::parameter_count() const {
  std::size_t n = bias.size();
  for (const HeadParams& h : heads) n += h.wq.size() + h.wk.size() + h.wv.size() + h.wo.size();
  return n;
}

double Params::head_norm_sq(std::size_t i) const {
  require(i < heads.size(), "Params::head_norm_sq: head index out of range");
  const HeadParams& h = heads[i];
  return frobenius_norm_sq(h.wq) + frobenius_norm_sq(h.wk) + frobenius_norm_sq(h.wv) +
         frobenius_norm_sq(h.wo);
}

std::vector<Matrix> Params::wo_blocks() const {
  std::vector<Matrix> out;
  out.reserve(heads.size());
  for (const HeadParams& h : heads) out.push_back(h.wo);
  return out;
}

std::vector<Matrix> Params::to_list() const {
  std::vector<Matrix> out;
  out.reserve(4 * heads.size() + 1);
  for (const HeadParams& h : heads) {
    out.push_back(h.wq);
    out.push_back(h.wk);
    out.push_back(h.wv);
    out.push_back(h.wo);
  }
  out.push_back(bias);
  return out;
}

Params Params::from_list(std::span<const Matrix> list, std::size_t heads) {
  require(list.size() == 4 * heads + 1, "Params::from_list: wrong number of matrices");
  Params p;
  for (std::size_t i = 0; i < heads; ++i)
    p.heads.push_back({list[4 * i], list[4 * i + 1], list[4 * i + 2], list[4 * i + 3]});
  p.bias = list.back();
  return p;
}

std::vector<double> Params::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const Matrix& m : to_list()) flat.insert(flat.end(), m.data().begin(), m.data().end());
  return flat;
}

void Params::unflatten(std::span<const double> flat) {
  require(flat.size() == parameter_count(), "Params::unflatten: length mismatch");
  std::size_t offset = 0;
  auto fill = [&](Matrix& m) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
              flat.begin() + static_cast<std::ptrdiff_t>(offset + m.size()), m.data().begin());
    offset += m.size();
  };
  for (HeadParams& h : heads) {
    fill(h.wq);
    fill(h.wk);
    fill(h.wv);
    fill(h.wo);
  }
  fill(bias);
}

std::vector<std::string> Params::names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < heads.size(); ++i)
    for (const char* part : {"wq", "wk", "wv", "wo"})
      out.push_back("head" + std::to_string(i) + "." + part);
  out.emplace_back("bias");
  return out;
}

Params init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const double in_std = cfg.init_scale / std::sqrt(static_cast<double>(cfg.d_model()));
  const double out_std = cfg.init_scale / std::sqrt(static_cast<double>(cfg.head_dim));
  Params p;
  for (std::size_t i = 0; i < cfg.heads; ++i) {
    HeadParams h;
    h.wq = gaussian_matrix(rng, cfg.d_model(), cfg.head_dim, in_std);
    h.wk = gaussian_matrix(rng, cfg.d_model(), cfg.head_dim, in_std);
    h.wv = gaussian_matrix(rng, cfg.d_model(), cfg.head_dim, in_std);
    h.wo = gaussian_matrix(rng, cfg.classes, cfg.head_dim, out_std);
    p.heads.push_back(std::move(h));
  }
  p.bias = Matrix(1, cfg.classes);
  clip_output_blocks(p, cfg.b_clip);
  return p;
}

void clip_output_blocks(Params& params, double b_clip) {
  for (HeadParams& h : params.heads) {
    const double n = frobenius_norm(h.wo);
    if (n > b_clip) {
      h.wo *= b_clip / n;
      // Rounding can leave the norm a few ulps above the bound.
      while (frobenius_norm(h.wo) > b_clip) h.wo *= 1.0 - 1e-15;
    }
  }
}

Matrix predict_probs(const Matrix& logits) { return softmax_rows(logits); }

Matrix one_hot(std::span<const int> labels, std::size_t classes) {
  Matrix out(labels.size(), classes);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    require(labels[r] >= 0 && static_cast<std::size_t>(labels[r]) < classes,
            "one_hot: label out of range");
    out(r, static_cast<std::size_t>(labels[r])) = 1.0;
  }
  return out;
}

std::vector<ag::Var> ParamVars::to_list() const {
  std::vector<ag::Var> out;
  for (const HeadVars& h : heads) {
    out.push_back(h.wq);
    out.push_back(h.wk);
    out.push_back(h.wv);
    out.push_back(h.wo);
  }
  out.push_back(bias);
  return out;
}

ParamVars bind_params(ag::Tape& tape, const Params& params, bool trainable) {
  auto bind = [&](const Matrix& m) { return trainable ? tape.leaf(m) : tape.constant(m); };
  ParamVars pv;
  for (const HeadParams& h : params.heads)
    pv.heads.push_back({bind(h.wq), bind(h.wk), bind(h.wv), bind(h.wo)});
  pv.bias = bind(params.bias);
  return pv;
}

ForwardVars build_forward(ag::Tape& tape, const ParamVars& params, ag::Var inputs,
                          const ModelConfig& cfg) {
  (void)tape;
  require(inputs.cols() == cfg.d_model(),
          "forward: input width " + std::to_string(inputs.cols()) + " != d_model " +
              std::to_string(cfg.d_model()));
  require(inputs.rows() % cfg.seq_len == 0,
          "forward: input rows " + std::to_string(inputs.rows()) +
              " not a multiple of seq_len " + std::to_string(cfg.seq_len));
  require(params.heads.size() == cfg.heads, "forward: head count mismatch");
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
  ForwardVars fv;
  std::vector<ag::Var> contributions;
  for (const HeadVars& h : params.heads) {
    const ag::Var q = ag::matmul(inputs, h.wq);
    const ag::Var k = ag::matmul(inputs, h.wk);
    const ag::Var v = ag::matmul(inputs, h.wv);
    const ag::Var o = ag::block_attention(q, k, v, cfg.seq_len, scale);
    const ag::Var pooled = ag::mean_pool_blocks(o, cfg.seq_len);
    fv.heads.push_back(o);
    fv.pooled.push_back(pooled);
    contributions.push_back(ag::matmul_nt(pooled, h.wo));
  }
  ag::Var logits = contributions.front();
  for (std::size_t i = 1; i < contributions.size(); ++i) logits = ag::add(logits, contributions[i]);
  fv.logits = ag::add_row(logits, params.bias);
  return fv;
}

HeadOutputs forward(const Params& params, const Matrix& inputs, const ModelConfig& cfg,
                    const Matrix* targets) {
  ag::Tape tape;
  const ParamVars pv = bind_params(tape, params, false);
  const ForwardVars fv = build_forward(tape, pv, tape.constant(inputs), cfg);
  HeadOutputs out;
  for (const ag::Var& o : fv.heads) out.heads.push_back(o.value());
  for (const ag::Var& p : fv.pooled) out.pooled.push_back(p.value());
  out.logits = fv.logits.value();
  if (targets != nullptr) {
    require(targets->same_shape(out.logits), "forward: targets shape mismatch");
    const Matrix p = softmax_rows(out.logits);
    Matrix eta(p.rows(), p.cols());
    const double inv = 1.0 / static_cast<double>(p.rows());
    for (std::size_t r = 0; r < p.rows(); ++r) {
      const auto y = targets->row(r);
      const double mass = std::accumulate(y.begin(), y.end(), 0.0);
      for (std::size_t c = 0; c < p.cols(); ++c) eta(r, c) = (p(r, c) * mass - y[c]) * inv;
    }
    out.eta = std::move(eta);
  }
  return out;
}

void save_checkpoint(std::ostream& out, const Params& params) {
  const std::vector<Matrix> list = params.to_list();
  const std::vector<std::string> names = params.names();
  out << "headgame-checkpoint 1\n" << list.size() << "\n";
  char buf[40];
  for (std::size_t k = 0; k < list.size(); ++k) {
    const Matrix& m = list[k];
    out << names[k] << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t c = 0; c < m.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
        out << (c ? " " : "") << buf;
      }
      out << '\n';
    }
  }
}

Params load_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  require(in && magic == "headgame-checkpoint" && version == 1, "load_checkpoint: bad header");
  std::size_t count = 0;
  in >> count;
  require(in && count >= 1 && (count - 1) % 4 == 0, "load_checkpoint: bad matrix count");
  std::vector<Matrix> list;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < count; ++k) {
    std::string name;
    std::size_t rows = 0, cols = 0;
    in >> name >> rows >> cols;
    require(static_cast<bool>(in), "load_checkpoint: truncated matrix header");
    std::vector<double> values(rows * cols);
    for (double& v : values) {
      std::string token;
      in >> token;
      require(static_cast<bool>(in), "load_checkpoint: truncated values for " + name);
      v = std::strtod(token.c_str(), nullptr);
    }
    names.push_back(name);
    list.emplace_back(rows, cols, std::move(values));
  }
  Params p = Params::from_list(list, (count - 1) / 4);
  require(p.names() == names, "load_checkpoint: unexpected matrix names");
  return p;
}

void save_checkpoint(const std::string& path, const Params& params) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "save_checkpoint: cannot open " + path);
  save_checkpoint(out, params);
}

Params load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "load_checkpoint: cannot open " + path);
  return load_checkpoint(in);
}

}  // namespace headgame
