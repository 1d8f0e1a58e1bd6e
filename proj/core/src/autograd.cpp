#include "headgame/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "headgame/errors.hpp"

namespace headgame::ag {

const Matrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
  const Matrix& v = value();
  require(v.rows() == 1 && v.cols() == 1, "Var::scalar: node is not 1x1");
  return v(0, 0);
}

Var Tape::leaf(Matrix value) {
  const std::size_t id = nodes_.size();
  if (!value.all_finite())
    throw NumericError("autograd: non-finite leaf value at node #" + std::to_string(id));
  nodes_.push_back(Node{"leaf", std::move(value), {}, false, true, {}, {}});
  return Var{this, id};
}

Var Tape::constant(Matrix value) {
  const std::size_t id = nodes_.size();
  if (!value.all_finite())
    throw NumericError("autograd: non-finite constant at node #" + std::to_string(id));
  nodes_.push_back(Node{"constant", std::move(value), {}, false, false, {}, {}});
  return Var{this, id};
}

Var Tape::push(const char* op, Matrix value, std::vector<std::size_t> parents, BackwardFn fn) {
  const std::size_t id = nodes_.size();
  if (!value.all_finite())
    throw NumericError(std::string("autograd: non-finite value in forward pass at node #") +
                       std::to_string(id) + " (" + op + ")");
  bool needs = false;
  for (std::size_t p : parents) needs = needs || nodes_[p].requires_grad;
  nodes_.push_back(Node{op, std::move(value), {}, false, needs, std::move(parents),
                        needs ? std::move(fn) : BackwardFn{}});
  return Var{this, id};
}

void Tape::accumulate(std::size_t id, const Matrix& contribution) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.has_adjoint) {
    n.adjoint = contribution;
    n.has_adjoint = true;
  } else {
    n.adjoint += contribution;
  }
}

void Tape::accumulate(std::size_t id, Matrix&& contribution) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.has_adjoint) {
    n.adjoint = std::move(contribution);
    n.has_adjoint = true;
  } else {
    n.adjoint += contribution;
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.has_adjoint) return n.adjoint;
  return Matrix(n.value.rows(), n.value.cols());
}

void Tape::backward(Var root) {
  require(root.tape == this, "Tape::backward: root belongs to another tape");
  const Matrix& rv = nodes_[root.id].value;
  require(rv.rows() == 1 && rv.cols() == 1,
          "Tape::backward: root must be scalar, got " + std::to_string(rv.rows()) + "x" +
              std::to_string(rv.cols()));
  for (Node& n : nodes_) {
    n.has_adjoint = false;
    n.adjoint = Matrix();
  }
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].adjoint = Matrix(1, 1, 1.0);
  nodes_[root.id].has_adjoint = true;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_adjoint && n.backward) n.backward(*this, i);
  }
}

namespace {

Tape& tape_of(Var a) {
  require(a.tape != nullptr, "autograd: uninitialized Var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  require(a.tape != nullptr && a.tape == b.tape, "autograd: operands on different tapes");
  return *a.tape;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const std::size_t ia = a.id, ib = b.id;
  return t.push("matmul", headgame::matmul(a.value(), b.value()), {ia, ib},
                [ia, ib](Tape& t, std::size_t self) {
                  const Matrix& g = t.adjoint(self);
                  if (t.requires_grad(ia)) t.accumulate(ia, headgame::matmul_nt(g, t.value(ib)));
                  if (t.requires_grad(ib)) t.accumulate(ib, headgame::matmul_tn(t.value(ia), g));
                });
}

Var matmul_tn(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const std::size_t ia = a.id, ib = b.id;
  return t.push("matmul_tn", headgame::matmul_tn(a.value(), b.value()), {ia, ib},
                [ia, ib](Tape& t, std::size_t self) {
                  const Matrix& g = t.adjoint(self);
                  if (t.requires_grad(ia)) t.accumulate(ia, headgame::matmul_nt(t.value(ib), g));
                  if (t.requires_grad(ib)) t.accumulate(ib, headgame::matmul(t.value(ia), g));
                });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const std::size_t ia = a.id, ib = b.id;
  return t.push("matmul_nt", headgame::matmul_nt(a.value(), b.value()), {ia, ib},
                [ia, ib](Tape& t, std::size_t self) {
                  const Matrix& g = t.adjoint(self);
                  if (t.requires_grad(ia)) t.accumulate(ia, headgame::matmul(g, t.value(ib)));
                  if (t.requires_grad(ib)) t.accumulate(ib, headgame::matmul_tn(g, t.value(ia)));
                });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  return t.push("transpose", headgame::transpose(a.value()), {ia},
                [ia](Tape& t, std::size_t self) {
                  t.accumulate(ia, headgame::transpose(t.adjoint(self)));
                });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.value().same_shape(b.value()), "ag::add: shape mismatch");
  const std::size_t ia = a.id, ib = b.id;
  return t.push("add", a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.adjoint(self));
    t.accumulate(ib, t.adjoint(self));
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.value().same_shape(b.value()), "ag::sub: shape mismatch");
  const std::size_t ia = a.id, ib = b.id;
  return t.push("sub", a.value() - b.value(), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.adjoint(self));
    if (t.requires_grad(ib)) t.accumulate(ib, t.adjoint(self) * -1.0);
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const std::size_t ia = a.id, ib = b.id;
  return t.push("mul", hadamard(a.value(), b.value()), {ia, ib},
                [ia, ib](Tape& t, std::size_t self) {
                  const Matrix& g = t.adjoint(self);
                  if (t.requires_grad(ia)) t.accumulate(ia, hadamard(g, t.value(ib)));
                  if (t.requires_grad(ib)) t.accumulate(ib, hadamard(g, t.value(ia)));
                });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  return t.push("scale", a.value() * s, {ia}, [ia, s](Tape& t, std::size_t self) {
    t.accumulate(ia, t.adjoint(self) * s);
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), "ag::add_row: row shape mismatch");
  Matrix out = a.value();
  const Matrix& r = row.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += r(0, j);
  const std::size_t ia = a.id, ir = row.id;
  return t.push("add_row", std::move(out), {ia, ir}, [ia, ir](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) {
      Matrix colsum(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) colsum(0, j) += g(i, j);
      t.accumulate(ir, std::move(colsum));
    }
  });
}

namespace {

template <typename F>
Matrix map(const Matrix& m, F&& f) {
  Matrix out(m.rows(), m.cols());
  auto in = m.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

}  // namespace

Var log(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  return t.push("log", map(a.value(), [](double x) { return std::log(x); }), {ia},
                [ia](Tape& t, std::size_t self) {
                  Matrix g = t.adjoint(self);
                  auto x = t.value(ia).data();
                  auto gd = g.data();
                  for (std::size_t i = 0; i < gd.size(); ++i) gd[i] /= x[i];
                  t.accumulate(ia, std::move(g));
                });
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  return t.push("exp", map(a.value(), [](double x) { return std::exp(x); }), {ia},
                [ia](Tape& t, std::size_t self) {
                  t.accumulate(ia, hadamard(t.adjoint(self), t.value(self)));
                });
}

Var sqrt(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  return t.push("sqrt", map(a.value(), [](double x) { return std::sqrt(x); }), {ia},
                [ia](Tape& t, std::size_t self) {
                  Matrix g = t.adjoint(self);
                  auto y = t.value(self).data();
                  auto gd = g.data();
                  for (std::size_t i = 0; i < gd.size(); ++i) gd[i] /= 2.0 * y[i];
                  t.accumulate(ia, std::move(g));
                });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  const double s = std::accumulate(a.value().data().begin(), a.value().data().end(), 0.0);
  return t.push("sum", Matrix(1, 1, s), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix& x = t.value(ia);
    t.accumulate(ia, Matrix(x.rows(), x.cols(), t.adjoint(self)(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  require(n > 0, "ag::mean: empty input");
  return scale(sum(a), 1.0 / n);
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  const Matrix& x = a.value();
  require(x.rows() > 0, "ag::mean_rows: empty input");
  return t.push("mean_rows", column_means(x), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const Matrix& x = t.value(ia);
    const double inv = 1.0 / static_cast<double>(x.rows());
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = g(0, j) * inv;
    t.accumulate(ia, std::move(out));
  });
}

Var frobenius_sq(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  return t.push("frobenius_sq", Matrix(1, 1, frobenius_norm_sq(a.value())), {ia},
                [ia](Tape& t, std::size_t self) {
                  t.accumulate(ia, t.value(ia) * (2.0 * t.adjoint(self)(0, 0)));
                });
}

Var flatten(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  const Matrix& x = a.value();
  Matrix out(1, x.size());
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  return t.push("flatten", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Matrix& x = t.value(ia);
    Matrix g(x.rows(), x.cols());
    std::copy(t.adjoint(self).data().begin(), t.adjoint(self).data().end(), g.data().begin());
    t.accumulate(ia, std::move(g));
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "ag::concat_rows: no parts");
  Tape& t = tape_of(parts.front());
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    require(p.tape == &t, "ag::concat_rows: parts on different tapes");
    require(p.cols() == cols, "ag::concat_rows: column counts differ");
    rows += p.rows();
    ids.push_back(p.id);
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(offset * cols));
    offset += p.rows();
  }
  auto parents = ids;
  return t.push("concat_rows", std::move(out), std::move(parents),
                [ids](Tape& t, std::size_t self) {
                  const Matrix& g = t.adjoint(self);
                  std::size_t offset = 0;
                  for (std::size_t id : ids) {
                    const std::size_t r = t.value(id).rows();
                    if (t.requires_grad(id)) t.accumulate(id, slice_rows(g, offset, r));
                    offset += r;
                  }
                });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "ag::concat_cols: no parts");
  Tape& t = tape_of(parts.front());
  std::vector<Matrix> values;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    require(p.tape == &t, "ag::concat_cols: parts on different tapes");
    values.push_back(p.value());
    ids.push_back(p.id);
  }
  auto parents = ids;
  return t.push("concat_cols", hstack(values), std::move(parents),
                [ids](Tape& t, std::size_t self) {
                  const Matrix& g = t.adjoint(self);
                  std::size_t offset = 0;
                  for (std::size_t id : ids) {
                    const std::size_t c = t.value(id).cols();
                    if (t.requires_grad(id)) t.accumulate(id, slice_cols(g, offset, c));
                    offset += c;
                  }
                });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  return t.push("softmax_rows", headgame::softmax_rows(a.value()), {ia},
                [ia](Tape& t, std::size_t self) {
                  const Matrix& p = t.value(self);
                  const Matrix& g = t.adjoint(self);
                  Matrix out(p.rows(), p.cols());
                  for (std::size_t r = 0; r < p.rows(); ++r) {
                    const double s = dot(g.row(r), p.row(r));
                    for (std::size_t c = 0; c < p.cols(); ++c) out(r, c) = p(r, c) * (g(r, c) - s);
                  }
                  t.accumulate(ia, std::move(out));
                });
}

Var softmax_cross_entropy(Var logits, const Matrix& targets) {
  Tape& t = tape_of(logits);
  const Matrix& z = logits.value();
  require(z.same_shape(targets), "ag::softmax_cross_entropy: targets shape mismatch");
  require(z.rows() > 0, "ag::softmax_cross_entropy: empty batch");
  double total = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto row = z.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double lse = 0.0;
    for (double v : row) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    for (std::size_t c = 0; c < z.cols(); ++c)
      if (targets(r, c) != 0.0) total -= targets(r, c) * (row[c] - lse);
  }
  const std::size_t il = logits.id;
  return t.push("softmax_cross_entropy", Matrix(1, 1, total / static_cast<double>(z.rows())),
                {il}, [il, targets](Tape& t, std::size_t self) {
                  const Matrix p = headgame::softmax_rows(t.value(il));
                  const double g = t.adjoint(self)(0, 0) / static_cast<double>(p.rows());
                  Matrix out(p.rows(), p.cols());
                  for (std::size_t r = 0; r < p.rows(); ++r) {
                    const auto y = targets.row(r);
                    const double mass = std::accumulate(y.begin(), y.end(), 0.0);
                    for (std::size_t c = 0; c < p.cols(); ++c)
                      out(r, c) = g * (p(r, c) * mass - y[c]);
                  }
                  t.accumulate(il, std::move(out));
                });
}

Var zscore_columns(Var a, double eps, bool full_jacobian) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  require(x.rows() >= 2, "ag::zscore_columns: need at least 2 rows");
  const std::size_t n = x.rows();
  Matrix sigma(1, x.cols());
  const Matrix mu = column_means(x);
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double ss = 0.0;
    for (std::size_t r = 0; r < n; ++r) ss += (x(r, c) - mu(0, c)) * (x(r, c) - mu(0, c));
    sigma(0, c) = std::sqrt(ss / static_cast<double>(n));
  }
  const std::size_t ia = a.id;
  return t.push(
      "zscore_columns", headgame::zscore_columns(x, eps), {ia},
      [ia, eps, full_jacobian, mu, sigma](Tape& t, std::size_t self) {
        const Matrix& x = t.value(ia);
        const Matrix& g = t.adjoint(self);
        const std::size_t n = x.rows();
        const double nd = static_cast<double>(n);
        Matrix out(n, x.cols());
        for (std::size_t c = 0; c < x.cols(); ++c) {
          const double s = sigma(0, c) + eps;
          if (!(s > 0.0)) continue;
          if (!full_jacobian || sigma(0, c) == 0.0) {
            for (std::size_t r = 0; r < n; ++r) out(r, c) = g(r, c) / s;
            if (full_jacobian) {
              double m = 0.0;
              for (std::size_t r = 0; r < n; ++r) m += out(r, c);
              m /= nd;
              for (std::size_t r = 0; r < n; ++r) out(r, c) -= m;
            }
            continue;
          }
          double gc = 0.0;
          for (std::size_t r = 0; r < n; ++r) gc += g(r, c) * (x(r, c) - mu(0, c));
          const double d_s = -gc / (s * s);
          const double k = d_s / (nd * sigma(0, c));
          double m = 0.0;
          for (std::size_t r = 0; r < n; ++r) {
            out(r, c) = g(r, c) / s + k * (x(r, c) - mu(0, c));
            m += out(r, c);
          }
          m /= nd;
          for (std::size_t r = 0; r < n; ++r) out(r, c) -= m;
        }
        t.accumulate(ia, std::move(out));
      });
}

Var logdet_psd(Var a, double eps) {
  Tape& t = tape_of(a);
  require(eps > 0.0, "ag::logdet_psd: eps must be positive");
  Matrix shifted = symmetrize(a.value());
  for (std::size_t i = 0; i < shifted.rows(); ++i) shifted(i, i) += eps;
  SymEig e = sym_eig(shifted);
  double v = 0.0;
  for (double lambda : e.eigenvalues) v += std::log(std::max(lambda, eps));
  const std::size_t ia = a.id;
  return t.push("logdet_psd", Matrix(1, 1, v), {ia},
                [ia, eps, e = std::move(e)](Tape& t, std::size_t self) {
                  Matrix g = eig_reconstruct(
                      e, [eps](double lambda) { return lambda > eps ? 1.0 / lambda : 0.0; });
                  g *= t.adjoint(self)(0, 0);
                  t.accumulate(ia, std::move(g));
                });
}

Var cosine_gram(Var a) {
  Tape& t = tape_of(a);
  const Matrix& u = a.value();
  const std::size_t h = u.rows();
  std::vector<double> norms(h);
  Matrix unit(h, u.cols());
  for (std::size_t i = 0; i < h; ++i) {
    norms[i] = norm(u.row(i));
    if (norms[i] > 0.0)
      for (std::size_t j = 0; j < u.cols(); ++j) unit(i, j) = u(i, j) / norms[i];
  }
  Matrix c = headgame::matmul_nt(unit, unit);
  for (std::size_t i = 0; i < h; ++i) {
    c(i, i) = 1.0;
    for (std::size_t j = i + 1; j < h; ++j) {
      const double v = std::clamp(c(i, j), -1.0, 1.0);
      c(i, j) = v;
      c(j, i) = v;
    }
  }
  const std::size_t ia = a.id;
  return t.push("cosine_gram", std::move(c), {ia},
                [ia, norms, unit](Tape& t, std::size_t self) {
                  const Matrix& g = t.adjoint(self);
                  const Matrix sym = g + headgame::transpose(g);
                  const Matrix d_unit = headgame::matmul(sym, unit);
                  Matrix out(unit.rows(), unit.cols());
                  for (std::size_t i = 0; i < unit.rows(); ++i) {
                    if (norms[i] == 0.0) continue;
                    const double proj = dot(unit.row(i), d_unit.row(i));
                    for (std::size_t j = 0; j < unit.cols(); ++j)
                      out(i, j) = (d_unit(i, j) - proj * unit(i, j)) / norms[i];
                  }
                  t.accumulate(ia, std::move(out));
                });
}

Var block_attention(Var q, Var k, Var v, std::size_t seq_len, double scale) {
  Tape& t = tape_of(q, k);
  require(k.tape == v.tape, "ag::block_attention: operands on different tapes");
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  require(seq_len >= 1 && Q.rows() % seq_len == 0, "ag::block_attention: rows not a multiple of seq_len");
  require(K.rows() == Q.rows() && V.rows() == Q.rows() && K.cols() == Q.cols(),
          "ag::block_attention: q/k/v shape mismatch");
  const std::size_t blocks = Q.rows() / seq_len;
  const std::size_t dk = Q.cols();
  const std::size_t dv = V.cols();
  Matrix weights(Q.rows(), seq_len);  // stacked per-block attention matrices
  Matrix out(Q.rows(), dv);
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t base = b * seq_len;
    for (std::size_t i = 0; i < seq_len; ++i) {
      auto w = weights.row(base + i);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < seq_len; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += Q(base + i, c) * K(base + j, c);
        w[j] = s * scale;
        mx = std::max(mx, w[j]);
      }
      double z = 0.0;
      for (double& x : w) {
        x = std::exp(x - mx);
        z += x;
      }
      for (double& x : w) x /= z;
      auto o = out.row(base + i);
      for (std::size_t j = 0; j < seq_len; ++j)
        for (std::size_t c = 0; c < dv; ++c) o[c] += w[j] * V(base + j, c);
    }
  }
  const std::size_t iq = q.id, ik = k.id, iv = v.id;
  return t.push(
      "block_attention", std::move(out), {iq, ik, iv},
      [iq, ik, iv, seq_len, scale, weights = std::move(weights)](Tape& t, std::size_t self) {
        const Matrix& g = t.adjoint(self);
        const Matrix& Q = t.value(iq);
        const Matrix& K = t.value(ik);
        const Matrix& V = t.value(iv);
        const std::size_t blocks = Q.rows() / seq_len;
        Matrix dq(Q.rows(), Q.cols()), dk(K.rows(), K.cols()), dv(V.rows(), V.cols());
        std::vector<double> ds(seq_len);
        for (std::size_t b = 0; b < blocks; ++b) {
          const std::size_t base = b * seq_len;
          for (std::size_t i = 0; i < seq_len; ++i) {
            const auto w = weights.row(base + i);
            const auto gi = g.row(base + i);
            double acc = 0.0;
            for (std::size_t j = 0; j < seq_len; ++j) {
              const double da = dot(gi, V.row(base + j));
              ds[j] = da;
              acc += w[j] * da;
              for (std::size_t c = 0; c < V.cols(); ++c) dv(base + j, c) += w[j] * gi[c];
            }
            for (std::size_t j = 0; j < seq_len; ++j) {
              const double s = w[j] * (ds[j] - acc) * scale;
              if (s == 0.0) continue;
              for (std::size_t c = 0; c < Q.cols(); ++c) {
                dq(base + i, c) += s * K(base + j, c);
                dk(base + j, c) += s * Q(base + i, c);
              }
            }
          }
        }
        t.accumulate(iq, std::move(dq));
        t.accumulate(ik, std::move(dk));
        t.accumulate(iv, std::move(dv));
      });
}

Var mean_pool_blocks(Var a, std::size_t seq_len) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  require(seq_len >= 1 && x.rows() % seq_len == 0, "ag::mean_pool_blocks: rows not a multiple of seq_len");
  const std::size_t blocks = x.rows() / seq_len;
  const double inv = 1.0 / static_cast<double>(seq_len);
  Matrix out(blocks, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r / seq_len, c) += x(r, c) * inv;
  const std::size_t ia = a.id;
  return t.push("mean_pool_blocks", std::move(out), {ia},
                [ia, seq_len, inv](Tape& t, std::size_t self) {
                  const Matrix& g = t.adjoint(self);
                  const Matrix& x = t.value(ia);
                  Matrix d(x.rows(), x.cols());
                  for (std::size_t r = 0; r < x.rows(); ++r)
                    for (std::size_t c = 0; c < x.cols(); ++c) d(r, c) = g(r / seq_len, c) * inv;
                  t.accumulate(ia, std::move(d));
                });
}

Var fault_negate_grad(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id;
  return t.push("fault_negate_grad", a.value(), {ia}, [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, t.adjoint(self) * -1.0);
  });
}

double evaluate(const Function& f, std::span<const Matrix> params) {
  Tape t;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Matrix& p : params) vars.push_back(t.leaf(p));
  const Var out = f(t, vars);
  require(out.rows() == 1 && out.cols() == 1, "ag::evaluate: function output is not scalar");
  return out.scalar();
}

std::vector<Matrix> grad(const Function& f, std::span<const Matrix> params) {
  Tape t;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Matrix& p : params) vars.push_back(t.leaf(p));
  const Var out = f(t, vars);
  require(out.rows() == 1 && out.cols() == 1,
          "ag::grad: function output is " + std::to_string(out.rows()) + "x" +
              std::to_string(out.cols()) + ", expected scalar");
  t.backward(out);
  std::vector<Matrix> grads;
  grads.reserve(vars.size());
  for (const Var& v : vars) grads.push_back(t.grad(v));
  return grads;
}

GradientCheck check_gradient(const Function& f, std::span<const Matrix> params, double step,
                             std::size_t max_coords, std::uint64_t seed) {
  require(step >= 1e-7 && step <= 1e-3, "check_gradient: step must lie in [1e-7, 1e-3]");
  const std::vector<Matrix> analytic = grad(f, params);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::size_t total = 0;
  for (const Matrix& p : params) total += p.size();
  if (total <= max_coords) {
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t i = 0; i < params[k].size(); ++i) coords.emplace_back(k, i);
  } else {
    std::vector<std::size_t> flat(total);
    std::iota(flat.begin(), flat.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(flat.begin(), flat.end(), rng);
    flat.resize(max_coords);
    std::sort(flat.begin(), flat.end());
    std::size_t k = 0, base = 0;
    for (std::size_t idx : flat) {
      while (idx >= base + params[k].size()) base += params[k++].size();
      coords.emplace_back(k, idx - base);
    }
  }

  std::vector<Matrix> work(params.begin(), params.end());
  GradientCheck result;
  result.coordinates = coords.size();
  for (const auto& [k, i] : coords) {
    const double orig = work[k].data()[i];
    work[k].data()[i] = orig + step;
    const double fp = evaluate(f, work);
    work[k].data()[i] = orig - step;
    const double fm = evaluate(f, work);
    work[k].data()[i] = orig;
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = analytic[k].data()[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (rel > result.max_rel_err) {
      result.max_rel_err = rel;
      result.worst_param = k;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace headgame::ag
