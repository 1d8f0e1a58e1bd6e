#include "headgame/arbitration.hpp"

#include <algorithm>
#include <cmath>

#include "headgame/errors.hpp"

namespace headgame {

void GradientSet::validate() const {
  require(!gradients.empty(), "GradientSet: need at least one gradient");
  for (const auto& g : gradients)
    require(g.size() == gradients.front().size(), "GradientSet: gradients differ in length");
}

Matrix gradient_gram(const GradientSet& gs) {
  gs.validate();
  const std::size_t k = gs.size();
  Matrix m(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < k; ++j) m(i, j) = m(j, i) = dot(gs.gradients[i], gs.gradients[j]);
  return m;
}

namespace {

double residual(const Matrix& m, std::span<const double> a) {
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double ma = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) ma += m(i, j) * a[j];
    r = std::max(r, std::abs(ma - 1.0 / a[i]));
  }
  return r;
}

double objective(const Matrix& m, std::span<const double> a) {
  double f = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.size(); ++j) f += 0.5 * a[i] * m(i, j) * a[j];
    f -= std::log(a[i]);
  }
  return f;
}

// Solves the k x k system (M + diag(1/a^2)) d = -(M a - 1/a).
bool newton_direction(const Matrix& m, std::span<const double> a, std::vector<double>& d) {
  const std::size_t k = a.size();
  Matrix h = m;
  std::vector<double> rhs(k);
  for (std::size_t i = 0; i < k; ++i) {
    h(i, i) += 1.0 / (a[i] * a[i]);
    double ma = 0.0;
    for (std::size_t j = 0; j < k; ++j) ma += m(i, j) * a[j];
    rhs[i] = -(ma - 1.0 / a[i]);
  }
  Matrix l;
  try {
    l = cholesky(h);
  } catch (const ValidationError&) {
    return false;
  }
  std::vector<double> y(k);
  for (std::size_t i = 0; i < k; ++i) {
    double s = rhs[i];
    for (std::size_t j = 0; j < i; ++j) s -= l(i, j) * y[j];
    y[i] = s / l(i, i);
  }
  d.assign(k, 0.0);
  for (std::size_t i = k; i-- > 0;) {
    double s = y[i];
    for (std::size_t j = i + 1; j < k; ++j) s -= l(j, i) * d[j];
    d[i] = s / l(i, i);
  }
  return true;
}

}  // namespace

NashResult nash_weights(const GradientSet& gs, std::span<const double> fallback_weights,
                        const NashOptions& options) {
  gs.validate();
  require(fallback_weights.size() == gs.size(), "nash_weights: fallback weight count mismatch");
  const Matrix full = gradient_gram(gs);
  NashResult out;
  out.alpha.assign(gs.size(), 0.0);
  out.dropped.assign(gs.size(), false);

  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < gs.size(); ++k) {
    if (full(k, k) > 0.0)
      active.push_back(k);
    else
      out.dropped[k] = true;
  }
  if (active.empty()) {
    out.converged = true;
    return out;
  }
  const std::size_t n = active.size();
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(i, j) = full(active[i], active[j]);

  std::vector<double> a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = 1.0 / std::sqrt(m(i, i));

  const double lam = options.damping;
  double res = residual(m, a);
  std::size_t it = 0;
  bool stalled = false;
  for (; it < options.max_iters && res >= options.tol; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double ma = 0.0;
      for (std::size_t j = 0; j < n; ++j) ma += m(i, j) * a[j];
      if (!(ma > 0.0)) {
        stalled = true;
        break;
      }
      a[i] = (a[i] + lam / ma) / (1.0 + lam);
    }
    if (stalled) break;
    res = residual(m, a);
  }
  if (stalled) {
    for (std::size_t i = 0; i < n; ++i) a[i] = 1.0 / std::sqrt(m(i, i));
    res = residual(m, a);
  }

  // Newton also polishes a damped solution that already meets tol; the best
  // iterate by residual is kept.
  if (options.newton_polish) {
    std::vector<double> d, trial(n), best = a;
    double best_res = res;
    for (std::size_t newton = 0; newton < 100 && best_res >= options.tol * 1e-4; ++newton, ++it) {
      if (!newton_direction(m, a, d)) break;
      const double f0 = objective(m, a);
      double step = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
        bool positive = true;
        for (std::size_t i = 0; i < n; ++i) {
          trial[i] = a[i] + step * d[i];
          positive = positive && trial[i] > 0.0;
        }
        if (!positive) continue;
        // Near the optimum the objective change drowns in rounding, so a
        // residual decrease also accepts the step.
        if (objective(m, trial) <= f0 || residual(m, trial) < res) {
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
      a = trial;
      res = residual(m, a);
      if (res < best_res) {
        best = a;
        best_res = res;
      } else if (best_res < options.tol) {
        break;
      }
    }
    a = best;
    res = best_res;
  }

  out.iterations = it;
  out.residual = res;
  out.converged = res < options.tol &&
                  std::all_of(a.begin(), a.end(), [](double x) { return x > 0.0 && std::isfinite(x); });
  if (!out.converged) {
    out.fallback = true;
    out.alpha.assign(fallback_weights.begin(), fallback_weights.end());
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) out.alpha[active[i]] = a[i];
  return out;
}

std::vector<double> combine(const GradientSet& gs, std::span<const double> alpha) {
  gs.validate();
  require(alpha.size() == gs.size(), "combine: weight count mismatch");
  std::vector<double> out(gs.gradients.front().size(), 0.0);
  for (std::size_t k = 0; k < gs.size(); ++k) {
    if (alpha[k] == 0.0) continue;
    const auto& g = gs.gradients[k];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha[k] * g[i];
  }
  return out;
}

}  // namespace headgame
