#include "headgame/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include "headgame/errors.hpp"
#include "headgame/rng.hpp"

namespace headgame {

// --- coalitions -------------------------------------------------------------

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

struct Clustering {
  std::vector<std::size_t> labels;
  double inertia = std::numeric_limits<double>::infinity();
};

Clustering lloyd(const Matrix& x, Matrix centers) {
  const std::size_t n = x.rows();
  const std::size_t k = centers.rows();
  Clustering c;
  c.labels.assign(n, k);  // k = unassigned
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = sq_dist(x.row(i), centers.row(0));
      for (std::size_t j = 1; j < k; ++j) {
        const double d = sq_dist(x.row(i), centers.row(j));
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      if (c.labels[i] != best) {
        c.labels[i] = best;
        changed = true;
      }
    }
    // Empty clusters take the point farthest from its own center.
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t l : c.labels) ++counts[l];
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] > 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[c.labels[i]] <= 1) continue;
        const double d = sq_dist(x.row(i), centers.row(c.labels[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far == n) break;
      --counts[c.labels[far]];
      c.labels[far] = j;
      ++counts[j];
      changed = true;
    }
    Matrix next(k, x.cols());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < x.cols(); ++d) next(c.labels[i], d) += x(i, d);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t d = 0; d < x.cols(); ++d)
        next(j, d) = counts[j] ? next(j, d) / static_cast<double>(counts[j]) : centers(j, d);
    centers = std::move(next);
    if (!changed && iter > 0) break;
  }
  c.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) c.inertia += sq_dist(x.row(i), centers.row(c.labels[i]));
  return c;
}

Matrix farthest_point_centers(const Matrix& x, std::size_t k) {
  const std::size_t n = x.rows();
  const Matrix centroid = column_means(x);
  std::vector<std::size_t> chosen;
  std::size_t first = 0;
  double first_d = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = sq_dist(x.row(i), centroid.row(0));
    if (d > first_d) {
      first_d = d;
      first = i;
    }
  }
  chosen.push_back(first);
  while (chosen.size() < k) {
    std::size_t pick = 0;
    double pick_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen) d = std::min(d, sq_dist(x.row(i), x.row(c)));
      if (d > pick_d) {
        pick_d = d;
        pick = i;
      }
    }
    chosen.push_back(pick);
  }
  Matrix centers(k, x.cols());
  for (std::size_t j = 0; j < k; ++j)
    std::copy(x.row(chosen[j]).begin(), x.row(chosen[j]).end(), centers.row(j).begin());
  return centers;
}

Matrix kmeanspp_centers(const Matrix& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows();
  std::uniform_int_distribution<std::size_t> any(0, n - 1);
  std::vector<std::size_t> chosen{any(rng)};
  std::vector<double> d2(n);
  while (chosen.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen) d = std::min(d, sq_dist(x.row(i), x.row(c)));
      d2[i] = d;
      total += d;
    }
    if (total <= 0.0) {
      chosen.push_back(any(rng));
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng);
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= d2[i];
      if (target <= 0.0) {
        pick = i;
        break;
      }
    }
    chosen.push_back(pick);
  }
  Matrix centers(k, x.cols());
  for (std::size_t j = 0; j < k; ++j)
    std::copy(x.row(chosen[j]).begin(), x.row(chosen[j]).end(), centers.row(j).begin());
  return centers;
}

std::vector<std::size_t> canonical_labels(std::span<const std::size_t> labels, std::size_t& k) {
  std::map<std::size_t, std::size_t> remap;
  std::vector<std::size_t> out;
  for (std::size_t l : labels) {
    auto it = remap.find(l);
    if (it == remap.end()) it = remap.emplace(l, remap.size()).first;
    out.push_back(it->second);
  }
  k = remap.size();
  return out;
}

double modularity(const Matrix& g, std::span<const std::size_t> labels) {
  const std::size_t h = g.rows();
  std::vector<double> degree(h, 0.0);
  double two_m = 0.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j)
      if (i != j) {
        degree[i] += std::abs(g(i, j));
        two_m += std::abs(g(i, j));
      }
  if (two_m <= 0.0) return 0.0;
  double q = 0.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      if (labels[i] != labels[j]) continue;
      const double a = i == j ? 0.0 : std::abs(g(i, j));
      q += a - degree[i] * degree[j] / two_m;
    }
  return q / two_m;
}

void finish_partition(CoalitionPartition& p, const Matrix& g) {
  p.reorder.resize(p.labels.size());
  std::iota(p.reorder.begin(), p.reorder.end(), std::size_t{0});
  std::stable_sort(p.reorder.begin(), p.reorder.end(),
                   [&](std::size_t a, std::size_t b) { return p.labels[a] < p.labels[b]; });
  p.modularity = modularity(g, p.labels);
}

}  // namespace

CoalitionPartition spectral_bicluster(const Matrix& g, const BiclusterOptions& options) {
  require(g.is_square() && g.rows() >= 1, "spectral_bicluster: G must be square");
  require(is_symmetric(g, 1e-9), "spectral_bicluster: G must be symmetric");
  const std::size_t h = g.rows();
  require(options.k <= h, "spectral_bicluster: k exceeds head count");
  CoalitionPartition p;

  if (frobenius_norm(g - Matrix::identity(h)) < 1e-6) {
    p.degenerate = true;
    p.labels.resize(h);
    std::iota(p.labels.begin(), p.labels.end(), std::size_t{0});
    p.k = h;
    finish_partition(p, g);
    return p;
  }
  if (h == 1) {
    p.labels = {0};
    p.k = 1;
    finish_partition(p, g);
    return p;
  }

  // Normalized affinity D^-1/2 |G| D^-1/2 (self-loops kept so isolated heads
  // have positive degree).
  Matrix a(h, h);
  std::vector<double> inv_sqrt_deg(h);
  for (std::size_t i = 0; i < h; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < h; ++j) d += std::abs(g(i, j));
    inv_sqrt_deg[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j) a(i, j) = inv_sqrt_deg[i] * std::abs(g(i, j)) * inv_sqrt_deg[j];
  const SymEig eig = sym_eig(symmetrize(a));
  std::vector<double> mu(eig.eigenvalues.rbegin(), eig.eigenvalues.rend());

  std::size_t k = options.k;
  if (k == 0) {
    const std::size_t k_hi = std::min(h, std::max<std::size_t>(2, h / 2));
    k = 2;
    double best_gap = -1.0;
    for (std::size_t c = 2; c <= k_hi; ++c) {
      const double gap = mu[c - 1] - (c < h ? mu[c] : 0.0);
      if (gap > best_gap + 1e-12) {
        best_gap = gap;
        k = c;
      }
    }
  }

  Matrix x(h, k);
  for (std::size_t i = 0; i < h; ++i) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      x(i, c) = eig.eigenvectors(i, h - 1 - c);
      n2 += x(i, c) * x(i, c);
    }
    if (n2 > 0.0)
      for (std::size_t c = 0; c < k; ++c) x(i, c) /= std::sqrt(n2);
  }

  Clustering best = lloyd(x, farthest_point_centers(x, k));
  Rng rng = make_stream(options.seed, "bicluster");
  for (std::size_t r = 0; r < options.restarts; ++r) {
    Clustering c = lloyd(x, kmeanspp_centers(x, k, rng));
    if (c.inertia < best.inertia - 1e-12) best = std::move(c);
  }
  p.labels = canonical_labels(best.labels, p.k);
  finish_partition(p, g);
  return p;
}

double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  require(a.size() == b.size() && !a.empty(), "adjusted_rand_index: label vectors differ");
  const std::size_t n = a.size();
  std::map<std::pair<std::size_t, std::size_t>, double> table;
  std::map<std::size_t, double> rows, cols;
  for (std::size_t i = 0; i < n; ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  auto c2 = [](double m) { return m * (m - 1.0) / 2.0; };
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [key, m] : table) index += c2(m);
  for (const auto& [key, m] : rows) sum_a += c2(m);
  for (const auto& [key, m] : cols) sum_b += c2(m);
  const double total = c2(static_cast<double>(n));
  const double expected = total > 0.0 ? sum_a * sum_b / total : 0.0;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index - expected == 0.0) return index == max_index ? 1.0 : 0.0;
  return (index - expected) / (max_index - expected);
}

// --- Mann-Whitney -------------------------------------------------------------

MannWhitneyResult mann_whitney(std::span<const double> x, std::span<const double> y,
                               std::size_t exact_limit) {
  require(!x.empty() && !y.empty(), "mann_whitney: both samples must be nonempty");
  const std::size_t n1 = x.size(), n2 = y.size(), n = n1 + n2;
  std::vector<std::pair<double, std::size_t>> pooled;
  for (std::size_t i = 0; i < n1; ++i) pooled.emplace_back(x[i], i);
  for (std::size_t i = 0; i < n2; ++i) pooled.emplace_back(y[i], n1 + i);
  std::sort(pooled.begin(), pooled.end());

  // Doubled midranks keep everything integral.
  std::vector<long long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    const long long r2 = static_cast<long long>(i + 1 + j);  // 2 * average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) rank2[pooled[k].second] = r2;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  long long s2 = 0;
  for (std::size_t i = 0; i < n1; ++i) s2 += rank2[i];
  const long long base = static_cast<long long>(n1 * (n1 + 1));
  const long long mid = static_cast<long long>(n1 * n2);
  const long long u2 = s2 - base;

  MannWhitneyResult r;
  r.n1 = n1;
  r.n2 = n2;
  r.u = static_cast<double>(u2) / 2.0;

  if (n <= exact_limit) {
    r.exact = true;
    const long long total2 = std::accumulate(rank2.begin(), rank2.end(), 0LL);
    // ways[j][s]: subsets of size j with doubled rank sum s.
    std::vector<std::vector<double>> ways(n1 + 1, std::vector<double>(total2 + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t item = 0; item < n; ++item)
      for (std::size_t j = std::min(item + 1, n1); j >= 1; --j)
        for (long long s = total2; s >= rank2[item]; --s)
          ways[j][s] += ways[j - 1][s - rank2[item]];
    const long long observed = std::llabs(u2 - mid);
    double hit = 0.0, all = 0.0;
    for (long long s = 0; s <= total2; ++s) {
      const double w = ways[n1][s];
      if (w == 0.0) continue;
      all += w;
      if (std::llabs(s - base - mid) >= observed) hit += w;
    }
    r.p_value = std::min(1.0, hit / all);
    return r;
  }

  const double dn = static_cast<double>(n);
  const double var = static_cast<double>(n1) * static_cast<double>(n2) / 12.0 *
                     ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  if (var <= 0.0) {
    r.p_value = 1.0;
    return r;
  }
  const double dev = std::max(0.0, std::abs(r.u - static_cast<double>(mid) / 2.0) - 0.5);
  r.p_value = std::min(1.0, std::erfc(dev / std::sqrt(var) / std::sqrt(2.0)));
  return r;
}

CoalitionDeltaResult coalition_delta_test(const Matrix& delta_g,
                                          const CoalitionPartition& partition) {
  require(delta_g.is_square(), "coalition_delta_test: delta G must be square");
  require(partition.labels.size() == delta_g.rows(),
          "coalition_delta_test: partition does not cover every head");
  CoalitionDeltaResult r;
  for (std::size_t i = 0; i < delta_g.rows(); ++i)
    for (std::size_t j = i + 1; j < delta_g.cols(); ++j)
      (partition.labels[i] == partition.labels[j] ? r.intra : r.extra).push_back(delta_g(i, j));
  require(!r.intra.empty(), "coalition_delta_test: no intra-coalition pairs");
  require(!r.extra.empty(), "coalition_delta_test: no extra-coalition pairs");
  r.mean_intra = std::accumulate(r.intra.begin(), r.intra.end(), 0.0) / static_cast<double>(r.intra.size());
  r.mean_extra = std::accumulate(r.extra.begin(), r.extra.end(), 0.0) / static_cast<double>(r.extra.size());
  r.test = mann_whitney(r.intra, r.extra);
  return r;
}

// --- curve fit ------------------------------------------------------------------

namespace {

struct LinearFit {
  double a = 0.0;
  double lambda = 0.0;
  double sse = 0.0;
};

LinearFit fit_given_c(std::span<const CurvePoint> pts, double c) {
  const double n = static_cast<double>(pts.size());
  double mx = 0.0, my = 0.0;
  std::vector<double> x(pts.size());
  for (std::size_t k = 0; k < pts.size(); ++k) {
    x[k] = 1.0 / (1.0 - c * pts[k].gamma);
    mx += x[k];
    my += pts[k].delta_h;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (pts[k].delta_h - my);
  }
  LinearFit f;
  double slope = 0.0;
  if (sxx > 1e-14 * (1.0 + mx * mx)) slope = sxy / sxx;
  f.a = my - slope * mx;
  f.lambda = -slope;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const double r = pts[k].delta_h - (f.a + slope * x[k]);
    f.sse += r * r;
  }
  return f;
}

struct CurveFit {
  double a = 0.0, lambda = 0.0, c = 0.0, sse = 0.0;
  std::vector<double> history;
};

CurveFit fit_curve(std::span<const CurvePoint> pts, double c_max, std::size_t grid) {
  CurveFit best;
  best.sse = std::numeric_limits<double>::infinity();
  std::size_t best_j = 0;
  for (std::size_t j = 0; j <= grid; ++j) {
    const double c = c_max * static_cast<double>(j) / static_cast<double>(grid);
    const LinearFit f = fit_given_c(pts, c);
    if (f.sse < best.sse) {
      best = {f.a, f.lambda, c, f.sse, {}};
      best_j = j;
    }
  }
  best.history.push_back(best.sse);

  const double step = c_max / static_cast<double>(grid);
  double lo = best_j == 0 ? 0.0 : best.c - step;
  double hi = best_j == grid ? c_max : best.c + step;
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  auto consider = [&](double c) {
    const LinearFit f = fit_given_c(pts, c);
    if (f.sse < best.sse) {
      best.a = f.a;
      best.lambda = f.lambda;
      best.c = c;
      best.sse = f.sse;
      best.history.push_back(f.sse);
    }
    return f.sse;
  };
  double x1 = hi - ratio * (hi - lo), x2 = lo + ratio * (hi - lo);
  double f1 = consider(x1), f2 = consider(x2);
  for (int it = 0; it < 100 && hi - lo > 1e-15 * (1.0 + c_max); ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - ratio * (hi - lo);
      f1 = consider(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + ratio * (hi - lo);
      f2 = consider(x2);
    }
  }
  return best;
}

}  // namespace

double FitResult::predict(double gamma) const { return a - lambda / (1.0 - c * gamma); }

std::pair<double, double> FitResult::band_at(double gamma) const {
  require(!band_gamma.empty(), "FitResult::band_at: no bands computed");
  if (gamma <= band_gamma.front()) return {band_low.front(), band_high.front()};
  if (gamma >= band_gamma.back()) return {band_low.back(), band_high.back()};
  const auto it = std::upper_bound(band_gamma.begin(), band_gamma.end(), gamma);
  const std::size_t k = static_cast<std::size_t>(it - band_gamma.begin());
  const double t = (gamma - band_gamma[k - 1]) / (band_gamma[k] - band_gamma[k - 1]);
  return {band_low[k - 1] + t * (band_low[k] - band_low[k - 1]),
          band_high[k - 1] + t * (band_high[k] - band_high[k - 1])};
}

FitResult fit_poa_curve(std::span<const CurvePoint> points, const FitOptions& options) {
  require(points.size() >= 5, "fit_poa_curve: need at least 5 points");
  require(options.grid >= 2, "fit_poa_curve: grid must have at least 2 intervals");
  double g_lo = std::numeric_limits<double>::infinity(), g_hi = 0.0;
  for (const CurvePoint& p : points) {
    require(p.gamma >= 0.0 && std::isfinite(p.gamma) && std::isfinite(p.delta_h),
            "fit_poa_curve: gammas must be finite and nonnegative");
    g_lo = std::min(g_lo, p.gamma);
    g_hi = std::max(g_hi, p.gamma);
  }
  FitResult r;
  if (g_hi - g_lo <= 1e-12 * (1.0 + g_hi)) {
    r.rejected = true;
    r.reason = "all gamma values equal";
    return r;
  }
  const double c_max = 0.99 / g_hi;
  const CurveFit fit = fit_curve(points, c_max, options.grid);
  r.a = fit.a;
  r.lambda = fit.lambda;
  r.c = fit.c;
  r.sse = fit.sse;
  r.sse_history = fit.history;

  double mean = 0.0;
  for (const CurvePoint& p : points) mean += p.delta_h;
  mean /= static_cast<double>(points.size());
  double sst = 0.0;
  for (const CurvePoint& p : points) sst += (p.delta_h - mean) * (p.delta_h - mean);
  r.r2 = sst > 0.0 ? 1.0 - r.sse / sst : (r.sse <= 1e-24 ? 1.0 : 0.0);

  if (options.n_boot == 0) return r;

  // Prediction band: refit on resampled points, add a resampled residual
  // (centered and inflated for the three fitted parameters).
  const std::size_t n = points.size();
  std::vector<double> resid(n);
  double rmean = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    resid[k] = points[k].delta_h - r.predict(points[k].gamma);
    rmean += resid[k];
  }
  rmean /= static_cast<double>(n);
  const double inflate = n > 3 ? std::sqrt(static_cast<double>(n) / static_cast<double>(n - 3)) : 1.0;
  for (double& e : resid) e = (e - rmean) * inflate;

  const std::size_t m = std::max<std::size_t>(options.band_points, 2);
  r.band_gamma.resize(m);
  for (std::size_t t = 0; t < m; ++t)
    r.band_gamma[t] = g_lo + (g_hi - g_lo) * static_cast<double>(t) / static_cast<double>(m - 1);
  std::vector<std::vector<double>> preds(m);
  Rng rng = make_stream(options.seed, "bootstrap");
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<CurvePoint> sample(n);
  for (std::size_t b = 0; b < options.n_boot; ++b) {
    double s_lo = std::numeric_limits<double>::infinity(), s_hi = 0.0;
    for (CurvePoint& s : sample) {
      s = points[pick(rng)];
      s_lo = std::min(s_lo, s.gamma);
      s_hi = std::max(s_hi, s.gamma);
    }
    std::vector<std::size_t> noise(m);
    for (std::size_t& k : noise) k = pick(rng);
    if (s_hi - s_lo <= 1e-12 * (1.0 + s_hi)) continue;
    const CurveFit bf = fit_curve(sample, c_max, options.grid);
    for (std::size_t t = 0; t < m; ++t)
      preds[t].push_back(bf.a - bf.lambda / (1.0 - bf.c * r.band_gamma[t]) + resid[noise[t]]);
    ++r.n_boot;
  }
  if (r.n_boot == 0) {
    r.band_gamma.clear();
    return r;
  }
  for (std::size_t t = 0; t < m; ++t) {
    r.band_low.push_back(percentile(preds[t], 0.025));
    r.band_high.push_back(percentile(preds[t], 0.975));
  }
  return r;
}

std::vector<CurvePoint> delta_h_points(std::span<const Snapshot> baseline,
                                       std::span<const Snapshot> regularized) {
  std::map<std::size_t, double> base;
  for (const Snapshot& s : baseline) base[s.step] = s.p_hat;
  std::vector<CurvePoint> out;
  for (const Snapshot& s : regularized) {
    const auto it = base.find(s.step);
    if (it != base.end()) out.push_back({s.gamma, it->second - s.p_hat});
  }
  return out;
}

// --- pair dynamics ------------------------------------------------------------------

const char* to_string(PairTrend t) {
  switch (t) {
    case PairTrend::kStrengthen:
      return "strengthen";
    case PairTrend::kWeaken:
      return "weaken";
    case PairTrend::kFlat:
      return "flat";
  }
  return "flat";
}

PairDynamics pair_dynamics(std::span<const Snapshot> snapshots, double threshold) {
  require(snapshots.size() >= 2, "pair_dynamics: need at least 2 snapshots");
  const std::size_t h = snapshots.front().g.rows();
  for (const Snapshot& s : snapshots)
    require(s.g.rows() == h && s.g.cols() == h, "pair_dynamics: snapshots differ in head count");
  PairDynamics d;
  for (const Snapshot& s : snapshots) d.steps.push_back(s.step);
  const Matrix& g0 = snapshots.front().g;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = i + 1; j < h; ++j) {
      PairTrace p;
      p.i = i;
      p.j = j;
      const double scale = std::max(std::abs(g0(i, j)), 1e-3);
      for (const Snapshot& s : snapshots) p.trace.push_back((s.g(i, j) - g0(i, j)) / scale);
      const double last = p.trace.back();
      p.trend = last > threshold ? PairTrend::kStrengthen
                                 : (last < -threshold ? PairTrend::kWeaken : PairTrend::kFlat);
      if (p.trend != PairTrend::kFlat) {
        for (std::size_t t = 0; t < p.trace.size(); ++t) {
          const bool crossed = p.trend == PairTrend::kStrengthen ? p.trace[t] > threshold
                                                                 : p.trace[t] < -threshold;
          if (crossed) {
            p.crossing_step = d.steps[t];
            break;
          }
        }
      }
      ++(p.trend == PairTrend::kStrengthen ? d.strengthen
                                           : (p.trend == PairTrend::kWeaken ? d.weaken : d.flat));
      d.pairs.push_back(std::move(p));
    }
  return d;
}

// --- plot data ---------------------------------------------------------------------

void write_partition_csv(std::ostream& out, const CoalitionPartition& p) {
  out << "head,cluster,position\n";
  std::vector<std::size_t> position(p.labels.size());
  for (std::size_t k = 0; k < p.reorder.size(); ++k) position[p.reorder[k]] = k;
  for (std::size_t i = 0; i < p.labels.size(); ++i)
    out << i << ',' << p.labels[i] << ',' << position[i] << '\n';
}

void write_delta_histogram_csv(std::ostream& out, const CoalitionDeltaResult& r, std::size_t bins) {
  require(bins >= 1, "write_delta_histogram_csv: need at least one bin");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* v : {&r.intra, &r.extra})
    for (double x : *v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  if (hi <= lo) hi = lo + 1e-12;
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<std::size_t> intra(bins, 0), extra(bins, 0);
  auto bin = [&](double x) {
    return std::min(bins - 1, static_cast<std::size_t>((x - lo) / width));
  };
  for (double x : r.intra) ++intra[bin(x)];
  for (double x : r.extra) ++extra[bin(x)];
  out << "bin_low,bin_high,intra,extra\n";
  for (std::size_t b = 0; b < bins; ++b)
    out << lo + width * static_cast<double>(b) << ',' << lo + width * static_cast<double>(b + 1)
        << ',' << intra[b] << ',' << extra[b] << '\n';
}

void write_fit_csv(std::ostream& out, const FitResult& fit, std::span<const CurvePoint> points) {
  out << "kind,gamma,value,band_low,band_high\n";
  for (const CurvePoint& p : points) out << "point," << p.gamma << ',' << p.delta_h << ",,\n";
  for (std::size_t t = 0; t < fit.band_gamma.size(); ++t)
    out << "curve," << fit.band_gamma[t] << ',' << fit.predict(fit.band_gamma[t]) << ','
        << fit.band_low[t] << ',' << fit.band_high[t] << '\n';
}

void write_traces_csv(std::ostream& out, const PairDynamics& d) {
  out << "i,j,trend,crossing_step";
  for (std::size_t s : d.steps) out << ",step_" << s;
  out << '\n';
  for (const PairTrace& p : d.pairs) {
    out << p.i << ',' << p.j << ',' << to_string(p.trend) << ',';
    if (p.crossing_step) out << *p.crossing_step;
    for (double v : p.trace) out << ',' << v;
    out << '\n';
  }
}

double percentile(std::vector<double> values, double q) {
  require(!values.empty(), "percentile: empty sample");
  require(q >= 0.0 && q <= 1.0, "percentile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t k = static_cast<std::size_t>(pos);
  if (k + 1 >= values.size()) return values.back();
  const double t = pos - static_cast<double>(k);
  return values[k] + t * (values[k + 1] - values[k]);
}

}  // namespace headgame
