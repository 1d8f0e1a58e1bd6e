#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "headgame/analysis.hpp"
#include "headgame/errors.hpp"
#include "headgame/numerics.hpp"
#include "headgame/rng.hpp"

using namespace headgame;

namespace {

// Symmetric block matrix with unit diagonal and symmetric Gaussian noise.
Matrix planted(const std::vector<std::size_t>& labels, double intra, double noise, Rng& rng) {
  const std::size_t h = labels.size();
  std::normal_distribution<double> nd(0.0, noise);
  Matrix g(h, h);
  for (std::size_t i = 0; i < h; ++i) {
    g(i, i) = 1.0;
    for (std::size_t j = i + 1; j < h; ++j) {
      const double v = (labels[i] == labels[j] ? intra : 0.0) + (noise > 0 ? nd(rng) : 0.0);
      g(i, j) = g(j, i) = v;
    }
  }
  return g;
}

bool same_comembership(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if ((a[i] == a[j]) != (b[i] == b[j])) return false;
  return true;
}

// Two-sided exact p by enumerating every assignment of the pooled values
// to the first sample and counting pairwise wins.
double brute_force_p(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> pooled = x;
  pooled.insert(pooled.end(), y.begin(), y.end());
  const std::size_t n = pooled.size(), n1 = x.size();
  const double center = static_cast<double>(n1 * y.size()) / 2.0;
  auto u_of = [&](const std::vector<bool>& in_first) {
    double u = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (in_first[i] && !in_first[j]) u += pooled[i] > pooled[j] ? 1.0 : (pooled[i] == pooled[j] ? 0.5 : 0.0);
    return u;
  };
  std::vector<bool> obs(n, false);
  std::fill(obs.begin(), obs.begin() + static_cast<long>(n1), true);
  const double dev = std::abs(u_of(obs) - center);
  std::vector<bool> mask(n, false);
  std::fill(mask.end() - static_cast<long>(n1), mask.end(), true);
  std::size_t hit = 0, all = 0;
  do {
    ++all;
    if (std::abs(u_of(mask) - center) >= dev - 1e-9) ++hit;
  } while (std::next_permutation(mask.begin(), mask.end()));
  return static_cast<double>(hit) / static_cast<double>(all);
}

std::vector<CurvePoint> planted_curve(double a, double lambda, double c, std::size_t n, double lo,
                                      double hi) {
  std::vector<CurvePoint> pts;
  for (std::size_t k = 0; k < n; ++k) {
    const double g = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
    pts.push_back({g, a - lambda / (1.0 - c * g)});
  }
  return pts;
}

Snapshot snap(std::size_t step, const Matrix& g) {
  Snapshot s;
  s.step = step;
  s.g = g;
  s.gamma = frobenius_norm(g - Matrix::identity(g.rows()));
  return s;
}

long lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

}  // namespace

TEST_SUITE("analysis") {
  TEST_CASE("adjusted Rand index values") {
    const std::vector<std::size_t> a{0, 0, 0, 1, 1, 1};
    const std::vector<std::size_t> relabeled{4, 4, 4, 2, 2, 2};
    CHECK(adjusted_rand_index(a, a) == doctest::Approx(1.0));
    CHECK(adjusted_rand_index(a, relabeled) == doctest::Approx(1.0));
    const std::vector<std::size_t> b{0, 0, 1, 1, 2, 2};
    CHECK(adjusted_rand_index(a, b) == doctest::Approx(0.8 / 3.3).epsilon(1e-12));
    CHECK_THROWS_AS(adjusted_rand_index(a, std::vector<std::size_t>{0, 1}), ValidationError);
  }

  TEST_CASE("two planted blocks are recovered exactly") {
    const std::vector<std::size_t> truth{0, 0, 0, 0, 1, 1, 1, 1};
    Rng rng(1);
    const Matrix g = planted(truth, 0.8, 0.0, rng);
    const CoalitionPartition p = spectral_bicluster(g);
    CHECK(p.k == 2);
    CHECK(adjusted_rand_index(p.labels, truth) == doctest::Approx(1.0));
    CHECK_FALSE(p.degenerate);
    CHECK(p.modularity > 0.0);
    std::vector<std::size_t> sorted = p.reorder;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  }

  TEST_CASE("identity G is degenerate") {
    const CoalitionPartition p = spectral_bicluster(Matrix::identity(6));
    CHECK(p.degenerate);
    CHECK(p.k == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(p.labels[i] == i);
  }

  TEST_CASE("noisy four-block planted partitions") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      std::vector<std::size_t> truth(16);
      for (std::size_t i = 0; i < 16; ++i) truth[i] = i % 4;
      std::shuffle(truth.begin(), truth.end(), rng);
      const Matrix g = planted(truth, 0.6, 0.05, rng);
      BiclusterOptions o;
      o.seed = seed;
      const CoalitionPartition p = spectral_bicluster(g, o);
      CHECK(adjusted_rand_index(p.labels, truth) >= 0.9);
      BiclusterOptions fixed = o;
      fixed.k = 4;
      CHECK(spectral_bicluster(g, fixed).k == 4);
    }
  }

  TEST_CASE("biclustering is permutation equivariant") {
    Rng rng(2);
    std::vector<std::size_t> truth(12);
    for (std::size_t i = 0; i < 12; ++i) truth[i] = i % 3;
    const Matrix g = planted(truth, 0.5, 0.05, rng);
    std::vector<std::size_t> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix gp(12, 12);
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t j = 0; j < 12; ++j) gp(i, j) = g(perm[i], perm[j]);
    const CoalitionPartition a = spectral_bicluster(g);
    const CoalitionPartition b = spectral_bicluster(gp);
    std::vector<std::size_t> pulled(12);
    for (std::size_t i = 0; i < 12; ++i) pulled[i] = a.labels[perm[i]];
    CHECK(same_comembership(pulled, b.labels));
  }

  TEST_CASE("Mann-Whitney exact example") {
    const std::vector<double> x{1, 2, 3}, y{-1, -2, -3};
    const MannWhitneyResult r = mann_whitney(x, y);
    CHECK(r.exact);
    CHECK(r.u == 9.0);
    CHECK(r.p_value == doctest::Approx(0.1).epsilon(1e-14));
    const MannWhitneyResult same = mann_whitney(x, x);
    CHECK(same.p_value >= 0.99);
    CHECK_THROWS_AS(mann_whitney(std::vector<double>{}, y), ValidationError);
  }

  TEST_CASE("Mann-Whitney exact mode matches brute-force enumeration") {
    Rng rng(3);
    std::uniform_int_distribution<int> small(0, 4);
    std::size_t cases = 0;
    for (std::size_t n1 = 1; n1 <= 9; ++n1)
      for (std::size_t n2 = 1; n1 + n2 <= 10; ++n2) {
        for (int rep = 0; rep < 2; ++rep) {
          std::vector<double> x(n1), y(n2);
          // rep 1 draws from a small integer range so ties are common.
          for (double& v : x) v = rep == 0 ? std::normal_distribution<double>()(rng) : small(rng);
          for (double& v : y) v = rep == 0 ? std::normal_distribution<double>()(rng) + 0.5 : small(rng);
          const MannWhitneyResult r = mann_whitney(x, y);
          CHECK(r.exact);
          CHECK(std::abs(r.p_value - brute_force_p(x, y)) < 1e-12);
          ++cases;
        }
      }
    CHECK(cases == 90);
  }

  TEST_CASE("Mann-Whitney normal approximation") {
    Rng rng(4);
    std::vector<double> x(24), y(67);
    for (double& v : x) v = std::normal_distribution<double>(0.01, 0.005)(rng);
    for (double& v : y) v = std::normal_distribution<double>(0.0, 0.005)(rng);
    const MannWhitneyResult r = mann_whitney(x, y);
    CHECK_FALSE(r.exact);
    CHECK(r.p_value < 0.05);
    const MannWhitneyResult null = mann_whitney(x, x);
    CHECK(null.p_value > 0.9);
    // Agreement with the exact distribution near the switchover size.
    std::vector<double> a(11), b(11);
    for (double& v : a) v = std::normal_distribution<double>()(rng);
    for (double& v : b) v = std::normal_distribution<double>(0.6, 1.0)(rng);
    CHECK(std::abs(mann_whitney(a, b, 0).p_value - mann_whitney(a, b, 22).p_value) < 0.02);
  }

  TEST_CASE("coalition delta test splits pairs by cluster") {
    CoalitionPartition p;
    p.labels = {0, 0, 1, 1};
    p.k = 2;
    Matrix d(4, 4);
    d(0, 1) = d(1, 0) = 0.5;
    d(2, 3) = d(3, 2) = 0.7;
    d(0, 2) = d(2, 0) = -0.1;
    const CoalitionDeltaResult r = coalition_delta_test(d, p);
    CHECK(r.intra == std::vector<double>{0.5, 0.7});
    CHECK(r.extra.size() == 4);
    CHECK(r.mean_intra == doctest::Approx(0.6));
    CHECK(r.mean_extra == doctest::Approx(-0.025));
    CoalitionPartition all_one;
    all_one.labels = {0, 0, 0, 0};
    CHECK_THROWS_AS(coalition_delta_test(d, all_one), ValidationError);
  }

  TEST_CASE("curve fit recovers planted parameters") {
    const auto pts = planted_curve(0.5, 0.3, 0.2, 20, 0.1, 3.0);
    FitOptions o;
    o.n_boot = 0;
    const FitResult f = fit_poa_curve(pts, o);
    CHECK_FALSE(f.rejected);
    CHECK(std::abs(f.a - 0.5) < 1e-3);
    CHECK(std::abs(f.lambda - 0.3) < 1e-3);
    CHECK(std::abs(f.c - 0.2) < 1e-3);
    CHECK(f.r2 <= 1.0);
    CHECK(f.r2 > 0.999999);
    for (std::size_t k = 1; k < f.sse_history.size(); ++k) CHECK(f.sse_history[k] <= f.sse_history[k - 1]);
    for (const CurvePoint& p : pts) CHECK(f.c * p.gamma < 1.0);
  }

  TEST_CASE("curve fit of a constant family") {
    const auto pts = planted_curve(0.5, 0.3, 0.0, 12, 0.0, 2.0);
    FitOptions o;
    o.n_boot = 0;
    const FitResult f = fit_poa_curve(pts, o);
    CHECK_FALSE(f.rejected);
    for (const CurvePoint& p : pts) CHECK(std::abs(f.predict(p.gamma) - 0.2) < 1e-9);
    CHECK(f.sse < 1e-18);
  }

  TEST_CASE("curve fit rejections and preconditions") {
    std::vector<CurvePoint> flat(6, CurvePoint{0.4, 0.1});
    const FitResult f = fit_poa_curve(flat);
    CHECK(f.rejected);
    CHECK_FALSE(f.reason.empty());
    CHECK_THROWS_AS(fit_poa_curve(std::vector<CurvePoint>(4, CurvePoint{0.1, 0.1})), ValidationError);
    std::vector<CurvePoint> neg = planted_curve(0.5, 0.3, 0.2, 6, 0.1, 1.0);
    neg[0].gamma = -0.1;
    CHECK_THROWS_AS(fit_poa_curve(neg), ValidationError);
  }

  TEST_CASE("bootstrap bands bracket the fit and are deterministic") {
    Rng rng(5);
    auto pts = planted_curve(0.5, 0.3, 0.2, 25, 0.1, 3.0);
    for (CurvePoint& p : pts) p.delta_h += std::normal_distribution<double>(0.0, 0.02)(rng);
    FitOptions o;
    o.n_boot = 200;
    o.seed = 9;
    const FitResult f = fit_poa_curve(pts, o);
    CHECK(f.n_boot > 150);
    REQUIRE(f.band_gamma.size() == o.band_points);
    for (std::size_t k = 0; k < f.band_gamma.size(); ++k) {
      CHECK(f.band_low[k] <= f.band_high[k]);
      const double pred = f.predict(f.band_gamma[k]);
      CHECK(f.band_low[k] <= pred + 1e-9);
      CHECK(pred <= f.band_high[k] + 1e-9);
    }
    const auto [lo, hi] = f.band_at(1.5);
    CHECK(lo <= hi);
    const FitResult again = fit_poa_curve(pts, o);
    CHECK(again.band_low == f.band_low);
    CHECK(again.band_high == f.band_high);
  }

  TEST_CASE("delta-h points use matched steps") {
    std::vector<Snapshot> base, reg;
    for (std::size_t s : {0, 25, 50, 75}) {
      Snapshot b = snap(s, Matrix::identity(2));
      b.p_hat = 0.5;
      base.push_back(b);
    }
    for (std::size_t s : {25, 50, 100}) {
      Snapshot r = snap(s, Matrix::identity(2));
      r.gamma = 0.01 * static_cast<double>(s);
      r.p_hat = 0.4;
      reg.push_back(r);
    }
    const auto pts = delta_h_points(base, reg);
    REQUIRE(pts.size() == 2);
    CHECK(pts[0].gamma == 0.25);
    CHECK(pts[1].gamma == 0.5);
    CHECK(pts[0].delta_h == doctest::Approx(0.1));
  }

  TEST_CASE("pair dynamics on constant and ramping logs") {
    const Matrix g0 = Matrix::from_rows({{1, 0.4, 0.2}, {0.4, 1, -0.3}, {0.2, -0.3, 1}});
    std::vector<Snapshot> flat;
    for (std::size_t s = 0; s < 5; ++s) flat.push_back(snap(25 * s, g0));
    const PairDynamics d = pair_dynamics(flat);
    CHECK(d.strengthen + d.weaken == 0);
    CHECK(d.flat == 3);
    for (const PairTrace& p : d.pairs)
      for (double v : p.trace) CHECK(v == 0.0);

    std::vector<Snapshot> ramp;
    for (std::size_t s = 0; s <= 10; ++s) {
      Matrix g = g0;
      g(0, 1) = g(1, 0) = 0.4 * (1.0 + 0.04 * static_cast<double>(s));
      ramp.push_back(snap(10 * s, g));
    }
    const PairDynamics r = pair_dynamics(ramp, 0.1);
    CHECK(r.strengthen == 1);
    CHECK(r.weaken == 0);
    CHECK(r.flat == 2);
    CHECK(r.strengthen + r.weaken + r.flat == 3);
    const PairTrace& p01 = r.pairs[0];
    CHECK(p01.i == 0);
    CHECK(p01.j == 1);
    CHECK(p01.trend == PairTrend::kStrengthen);
    REQUIRE(p01.crossing_step.has_value());
    // relative change 0.04 s exceeds 0.1 first at s = 3
    CHECK(*p01.crossing_step == 30);
    CHECK(p01.trace.back() == doctest::Approx(0.4));
    CHECK_THROWS_AS(pair_dynamics(std::vector<Snapshot>{flat[0]}), ValidationError);
  }

  TEST_CASE("percentile interpolation") {
    CHECK(percentile({4, 1, 3, 2}, 0.5) == doctest::Approx(2.5));
    CHECK(percentile({4, 1, 3, 2}, 0.25) == doctest::Approx(1.75));
    CHECK(percentile({4, 1, 3, 2}, 0.0) == 1.0);
    CHECK(percentile({4, 1, 3, 2}, 1.0) == 4.0);
  }

  TEST_CASE("plot data writers emit one row per item") {
    CoalitionPartition p;
    p.labels = {0, 0, 1};
    p.k = 2;
    p.reorder = {0, 1, 2};
    std::ostringstream a;
    write_partition_csv(a, p);
    CHECK(lines(a.str()) == 4);

    CoalitionDeltaResult r;
    r.intra = {0.1, 0.2};
    r.extra = {-0.1, 0.0, 0.05};
    std::ostringstream h;
    write_delta_histogram_csv(h, r, 5);
    CHECK(lines(h.str()) == 6);

    std::vector<Snapshot> log{snap(0, Matrix::identity(3)), snap(10, Matrix::identity(3))};
    std::ostringstream t;
    write_traces_csv(t, pair_dynamics(log));
    CHECK_FALSE(t.str().empty());
  }
}
