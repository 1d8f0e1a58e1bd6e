#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "headgame/arbitration.hpp"
#include "headgame/errors.hpp"
#include "headgame/rng.hpp"

using namespace headgame;

namespace {

GradientSet random_set(Rng& rng, std::size_t k, std::size_t dim) {
  GradientSet gs;
  for (std::size_t i = 0; i < k; ++i) {
    const Matrix g = gaussian_matrix(rng, 1, dim);
    gs.gradients.emplace_back(g.data().begin(), g.data().end());
    gs.names.push_back("g" + std::to_string(i));
  }
  return gs;
}

// ||M a - 1/a||_inf with M the explicit pairwise dot products.
double residual_oracle(const GradientSet& gs, const std::vector<double>& a) {
  double worst = 0.0;
  for (std::size_t i = 0; i < gs.size(); ++i) {
    double ma = 0.0;
    for (std::size_t j = 0; j < gs.size(); ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < gs.gradients[i].size(); ++c)
        d += gs.gradients[i][c] * gs.gradients[j][c];
      ma += d * a[j];
    }
    worst = std::max(worst, std::abs(ma - 1.0 / a[i]));
  }
  return worst;
}

const std::vector<double> kFallback{1.0, 0.352, 0.179};

}  // namespace

TEST_SUITE("arbitration") {
  TEST_CASE("single gradient has the closed form 1/norm") {
    GradientSet gs;
    gs.gradients = {{3.0, 4.0}};
    gs.names = {"ce"};
    const NashResult r = nash_weights(gs, std::vector<double>{1.0});
    REQUIRE(r.converged);
    CHECK(std::abs(r.alpha[0] - 0.2) < 1e-10);
  }

  TEST_CASE("orthogonal gradients of equal norm") {
    GradientSet gs;
    gs.gradients = {{2.0, 0.0, 0.0}, {0.0, 0.0, -2.0}};
    gs.names = {"a", "b"};
    const NashResult r = nash_weights(gs, std::vector<double>{1.0, 1.0});
    REQUIRE(r.converged);
    CHECK(std::abs(r.alpha[0] - 0.5) < 1e-10);
    CHECK(std::abs(r.alpha[1] - 0.5) < 1e-10);
  }

  TEST_CASE("random three-task sets meet the fixed point") {
    Rng rng(1);
    for (int s = 0; s < 50; ++s) {
      const GradientSet gs = random_set(rng, 3, 20);
      const NashResult r = nash_weights(gs, kFallback);
      REQUIRE(r.converged);
      CHECK_FALSE(r.fallback);
      CHECK(residual_oracle(gs, r.alpha) < 1e-8);
      CHECK(r.residual < 1e-8);
      for (double a : r.alpha) CHECK(a > 0.0);
    }
  }

  TEST_CASE("nearly collinear gradients still converge") {
    Rng rng(2);
    GradientSet gs = random_set(rng, 3, 10);
    for (std::size_t c = 0; c < 10; ++c) gs.gradients[1][c] = gs.gradients[0][c] * 1.5 + 1e-3 * gs.gradients[1][c];
    const NashResult r = nash_weights(gs, kFallback);
    CHECK(r.converged);
    if (r.converged) CHECK(residual_oracle(gs, r.alpha) < 1e-8);
  }

  TEST_CASE("scaling one gradient rescales its weight inversely") {
    Rng rng(3);
    const GradientSet gs = random_set(rng, 3, 15);
    GradientSet scaled = gs;
    for (double& v : scaled.gradients[2]) v *= 4.0;
    const NashResult a = nash_weights(gs, kFallback);
    const NashResult b = nash_weights(scaled, kFallback);
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    CHECK(b.alpha[2] == doctest::Approx(a.alpha[2] / 4.0).epsilon(1e-7));
    const auto ca = combine(gs, a.alpha);
    const auto cb = combine(scaled, b.alpha);
    for (std::size_t c = 0; c < ca.size(); ++c) CHECK(std::abs(ca[c] - cb[c]) < 1e-7);
  }

  TEST_CASE("zero gradients are dropped with weight zero") {
    Rng rng(4);
    GradientSet gs = random_set(rng, 3, 8);
    std::fill(gs.gradients[1].begin(), gs.gradients[1].end(), 0.0);
    const NashResult r = nash_weights(gs, kFallback);
    CHECK(r.dropped[1]);
    CHECK(r.alpha[1] == 0.0);
    CHECK(r.converged);
    CHECK(r.alpha[0] > 0.0);
  }

  TEST_CASE("non-convergence falls back to the given weights exactly") {
    Rng rng(5);
    const GradientSet gs = random_set(rng, 3, 12);
    NashOptions o;
    o.max_iters = 1;
    o.tol = 0.0;
    o.newton_polish = false;
    const NashResult r = nash_weights(gs, kFallback, o);
    CHECK(r.fallback);
    CHECK_FALSE(r.converged);
    CHECK(r.alpha == kFallback);
    const auto c = combine(gs, r.alpha);
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double ref = 1.0 * gs.gradients[0][i] + 0.352 * gs.gradients[1][i] + 0.179 * gs.gradients[2][i];
      CHECK(c[i] == ref);
    }
  }

  TEST_CASE("combine matches an elementwise loop") {
    Rng rng(6);
    const GradientSet gs = random_set(rng, 3, 9);
    const auto first = combine(gs, std::vector<double>{1.0, 0.0, 0.0});
    CHECK(first == gs.gradients[0]);
    const auto zero = combine(gs, std::vector<double>{0.0, 0.0, 0.0});
    for (double v : zero) CHECK(v == 0.0);
    const std::vector<double> a{0.3, -1.2, 2.5};
    const auto c = combine(gs, a);
    for (std::size_t i = 0; i < 9; ++i) {
      double ref = 0.0;
      for (std::size_t k = 0; k < 3; ++k) ref += a[k] * gs.gradients[k][i];
      CHECK(std::abs(c[i] - ref) < 1e-15);
    }
    CHECK_THROWS_AS(combine(gs, std::vector<double>{1.0}), ValidationError);
  }

  TEST_CASE("gradient Gram matrix and validation") {
    GradientSet gs;
    gs.gradients = {{1.0, 2.0}, {3.0, -1.0}};
    gs.names = {"a", "b"};
    const Matrix m = gradient_gram(gs);
    CHECK(m(0, 0) == 5.0);
    CHECK(m(0, 1) == 1.0);
    CHECK(m(1, 0) == 1.0);
    CHECK(m(1, 1) == 10.0);
    GradientSet bad;
    bad.gradients = {{1.0}, {1.0, 2.0}};
    bad.names = {"a", "b"};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    CHECK_THROWS_AS(GradientSet{}.validate(), ValidationError);
  }
}
