#include <doctest.h>

#include <cmath>
#include <vector>

#include "headgame/autograd.hpp"
#include "headgame/errors.hpp"
#include "headgame/losses.hpp"
#include "headgame/numerics.hpp"
#include "headgame/rng.hpp"
#include "headgame/verify.hpp"

using namespace headgame;

namespace {

// Scalar-loop Barlow Twins oracle with the same z-score epsilon.
double abt_oracle(const std::vector<Matrix>& o, const Matrix& g, const LossConfig& cfg) {
  const std::size_t h = o.size();
  const std::size_t n = o[0].rows();
  const std::size_t dh = o[0].cols();
  std::vector<Matrix> z;
  for (const Matrix& m : o) {
    Matrix zm(n, dh);
    for (std::size_t k = 0; k < dh; ++k) {
      double mu = 0.0;
      for (std::size_t r = 0; r < n; ++r) mu += m(r, k);
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t r = 0; r < n; ++r) var += (m(r, k) - mu) * (m(r, k) - mu);
      const double sd = std::sqrt(var / static_cast<double>(n));
      for (std::size_t r = 0; r < n; ++r) zm(r, k) = (m(r, k) - mu) / (sd + cfg.zscore_eps);
    }
    z.push_back(zm);
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = i + 1; j < h; ++j, ++pairs) {
      double fro = 0.0;
      for (std::size_t a = 0; a < dh; ++a)
        for (std::size_t b = 0; b < dh; ++b) {
          double c = 0.0;
          for (std::size_t r = 0; r < n; ++r) c += z[i](r, a) * z[j](r, b);
          c /= static_cast<double>(n);
          const double t = (cfg.subtract_identity && a == b) ? 1.0 : 0.0;
          fro += (c - t) * (c - t);
        }
      total += adaptive_weight(g(i, j), cfg) * fro;
    }
  return total / static_cast<double>(pairs);
}

Matrix random_g(Rng& rng, std::size_t h) {
  const Matrix f = gaussian_matrix(rng, h, h + 2);
  Matrix g(h, h);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j) g(i, j) = cosine(f.row(i), f.row(j)).value;
  return g;
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("default constants") {
    const LossConfig c;
    CHECK(c.lambda_abt == 0.179);
    CHECK(c.lambda_ldb == 0.352);
    CHECK(c.eps_ldb == 0.01);
    CHECK(c.bt_alpha == 0.929);
    CHECK(c.bt_beta == 15.99);
    CHECK(c.bt_tau == 0.0);
    CHECK(c.ema_alpha == 0.1);
    CHECK(c.ema_init == 20.0);
    CHECK(c.ema_target == 20.0);
    CHECK(c.warmup_frac == 0.02);
    CHECK(c.cooldown_start_frac == 0.879);
    CHECK(c.subtract_identity);
    CHECK_NOTHROW(c.validate());
    LossConfig bad;
    bad.warmup_frac = 0.9;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = LossConfig{};
    bad.bt_alpha = 1.5;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("cross-entropy analytic values") {
    const Matrix uniform(3, 5, 0.2);
    const std::vector<int> labels{0, 4, 2};
    CHECK(ce_loss(uniform, labels).value == doctest::Approx(std::log(5.0)).epsilon(1e-15));
    const Matrix oh = one_hot(labels, 5);
    CHECK(ce_loss(oh, oh).value == 0.0);
    CHECK_FALSE(ce_loss(oh, oh).clamped);
    const std::vector<int> wrong{1, 0, 0};
    const CrossEntropy c = ce_loss(oh, wrong);
    CHECK(c.clamped);
    CHECK(c.value == doctest::Approx(-std::log(1e-12)));
  }

  TEST_CASE("cross-entropy against soft targets matches direct summation") {
    Rng rng(1);
    const Matrix p = softmax_rows(gaussian_matrix(rng, 20, 6));
    const Matrix y = softmax_rows(gaussian_matrix(rng, 20, 6));
    double ref = 0.0;
    for (std::size_t r = 0; r < 20; ++r)
      for (std::size_t c = 0; c < 6; ++c) ref -= y(r, c) * std::log(p(r, c));
    CHECK(ce_loss(p, y).value == doctest::Approx(ref / 20.0).epsilon(1e-13));
  }

  TEST_CASE("log-determinant barrier analytic values") {
    CHECK(ldb_loss(Matrix::identity(16), 0.01) == doctest::Approx(-16 * std::log(1.01)).epsilon(1e-13));
    CHECK(std::abs(ldb_loss(Matrix::identity(16), 0.01) + 0.15921) < 1e-5);
    const Matrix ones(2, 2, 1.0);
    CHECK(ldb_loss(ones, 0.01) == doctest::Approx(-std::log(0.0201)).epsilon(1e-12));
    CHECK(std::abs(ldb_loss(ones, 0.01) - 3.9070355) < 1e-6);
  }

  TEST_CASE("barrier decreases along the segment toward the identity") {
    Rng rng(2);
    for (int s = 0; s < 10; ++s) {
      const Matrix g = random_g(rng, 5);
      const Matrix eye = Matrix::identity(5);
      double prev = ldb_loss(g, 0.01);
      for (int k = 1; k <= 10; ++k) {
        const double t = k / 10.0;
        const double cur = ldb_loss(g * (1.0 - t) + eye * t, 0.01);
        CHECK(cur < prev);
        prev = cur;
      }
    }
  }

  TEST_CASE("adaptive weight values and bounds") {
    LossConfig c;
    CHECK(adaptive_weight(0.0, c) == doctest::Approx(0.929 + 0.071 * std::log(2.0)).epsilon(1e-15));
    CHECK(std::abs(adaptive_weight(0.0, c) - 0.97821) < 1e-5);
    CHECK(adaptive_weight(1e6, c) == doctest::Approx(0.929).epsilon(1e-15));
    LossConfig floor = c;
    floor.bt_alpha = 1.0;
    for (double g : {-1.0, 0.0, 0.3, 1.0}) CHECK(adaptive_weight(g, floor) == 1.0);
    const double hi = c.bt_alpha + (1 - c.bt_alpha) * softplus(c.bt_beta * c.bt_tau + c.bt_beta);
    double prev = adaptive_weight(-1.0, c);
    for (int k = -10; k <= 10; ++k) {
      const double w = adaptive_weight(k / 10.0, c);
      CHECK(w <= prev);
      CHECK(w >= c.bt_alpha);
      CHECK(w <= hi + 1e-15);
      prev = w;
    }
  }

  TEST_CASE("Barlow Twins loss matches the scalar oracle") {
    Rng rng(3);
    LossConfig c;
    std::vector<Matrix> o;
    for (int i = 0; i < 4; ++i) o.push_back(gaussian_matrix(rng, 50, 3));
    const Matrix g = random_g(rng, 4);
    CHECK(std::abs(abt_loss(o, g, c).value - abt_oracle(o, g, c)) < 1e-10);
    c.subtract_identity = false;
    CHECK(std::abs(abt_loss(o, g, c).value - abt_oracle(o, g, c)) < 1e-10);
  }

  TEST_CASE("Barlow Twins on duplicated and negated one-dimensional heads") {
    Rng rng(4);
    LossConfig c;
    c.zscore_eps = 0.0;
    const Matrix a = gaussian_matrix(rng, 40, 1);
    const Matrix g = Matrix::identity(2);
    std::vector<Matrix> same{a, a};
    CHECK(abt_loss(same, g, c).value < 1e-24);
    std::vector<Matrix> neg{a, a * -1.0};
    CHECK(abt_loss(neg, g, c).value == doctest::Approx(4.0 * adaptive_weight(0.0, c)).epsilon(1e-12));
    for (int s = 0; s < 5; ++s) {
      std::vector<Matrix> o{gaussian_matrix(rng, 30, 2), gaussian_matrix(rng, 30, 2),
                            gaussian_matrix(rng, 30, 2)};
      CHECK(abt_loss(o, random_g(rng, 3), c).value >= 0.0);
    }
  }

  TEST_CASE("single head has no pairs") {
    Rng rng(5);
    std::vector<Matrix> one{gaussian_matrix(rng, 10, 2)};
    const AbtResult r = abt_loss(one, Matrix::identity(1), LossConfig{});
    CHECK(r.no_pairs);
    CHECK(r.value == 0.0);
  }

  TEST_CASE("taped losses agree with the direct values") {
    Rng rng(6);
    const LossConfig c;
    std::vector<Matrix> o;
    for (int i = 0; i < 3; ++i) o.push_back(gaussian_matrix(rng, 20, 2));
    const Matrix g = random_g(rng, 3);
    ag::Tape tape;
    std::vector<ag::Var> vars;
    for (const Matrix& m : o) vars.push_back(tape.leaf(m));
    CHECK(std::abs(taped_abt(vars, g, c).scalar() - abt_loss(o, g, c).value) < 1e-12);
    const ag::Var gv = tape.leaf(g);
    CHECK(std::abs(taped_ldb(gv, 0.01).scalar() - ldb_loss(g, 0.01)) < 1e-12);
  }

  TEST_CASE("barrier gradient matches finite differences") {
    Rng rng(7);
    for (int s = 0; s < 5; ++s) {
      const Matrix g = random_g(rng, 4);
      const ag::Function f = [](ag::Tape&, std::span<const ag::Var> x) {
        return taped_ldb(ag::scale(ag::add(x[0], ag::transpose(x[0])), 0.5), 0.01);
      };
      CHECK(ag::check_gradient(f, std::span(&g, 1), 1e-6).max_rel_err < 1e-4);
    }
  }

  TEST_CASE("training-loss gradient checks at 10 points") {
    const LossConfig c;
    for (LossKind k : {LossKind::kCe, LossKind::kLdb, LossKind::kAbt}) {
      for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const ag::GradientCheck r = loss_gradient_check(k, seed, c);
        CHECK_MESSAGE(r.max_rel_err < 1e-4, to_string(k), " seed ", seed);
      }
    }
  }

  TEST_CASE("EMA normalization recursion") {
    LossConfig c;
    EmaState s{c.ema_init, 0};
    CHECK(ema_normalize(20.0, s, c) == 20.0);
    CHECK(s.ema == 20.0);

    EmaState t{20.0, 0};
    CHECK(ema_normalize(10.0, t, c) == doctest::Approx(10.0 * 20.0 / 19.0).epsilon(1e-14));
    CHECK(t.ema == doctest::Approx(19.0).epsilon(1e-15));
    CHECK(ema_normalize(30.0, t, c) == doctest::Approx(30.0 * 20.0 / 20.1).epsilon(1e-14));
    CHECK(t.ema == doctest::Approx(20.1).epsilon(1e-15));
    CHECK(std::abs(10.0 * 20.0 / 19.0 - 10.526) < 1e-3);

    EmaState u{20.0, 0};
    double last = 0.0;
    for (int k = 0; k < 400; ++k) last = ema_normalize(3.0, u, c);
    CHECK(u.ema == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(last == doctest::Approx(c.ema_target).epsilon(1e-12));

    EmaState bad{20.0, 0};
    CHECK_THROWS_AS(ema_normalize(-1.0, bad, c), ValidationError);
  }

  TEST_CASE("EMA normalization is linear in the target") {
    LossConfig c;
    LossConfig d = c;
    d.ema_target = 2 * c.ema_target;
    EmaState a{20.0, 0};
    EmaState b{20.0, 0};
    Rng rng(8);
    std::uniform_real_distribution<double> u(0.0, 50.0);
    for (int k = 0; k < 50; ++k) {
      const double raw = u(rng);
      CHECK(ema_normalize(raw, b, d) == 2.0 * ema_normalize(raw, a, c));
    }
  }

  TEST_CASE("schedule endpoints and phases") {
    const LossConfig c;
    CHECK(schedule_lambda(0, 1000, 0.352, c) == 0.0);
    CHECK(schedule_lambda(500, 1000, 0.352, c) == 0.352);
    CHECK(schedule_lambda(1000, 1000, 0.352, c) == 0.0);
    CHECK(schedule_lambda(10, 1000, 1.0, c) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(schedule_lambda(20, 1000, 1.0, c) == 1.0);
    CHECK(schedule_lambda(879, 1000, 1.0, c) == 1.0);
    CHECK(schedule_lambda(940, 1000, 1.0, c) == doctest::Approx(0.06 / 0.121).epsilon(1e-12));
    double prev = 1.0;
    for (std::size_t s = 879; s <= 1000; ++s) {
      const double v = schedule_lambda(s, 1000, 1.0, c);
      CHECK(v <= prev);
      prev = v;
    }
    CHECK_THROWS_AS(schedule_lambda(1001, 1000, 1.0, c), ValidationError);
  }
}
