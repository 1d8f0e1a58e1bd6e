#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "headgame/attention.hpp"
#include "headgame/errors.hpp"
#include "headgame/numerics.hpp"
#include "headgame/rng.hpp"

using namespace headgame;

namespace {

ModelConfig small_model(std::size_t heads, std::size_t head_dim, std::size_t seq_len,
                        std::size_t batch, std::size_t classes) {
  ModelConfig cfg;
  cfg.heads = heads;
  cfg.head_dim = head_dim;
  cfg.seq_len = seq_len;
  cfg.batch_size = batch;
  cfg.classes = classes;
  return cfg;
}

// Scalar-loop forward pass: one sequence, one head, one query at a time.
Matrix naive_logits(const Params& p, const Matrix& x, const ModelConfig& cfg,
                    std::vector<Matrix>* heads_out) {
  const std::size_t dm = cfg.d_model();
  const std::size_t dh = cfg.head_dim;
  const std::size_t t_len = cfg.seq_len;
  const std::size_t n_seq = x.rows() / t_len;
  Matrix logits(n_seq, cfg.classes);
  if (heads_out != nullptr) heads_out->assign(cfg.heads, Matrix(x.rows(), dh));
  for (std::size_t b = 0; b < n_seq; ++b) {
    for (std::size_t c = 0; c < cfg.classes; ++c) logits(b, c) = p.bias(0, c);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const HeadParams& hp = p.heads[h];
      auto project = [&](const Matrix& w, std::size_t t, std::size_t k) {
        double s = 0.0;
        for (std::size_t m = 0; m < dm; ++m) s += x(b * t_len + t, m) * w(m, k);
        return s;
      };
      std::vector<double> pooled(dh, 0.0);
      for (std::size_t tq = 0; tq < t_len; ++tq) {
        std::vector<double> score(t_len);
        for (std::size_t tk = 0; tk < t_len; ++tk) {
          double s = 0.0;
          for (std::size_t k = 0; k < dh; ++k) s += project(hp.wq, tq, k) * project(hp.wk, tk, k);
          score[tk] = s / std::sqrt(static_cast<double>(dh));
        }
        const double mx = *std::max_element(score.begin(), score.end());
        double z = 0.0;
        for (double& s : score) z += (s = std::exp(s - mx));
        for (std::size_t k = 0; k < dh; ++k) {
          double o = 0.0;
          for (std::size_t tk = 0; tk < t_len; ++tk) o += score[tk] / z * project(hp.wv, tk, k);
          if (heads_out != nullptr) (*heads_out)[h](b * t_len + tq, k) = o;
          pooled[k] += o / static_cast<double>(t_len);
        }
      }
      for (std::size_t c = 0; c < cfg.classes; ++c)
        for (std::size_t k = 0; k < dh; ++k) logits(b, c) += hp.wo(c, k) * pooled[k];
    }
  }
  return logits;
}

}  // namespace

TEST_SUITE("attention") {
  TEST_CASE("forward matches a scalar-loop reference") {
    const ModelConfig cfg = small_model(4, 8, 5, 3, 6);
    Rng rng(17);
    const Params p = init_params(cfg, rng);
    const Matrix x = gaussian_matrix(rng, cfg.batch_size * cfg.seq_len, cfg.d_model());
    std::vector<Matrix> ref_heads;
    const Matrix ref = naive_logits(p, x, cfg, &ref_heads);
    const HeadOutputs out = forward(p, x, cfg);
    CHECK(max_abs_diff(out.logits, ref) < 1e-10);
    REQUIRE(out.heads.size() == cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      CHECK(out.heads[h].rows() == cfg.batch_size * cfg.seq_len);
      CHECK(max_abs_diff(out.heads[h], ref_heads[h]) < 1e-10);
    }
  }

  TEST_CASE("single position gives O = x W_V") {
    const ModelConfig cfg = small_model(3, 2, 1, 5, 4);
    Rng rng(3);
    const Params p = init_params(cfg, rng);
    const Matrix x = gaussian_matrix(rng, 5, cfg.d_model());
    const HeadOutputs out = forward(p, x, cfg);
    for (std::size_t h = 0; h < cfg.heads; ++h)
      CHECK(max_abs_diff(out.heads[h], matmul(x, p.heads[h].wv)) < 1e-12);
  }

  TEST_CASE("zero output blocks give bias logits and uniform probabilities") {
    const ModelConfig cfg = small_model(2, 3, 4, 2, 4);
    Rng rng(5);
    Params p = init_params(cfg, rng);
    for (auto& h : p.heads) h.wo = Matrix(cfg.classes, cfg.head_dim);
    p.bias = Matrix(1, cfg.classes);
    const Matrix x = gaussian_matrix(rng, 8, cfg.d_model());
    const Matrix probs = predict_probs(forward(p, x, cfg).logits);
    for (std::size_t r = 0; r < probs.rows(); ++r)
      for (std::size_t c = 0; c < 4; ++c) CHECK(probs(r, c) == doctest::Approx(0.25).epsilon(1e-15));
  }

  TEST_CASE("single head with zero output block is input independent") {
    const ModelConfig cfg = small_model(1, 3, 4, 3, 5);
    Rng rng(6);
    Params p = init_params(cfg, rng);
    p.heads[0].wo = Matrix(cfg.classes, cfg.head_dim);
    p.bias = gaussian_matrix(rng, 1, cfg.classes);
    const Matrix probs = predict_probs(forward(p, gaussian_matrix(rng, 12, 3), cfg).logits);
    for (std::size_t r = 1; r < probs.rows(); ++r)
      for (std::size_t c = 0; c < cfg.classes; ++c) CHECK(probs(r, c) == probs(0, c));
  }

  TEST_CASE("predict_probs analytic rows and simplex property") {
    const Matrix two = predict_probs(Matrix::from_rows({{std::log(1.0), std::log(3.0)}}));
    CHECK(two(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(two(0, 1) == doctest::Approx(0.75).epsilon(1e-14));
    Rng rng(8);
    const Matrix probs = predict_probs(gaussian_matrix(rng, 50, 7, 10.0));
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      double s = 0.0;
      for (double v : probs.row(r)) {
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }

  TEST_CASE("permuting heads leaves logits unchanged") {
    const ModelConfig cfg = small_model(5, 3, 4, 4, 6);
    Rng rng(9);
    const Params p = init_params(cfg, rng);
    const Matrix x = gaussian_matrix(rng, 16, cfg.d_model());
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Params q = p;
    for (std::size_t h = 0; h < cfg.heads; ++h) q.heads[h] = p.heads[perm[h]];
    CHECK(max_abs_diff(forward(p, x, cfg).logits, forward(q, x, cfg).logits) < 1e-12);
  }

  TEST_CASE("forward is deterministic") {
    const ModelConfig cfg = small_model(3, 2, 3, 4, 3);
    Rng a(11);
    Rng b(11);
    const Params pa = init_params(cfg, a);
    const Params pb = init_params(cfg, b);
    const Matrix x = gaussian_matrix(a, 12, cfg.d_model());
    const Matrix y = gaussian_matrix(b, 12, cfg.d_model());
    CHECK(forward(pa, x, cfg).logits == forward(pb, y, cfg).logits);
  }

  TEST_CASE("eta is the derivative of mean cross-entropy in the logits") {
    const ModelConfig cfg = small_model(2, 2, 3, 4, 3);
    Rng rng(12);
    const Params p = init_params(cfg, rng);
    const Matrix x = gaussian_matrix(rng, 12, cfg.d_model());
    const std::vector<int> labels{0, 2, 1, 2};
    const Matrix y = one_hot(labels, 3);
    const HeadOutputs out = forward(p, x, cfg, &y);
    REQUIRE(out.eta.has_value());
    auto mean_ce = [&](const Matrix& logits) {
      const Matrix pr = predict_probs(logits);
      double s = 0.0;
      for (std::size_t r = 0; r < 4; ++r) s -= std::log(pr(r, labels[r]));
      return s / 4.0;
    };
    const double h = 1e-6;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 3; ++c) {
        Matrix up = out.logits;
        Matrix dn = out.logits;
        up(r, c) += h;
        dn(r, c) -= h;
        CHECK((*out.eta)(r, c) == doctest::Approx((mean_ce(up) - mean_ce(dn)) / (2 * h)).epsilon(1e-6));
      }
  }

  TEST_CASE("shape errors are rejected") {
    const ModelConfig cfg = small_model(2, 2, 3, 2, 3);
    Rng rng(1);
    const Params p = init_params(cfg, rng);
    CHECK_THROWS_AS(forward(p, Matrix(5, cfg.d_model()), cfg), ValidationError);
    CHECK_THROWS_AS(forward(p, Matrix(6, cfg.d_model() + 1), cfg), ValidationError);
    ModelConfig bad = cfg;
    bad.classes = 1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = cfg;
    bad.heads = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("output block clipping bounds every block") {
    const ModelConfig cfg = small_model(3, 2, 2, 2, 3);
    Rng rng(14);
    Params p = init_params(cfg, rng);
    p.heads[0].wo *= 50.0;
    const Matrix untouched = p.heads[1].wo;
    clip_output_blocks(p, 1.0);
    for (const auto& h : p.heads) CHECK(frobenius_norm(h.wo) <= 1.0);
    if (frobenius_norm(untouched) <= 1.0) CHECK(p.heads[1].wo == untouched);
  }

  TEST_CASE("parameter list and flat vector round-trip") {
    const ModelConfig cfg = small_model(3, 2, 2, 2, 4);
    Rng rng(15);
    const Params p = init_params(cfg, rng);
    const auto list = p.to_list();
    CHECK(list.size() == 4 * 3 + 1);
    CHECK(p.names().size() == list.size());
    const Params q = Params::from_list(list, 3);
    CHECK(q.flatten() == p.flatten());
    Params r = init_params(cfg, rng);
    r.unflatten(p.flatten());
    CHECK(r.flatten() == p.flatten());
    CHECK(p.flatten().size() == p.parameter_count());
  }

  TEST_CASE("checkpoint round-trips bit-exactly") {
    const ModelConfig cfg = small_model(2, 3, 2, 2, 3);
    Rng rng(16);
    const Params p = init_params(cfg, rng);
    std::stringstream ss;
    save_checkpoint(ss, p);
    CHECK(ss.str().rfind("headgame-checkpoint 1", 0) == 0);
    const Params q = load_checkpoint(ss);
    CHECK(q.flatten() == p.flatten());
    std::stringstream bad("not-a-checkpoint 1\n");
    CHECK_THROWS(load_checkpoint(bad));
  }
}
