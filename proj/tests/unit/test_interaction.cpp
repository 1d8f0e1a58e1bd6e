#include <doctest.h>

#include <cmath>
#include <vector>

#include "headgame/attention.hpp"
#include "headgame/errors.hpp"
#include "headgame/interaction.hpp"
#include "headgame/numerics.hpp"
#include "headgame/rng.hpp"

using namespace headgame;

namespace {

double flat_cosine(const Matrix& a, const Matrix& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a.data()[k] * b.data()[k];
    aa += a.data()[k] * a.data()[k];
    bb += b.data()[k] * b.data()[k];
  }
  return ab / std::sqrt(aa * bb);
}

std::vector<Matrix> random_blocks(Rng& rng, std::size_t h, std::size_t classes, std::size_t dh) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < h; ++i) out.push_back(gaussian_matrix(rng, classes, dh));
  return out;
}

// Cosine matrix of the rows of a random factor: a unit-diagonal PSD matrix.
Matrix gram_cosines(Rng& rng, std::size_t h, std::size_t dim) {
  const Matrix f = gaussian_matrix(rng, h, dim);
  Matrix out(h, h);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j) out(i, j) = cosine(f.row(i), f.row(j)).value;
  return out;
}

}  // namespace

TEST_SUITE("interaction") {
  TEST_CASE("weight coupling matches flattened cosines") {
    Rng rng(1);
    const auto blocks = random_blocks(rng, 4, 5, 3);
    const Coupling om = weight_coupling(blocks);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const double ref = i == j ? 1.0 : flat_cosine(blocks[i], blocks[j]);
        CHECK(std::abs(om.matrix(i, j) - ref) < 1e-14);
        CHECK(om.matrix(i, j) == om.matrix(j, i));
      }
  }

  TEST_CASE("weight coupling is scale invariant and detects orthogonality") {
    Rng rng(2);
    auto blocks = random_blocks(rng, 3, 4, 2);
    blocks[1] = blocks[0] * 2.0;
    const Coupling om = weight_coupling(blocks);
    CHECK(std::abs(om.matrix(0, 1) - 1.0) < 1e-14);
    auto scaled = blocks;
    scaled[2] *= 7.5;
    CHECK(max_abs_diff(weight_coupling(scaled).matrix, om.matrix) < 1e-12);

    std::vector<Matrix> disjoint{Matrix::from_rows({{1, 0}, {0, 0}}),
                                 Matrix::from_rows({{0, 0}, {0, 3}})};
    CHECK(weight_coupling(disjoint).matrix(0, 1) == 0.0);
    CHECK_THROWS_AS(weight_coupling(std::vector<Matrix>{}), ValidationError);
  }

  TEST_CASE("zero block is degenerate with a unit row") {
    Rng rng(3);
    auto blocks = random_blocks(rng, 3, 4, 2);
    blocks[1] = Matrix(4, 2);
    const Coupling om = weight_coupling(blocks);
    CHECK(om.degenerate[1]);
    CHECK_FALSE(om.degenerate[0]);
    CHECK(om.matrix(1, 1) == 1.0);
    CHECK(om.matrix(0, 1) == 0.0);
    CHECK(om.matrix(2, 1) == 0.0);
  }

  TEST_CASE("gradient coupling matches per-head backprop") {
    Rng rng(4);
    const auto blocks = random_blocks(rng, 4, 6, 3);
    const Matrix eta = gaussian_matrix(rng, 5, 6);
    const Coupling rho = gradient_coupling(blocks, eta);
    // g_i[k] = sum_c W_O^(i)[c,k] * mean_b eta[b,c]
    std::vector<std::vector<double>> g(4, std::vector<double>(3, 0.0));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t c = 0; c < 6; ++c) {
          double m = 0.0;
          for (std::size_t b = 0; b < 5; ++b) m += eta(b, c);
          g[i][k] += blocks[i](c, k) * m / 5.0;
        }
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const Matrix gi = Matrix::row_vector(g[i]);
        const Matrix gj = Matrix::row_vector(g[j]);
        const double ref = i == j ? 1.0 : flat_cosine(gi, gj);
        CHECK(std::abs(rho.matrix(i, j) - ref) < 1e-12);
      }
  }

  TEST_CASE("gradient coupling extremes") {
    Rng rng(5);
    const Matrix w = gaussian_matrix(rng, 4, 3);
    const Matrix eta = gaussian_matrix(rng, 1, 4);
    std::vector<Matrix> same{w, w};
    CHECK(std::abs(gradient_coupling(same, eta).matrix(0, 1) - 1.0) < 1e-14);
    std::vector<Matrix> opposite{w, w * -1.0};
    CHECK(std::abs(gradient_coupling(opposite, eta).matrix(0, 1) + 1.0) < 1e-14);
  }

  TEST_CASE("per-sample mode averages per-sample cosine matrices") {
    Rng rng(6);
    const auto blocks = random_blocks(rng, 3, 4, 2);
    const Matrix eta = gaussian_matrix(rng, 6, 4);
    const Coupling ps = gradient_coupling(blocks, eta, EtaMode::kPerSample);
    Matrix ref(3, 3);
    for (std::size_t b = 0; b < 6; ++b)
      ref += gradient_coupling(blocks, slice_rows(eta, b, 1)).matrix * (1.0 / 6.0);
    CHECK(max_abs_diff(ps.matrix, ref) < 1e-14);
  }

  TEST_CASE("interaction matrix analytic cases") {
    const InteractionMatrix eye = interaction_matrix(Matrix::identity(4), Matrix::identity(4));
    CHECK(eye.g == Matrix::identity(4));
    CHECK(eye.gamma == 0.0);
    CHECK(gamma_identity_check(eye) == 0.0);

    const Matrix half = Matrix::from_rows({{1, 0.5}, {0.5, 1}});
    const InteractionMatrix im = interaction_matrix(half, half);
    CHECK(im.g(0, 1) == 0.25);
    CHECK(im.gamma == doctest::Approx(std::sqrt(2 * 0.0625)).epsilon(1e-15));
    CHECK(std::abs(im.gamma - 0.35355) < 1e-5);
    CHECK(gamma_identity_check(im) < 1e-12);
  }

  TEST_CASE("Schur product keeps Gram-derived G positive semidefinite") {
    Rng rng(7);
    for (int s = 0; s < 100; ++s) {
      const std::size_t h = 1 + static_cast<std::size_t>(s % 16);
      const std::size_t dim = 1 + static_cast<std::size_t>(s % 5);
      const InteractionMatrix im =
          interaction_matrix(gram_cosines(rng, h, dim), gram_cosines(rng, h, dim));
      const double min_eig = sym_eig(im.g).eigenvalues.front();
      CHECK(min_eig >= -1e-10);
      CHECK(std::abs(im.min_eigenvalue - min_eig) < 1e-10);
      for (double v : im.g.data()) CHECK(std::abs(v) <= 1.0);
      CHECK(is_symmetric(im.g, 0.0));
    }
  }

  TEST_CASE("Gamma identity holds on random 16-head matrices") {
    Rng rng(8);
    for (int s = 0; s < 20; ++s) {
      const InteractionMatrix im = interaction_matrix(gram_cosines(rng, 16, 6), gram_cosines(rng, 16, 6));
      double pairs = 0.0;
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = i + 1; j < 16; ++j)
          pairs += 2.0 * std::pow(im.omega(i, j) * im.rho(i, j), 2);
      CHECK(std::abs(im.gamma * im.gamma - pairs) < 1e-10);
      CHECK(gamma_identity_check(im) < 1e-10);
    }
  }

  TEST_CASE("Gamma vanishes exactly at the identity") {
    Rng rng(9);
    const Matrix om = gram_cosines(rng, 4, 3);
    const InteractionMatrix im = interaction_matrix(om, Matrix::identity(4));
    CHECK(im.gamma < 1e-10);
    const InteractionMatrix coupled = interaction_matrix(om, om);
    CHECK(coupled.gamma > 1e-10);
  }

  TEST_CASE("compute_interaction uses the forward pass eta") {
    ModelConfig cfg;
    cfg.heads = 3;
    cfg.head_dim = 2;
    cfg.seq_len = 3;
    cfg.batch_size = 4;
    cfg.classes = 3;
    Rng rng(10);
    const Params p = init_params(cfg, rng);
    const Matrix x = gaussian_matrix(rng, 12, cfg.d_model());
    const std::vector<int> labels{0, 1, 2, 1};
    const Matrix y = one_hot(labels, 3);
    const HeadOutputs out = forward(p, x, cfg, &y);
    const InteractionMatrix im = compute_interaction(p, out);
    const auto blocks = p.wo_blocks();
    const InteractionMatrix ref =
        interaction_matrix(weight_coupling(blocks), gradient_coupling(blocks, *out.eta));
    CHECK(im.g == ref.g);
    CHECK_THROWS_AS(compute_interaction(p, forward(p, x, cfg)), ValidationError);
  }

  TEST_CASE("taped interaction matches the direct computation") {
    ModelConfig cfg;
    cfg.heads = 3;
    cfg.head_dim = 2;
    cfg.seq_len = 2;
    cfg.batch_size = 5;
    cfg.classes = 4;
    Rng rng(11);
    const Params p = init_params(cfg, rng);
    const Matrix x = gaussian_matrix(rng, 10, cfg.d_model());
    const std::vector<int> labels{0, 1, 2, 3, 1};
    const Matrix y = one_hot(labels, 4);
    ag::Tape tape;
    const ParamVars pv = bind_params(tape, p);
    const ForwardVars fv = build_forward(tape, pv, tape.constant(x), cfg);
    const ag::Var g = taped_interaction(pv, fv.logits, y);
    const InteractionMatrix ref = compute_interaction(p, forward(p, x, cfg, &y));
    CHECK(max_abs_diff(g.value(), ref.g) < 1e-12);
  }
}
