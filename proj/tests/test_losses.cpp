#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "neat/losses.hpp"

using namespace neat;
using namespace neat::losses;

TEST_CASE("masked color error") {
  Mat pred = Mat::Constant(3, 4, 0.5);
  Mat gt = pred;
  VecX mask = VecX::Ones(4);
  CHECK(rgb_loss(pred, gt, mask) == 0.0);

  gt.setZero();
  CHECK(rgb_loss(pred, gt, VecX::Zero(4)) == 0.0);  // fully masked
  CHECK(rgb_loss(pred, gt, mask) == doctest::Approx(1.5).epsilon(1e-15));

  // single ray, channel sum convention
  Mat p1 = Mat::Constant(3, 1, 0.5), g1 = Mat::Zero(3, 1);
  CHECK(rgb_loss(p1, g1, VecX::Ones(1)) == doctest::Approx(1.5).epsilon(1e-15));

  // mean over rays includes masked ones in the denominator
  VecX half = VecX::Zero(4);
  half[0] = half[1] = 1.0;
  CHECK(rgb_loss(pred, gt, half) == doctest::Approx(0.75).epsilon(1e-15));

  CHECK_THROWS_AS(rgb_loss(pred, gt, VecX::Ones(3)), SchemaError);
}

TEST_CASE("mask cross-entropy") {
  VecX ones = VecX::Ones(8);
  CHECK(mask_loss(ones, ones) <= 2e-7);  // clamped perfect prediction
  CHECK(mask_loss(VecX::Zero(8), VecX::Zero(8)) <= 2e-7);

  CHECK(mask_loss(VecX::Constant(5, 0.5), ones.head(5)) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));

  // confident and wrong: the clamp ceiling -ln(eps)
  CHECK(mask_loss(VecX::Ones(1), VecX::Zero(1)) ==
        doctest::Approx(-std::log(kClampEps)).epsilon(1e-9));
  CHECK(-std::log(kClampEps) == doctest::Approx(16.12).epsilon(1e-3));
}

TEST_CASE("gradient-norm regularizer") {
  std::mt19937_64 rng(1);
  std::normal_distribution<Scalar> N01;

  // exact sphere SDF: finite-difference gradients of |p| - r
  const Scalar h = 1e-5;
  Mat grads(3, 200);
  for (int i = 0; i < 200; ++i) {
    Vec3 p(N01(rng), N01(rng), N01(rng));
    if (p.norm() < 0.05) p = Vec3(0.3, 0.2, 0.1);
    for (int a = 0; a < 3; ++a) {
      Vec3 hi = p, lo = p;
      hi[a] += h;
      lo[a] -= h;
      grads(a, i) = ((hi.norm() - 0.5) - (lo.norm() - 0.5)) / (2 * h);
    }
  }
  CHECK(eikonal_from_gradients(grads) < 1e-6);

  // doubled field: gradient norm 2 everywhere -> (2-1)^2 = 1
  CHECK(eikonal_from_gradients(2.0 * grads) == doctest::Approx(1.0).epsilon(1e-6));

  // initialized net stays under the calibration bound
  fields::FieldSet fs(fields::FieldConfig::defaults());
  fields::geometric_init(fs, 99);
  Mat pts(3, 1000);
  std::uniform_real_distribution<Scalar> U(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    Vec3 d(N01(rng), N01(rng), N01(rng));
    d.normalize();
    pts.col(i) = std::cbrt(U(rng)) * d;
  }
  CHECK(eikonal_loss(fs, pts) < 0.3);
}

TEST_CASE("validity self-entropy") {
  CHECK(bce_validity_loss(VecX::Constant(3, 0.5)) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_validity_loss(VecX::Ones(3)) < 2e-6);
  CHECK(bce_validity_loss(VecX::Constant(1, 0.9)) == doctest::Approx(0.3251).epsilon(1e-4));

  // symmetric under V -> 1-V, maximal at 0.5
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<Scalar> U(0.001, 0.999);
  const Scalar peak = bce_validity_loss(VecX::Constant(1, 0.5));
  for (int i = 0; i < 300; ++i) {
    const Scalar v = U(rng);
    const Scalar a = bce_validity_loss(VecX::Constant(1, v));
    const Scalar b = bce_validity_loss(VecX::Constant(1, 1.0 - v));
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
    CHECK(a <= peak + 1e-15);
    CHECK(a >= 0.0);
  }
}

TEST_CASE("validity sparsity") {
  CHECK(sparse_loss(VecX::Ones(7)) == 1.0);
  CHECK(sparse_loss(VecX::Zero(7)) == 0.0);
  VecX v(3);
  v << 0.2, 0.4, 0.6;
  CHECK(sparse_loss(v) == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("weighted total") {
  LossWeights w;
  LossReport r;
  r.rgb = 0.5;

  LossWeights zero;
  zero.mask = zero.eikonal = zero.bce = zero.sparse = 0.0;
  CHECK(total_loss(r, zero).total == 0.5);

  r.mask = std::log(2.0);
  LossWeights only_mask = zero;
  only_mask.mask = 0.1;
  CHECK(total_loss(r, only_mask).total == doctest::Approx(0.5 + 0.0693).epsilon(1e-3));

  // total identity within 1e-12 for arbitrary terms
  LossReport full;
  full.rgb = 0.31;
  full.mask = 0.21;
  full.eikonal = 0.11;
  full.bce = 0.41;
  full.sparse = 0.71;
  LossReport out = total_loss(full, w);
  CHECK(std::abs(out.total - (out.rgb + w.mask * out.mask + w.eikonal * out.eikonal +
                              w.bce * out.bce + w.sparse * out.sparse)) < 1e-12);

  LossWeights bad;
  bad.mask = -1.0;
  CHECK_THROWS_AS(total_loss(full, bad), SchemaError);
}
