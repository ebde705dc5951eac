#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "tpvocc/distill.hpp"

using namespace tpvocc;
using ad::Var;
using testutil::max_abs_diff;

namespace {
Tensor row_normalized(int rows, int cols, Rng& rng) {
  Tensor p({rows, cols});
  for (int i = 0; i < rows; ++i) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) {
      p.at(i, c) = rng.uniform(0.01, 1.0);
      s += p.at(i, c);
    }
    for (int c = 0; c < cols; ++c) p.at(i, c) /= s;
  }
  return p;
}
}  // namespace

TEST_CASE("fsd_loss identities") {
  Rng rng(1);
  Tensor t = randn({10, 4}, rng);

  {  // student == teacher -> 0
    std::vector<distill::FeaturePair> pairs = {{"f", Var(t), t}};
    CHECK(std::fabs(distill::fsd_loss(pairs).val()[0]) < 1e-6);
  }
  {  // student == -teacher -> 2
    Tensor s(t.shape());
    for (int64_t i = 0; i < t.numel(); ++i) s[i] = -t[i];
    std::vector<distill::FeaturePair> pairs = {{"f", Var(s), t}};
    CHECK(distill::fsd_loss(pairs).val()[0] == doctest::Approx(2.0).epsilon(1e-6));
  }
  {  // student == 3 * teacher -> 0 (cosine scale invariance)
    Tensor s(t.shape());
    for (int64_t i = 0; i < t.numel(); ++i) s[i] = 3.0 * t[i];
    std::vector<distill::FeaturePair> pairs = {{"f", Var(s), t}};
    CHECK(std::fabs(distill::fsd_loss(pairs).val()[0]) < 1e-6);
  }
  {  // per-element positive scaling of either side leaves the loss unchanged
    Tensor s = randn({10, 4}, rng);
    std::vector<distill::FeaturePair> base = {{"f", Var(s), t}};
    const double l0 = distill::fsd_loss(base).val()[0];
    Tensor s2 = s, t2 = t;
    for (int i = 0; i < 10; ++i) {
      const double a = rng.uniform(0.1, 5.0), b = rng.uniform(0.1, 5.0);
      for (int c = 0; c < 4; ++c) {
        s2.at(i, c) *= a;
        t2.at(i, c) *= b;
      }
    }
    std::vector<distill::FeaturePair> scaled = {{"f", Var(s2), t2}};
    CHECK(distill::fsd_loss(scaled).val()[0] == doctest::Approx(l0).epsilon(1e-9));
  }
  {  // range [0, 2] over random pairs; multiple feature maps averaged
    std::vector<distill::FeaturePair> pairs;
    pairs.push_back({"a", Var(randn({6, 3}, rng)), randn({6, 3}, rng)});
    pairs.push_back({"b", Var(randn({4, 5}, rng)), randn({4, 5}, rng)});
    const double l = distill::fsd_loss(pairs).val()[0];
    CHECK(l >= 0.0);
    CHECK(l <= 2.0);
  }
  CHECK_THROWS_AS(distill::fsd_loss({}), ConfigError);
}

TEST_CASE("affinity examples and properties") {
  Rng rng(2);
  {  // K=1 -> [[1]]
    Tensor a = distill::affinity_tensor(Tensor::from({1, 3}, {0.3, -2.0, 1.0}));
    CHECK(a.numel() == 1);
    CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  {  // orthogonal pair -> off-diagonal 0
    Tensor a = distill::affinity_tensor(Tensor::from({2, 2}, {1.0, 0.0, 0.0, 2.0}));
    CHECK(a.at(0, 1) == doctest::Approx(0.0));
    CHECK(a.at(1, 0) == doctest::Approx(0.0));
    CHECK(a.at(0, 0) == doctest::Approx(1.0));
  }
  {  // random 3-element, 2-channel map against the pairwise scalar oracle
    Tensor f = randn({3, 2}, rng);
    Tensor a = distill::affinity_tensor(f);
    for (int u = 0; u < 3; ++u)
      for (int v = 0; v < 3; ++v) {
        const double dot = f.at(u, 0) * f.at(v, 0) + f.at(u, 1) * f.at(v, 1);
        const double nu = std::hypot(f.at(u, 0), f.at(u, 1));
        const double nv = std::hypot(f.at(v, 0), f.at(v, 1));
        CHECK(a.at(u, v) == doctest::Approx(dot / (nu * nv)).epsilon(1e-12));
      }
  }
  {  // symmetry, unit diagonal, range, zero-vector convention
    Tensor f = randn({8, 4}, rng);
    for (int c = 0; c < 4; ++c) f.at(5, c) = 0.0;
    Tensor a = distill::affinity_tensor(f);
    for (int u = 0; u < 8; ++u) {
      CHECK(a.at(u, u) == doctest::Approx(u == 5 ? 0.0 : 1.0).epsilon(1e-6));
      for (int v = 0; v < 8; ++v) {
        CHECK(a.at(u, v) == doctest::Approx(a.at(v, u)).epsilon(1e-6));
        CHECK(a.at(u, v) >= -1.0 - 1e-12);
        CHECK(a.at(u, v) <= 1.0 + 1e-12);
        if (u == 5 || v == 5) CHECK(a.at(u, v) == 0.0);
      }
    }
  }
}

TEST_CASE("trd_loss identities and hand case") {
  Rng rng(3);
  Tensor xy = randn({3, 2, 2}, rng), yz = randn({2, 2, 2}, rng), zx = randn({3, 2, 2}, rng);

  {  // teacher == student -> 0
    TpvTriplet s{Var(xy), Var(yz), Var(zx)};
    CHECK(distill::trd_loss(s, {xy, yz, zx}, 0, 1).val()[0] == doctest::Approx(0.0));
  }
  {  // positively scaled student planes -> 0 (affinity scale invariance)
    auto scaled = [](const Tensor& t, double k) {
      Tensor o = t;
      for (int64_t i = 0; i < o.numel(); ++i) o[i] *= k;
      return o;
    };
    TpvTriplet s{Var(scaled(xy, 2.5)), Var(scaled(yz, 0.3)), Var(scaled(zx, 7.0))};
    CHECK(std::fabs(distill::trd_loss(s, {xy, yz, zx}, 0, 1).val()[0]) < 1e-6);
  }
  {  // two-position planes: direct affinity computation as oracle
    Tensor sp = randn({2, 1, 2}, rng);
    Tensor tp = randn({2, 1, 2}, rng);
    TpvTriplet s{Var(sp), Var(sp), Var(sp)};
    const double loss = distill::trd_loss(s, {tp, tp, tp}, 0, 1).val()[0];

    auto cosine = [](const Tensor& f) {
      const double dot = f.at(0, 0, 0) * f.at(1, 0, 0) + f.at(0, 0, 1) * f.at(1, 0, 1);
      const double n0 = std::hypot(f.at(0, 0, 0), f.at(0, 0, 1));
      const double n1 = std::hypot(f.at(1, 0, 0), f.at(1, 0, 1));
      return dot / (n0 * n1);
    };
    // Affinity matrices are [[1, c],[c, 1]]; mean |diff| = |c_s - c_t| / 2.
    const double per_plane = std::fabs(cosine(sp) - cosine(tp)) / 2.0;
    CHECK(loss == doctest::Approx(3.0 * per_plane).epsilon(1e-9));
  }
}

TEST_CASE("trd_loss subsampling uses identical index sets on both sides") {
  Rng rng(4);
  Tensor plane = randn({8, 8, 2}, rng);
  TpvTriplet s{Var(plane), Var(plane), Var(plane)};
  // With student == teacher the loss must stay exactly 0 under subsampling.
  CHECK(distill::trd_loss(s, {plane, plane, plane}, 16, 99).val()[0] == doctest::Approx(0.0));
}

TEST_CASE("tad_loss identities, frozen KL value, non-negativity") {
  Rng rng(5);
  {  // identical weights -> 0
    Tensor w = row_normalized(10, 4, rng);
    CHECK(std::fabs(distill::tad_loss(Var(w), w).val()[0]) < 1e-12);
  }
  {  // KL((1/2,1/4,1/8,1/8) || uniform) = 0.25 ln 2 per voxel
    Tensor s = Tensor::from({1, 4}, {0.5, 0.25, 0.125, 0.125});
    Tensor t = Tensor::from({1, 4}, {0.25, 0.25, 0.25, 0.25});
    const double expect = 0.17328679513998632;  // 0.25 * ln 2
    CHECK(distill::tad_loss(Var(s), t).val()[0] == doctest::Approx(expect).epsilon(1e-10));
  }
  {  // Gibbs inequality on 1000 random normalized pairs
    for (int trial = 0; trial < 1000; ++trial) {
      Tensor s = row_normalized(1, 4, rng);
      Tensor t = row_normalized(1, 4, rng);
      CHECK(distill::tad_loss(Var(s), t).val()[0] >= -1e-12);
    }
  }
}

TEST_CASE("pad_loss identities and hand case") {
  Rng rng(6);
  {  // identical predictions -> 0
    Tensor p = row_normalized(6, 3, rng);
    CHECK(std::fabs(distill::pad_loss(Var(p), p).val()[0]) < 1e-12);
  }
  {  // 1-voxel, 3-class hand case
    Tensor s = Tensor::from({1, 3}, {0.6, 0.3, 0.1});
    Tensor t = Tensor::from({1, 3}, {0.2, 0.5, 0.3});
    const double expect = 0.6 * std::log(0.6 / 0.2) + 0.3 * std::log(0.3 / 0.5) +
                          0.1 * std::log(0.1 / 0.3);
    CHECK(distill::pad_loss(Var(s), t).val()[0] == doctest::Approx(expect).epsilon(1e-12));
  }
  {  // non-negativity
    for (int trial = 0; trial < 200; ++trial) {
      Tensor s = row_normalized(4, 3, rng);
      Tensor t = row_normalized(4, 3, rng);
      CHECK(distill::pad_loss(Var(s), t).val()[0] >= -1e-12);
    }
  }
}

TEST_CASE("kl direction flag flips student/teacher roles") {
  Rng rng(7);
  Tensor s = row_normalized(5, 4, rng);
  Tensor t = row_normalized(5, 4, rng);
  const double fwd = distill::tad_loss(Var(s), t, false).val()[0];
  const double rev = distill::tad_loss(Var(s), t, true).val()[0];
  const double fwd_swapped = distill::tad_loss(Var(t), s, false).val()[0];
  CHECK(rev == doctest::Approx(fwd_swapped).epsilon(1e-12));
  CHECK(fwd != doctest::Approx(rev).epsilon(1e-9));
}

TEST_CASE("total_loss arithmetic") {
  const std::array<double, 8> lambdas = {3.0, 1.5, 0.5, 0.001, 4.0, 5.0, 10.0, 70.0};
  auto ones = [] {
    distill::LossComponents c;
    c.ce = Var(Tensor::scalar(1.0));
    c.scal_geo = Var(Tensor::scalar(1.0));
    c.scal_sem = Var(Tensor::scalar(1.0));
    c.depth = Var(Tensor::scalar(1.0));
    c.fsd = Var(Tensor::scalar(1.0));
    c.trd = Var(Tensor::scalar(1.0));
    c.tad = Var(Tensor::scalar(1.0));
    c.pad = Var(Tensor::scalar(1.0));
    return c;
  };

  {  // all components 1 with the default weights -> 94.001
    CHECK(std::fabs(distill::total_loss(ones(), lambdas).val()[0] - 94.001) < 1e-12);
  }
  {  // all components 0 -> 0
    distill::LossComponents c = ones();
    for (Var* v : {&c.ce, &c.scal_geo, &c.scal_sem, &c.depth, &c.fsd, &c.trd, &c.tad, &c.pad})
      *v = Var(Tensor::scalar(0.0));
    CHECK(distill::total_loss(c, lambdas).val()[0] == 0.0);
  }
  {  // random components and weights match a dot-product oracle
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
      std::array<double, 8> l{}, vals{};
      distill::LossComponents c;
      Var* slots[8] = {&c.ce, &c.scal_geo, &c.scal_sem, &c.depth,
                       &c.fsd, &c.trd,      &c.tad,      &c.pad};
      double expect = 0.0;
      for (int i = 0; i < 8; ++i) {
        l[(size_t)i] = rng.uniform(0.01, 10.0);
        vals[(size_t)i] = rng.normal();
        *slots[i] = Var(Tensor::scalar(vals[(size_t)i]));
        expect += l[(size_t)i] * vals[(size_t)i];
      }
      CHECK(distill::total_loss(c, l).val()[0] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  {  // missing component -> error
    distill::LossComponents c = ones();
    c.trd = Var();
    CHECK_THROWS_AS(distill::total_loss(c, lambdas), ConfigError);
  }
}

TEST_CASE("teacher side of every distillation loss receives no gradient") {
  Rng rng(9);
  // Teacher enters as a leaf Var whose value feeds the losses; its gradient
  // accumulator must stay exactly zero after backward.
  Var teacher_feat(randn({6, 3}, rng), true);
  Var student_feat(randn({6, 3}, rng), true);
  Var teacher_probs(row_normalized(6, 4, rng), true);
  Var student_probs(row_normalized(6, 4, rng), true);

  std::vector<distill::FeaturePair> pairs = {{"f", student_feat, teacher_feat.val()}};
  Var loss = ad::add(distill::fsd_loss(pairs),
                     distill::pad_loss(student_probs, teacher_probs.val()));
  ad::backward(loss);

  for (int64_t i = 0; i < teacher_feat.grad().numel(); ++i) CHECK(teacher_feat.grad()[i] == 0.0);
  for (int64_t i = 0; i < teacher_probs.grad().numel(); ++i)
    CHECK(teacher_probs.grad()[i] == 0.0);
  // The student side does receive gradient.
  double s = 0.0;
  for (int64_t i = 0; i < student_feat.grad().numel(); ++i)
    s += std::fabs(student_feat.grad()[i]);
  CHECK(s > 0.0);
}
