#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "tpvocc/tpv_net.hpp"

using namespace tpvocc;
using ad::Var;
using testutil::max_abs_diff;
using testutil::param_grad_check;
using testutil::small_config;

namespace {
struct Fixture {
  Config cfg = small_config();
  nn::ParamStore ps;
  Rng rng{51};
  TpvNet net{ps, cfg, rng};

  GridSpec grid() const {
    GridSpec g;
    g.dims = cfg.grid_dims;
    g.origin = {cfg.grid_origin[0], cfg.grid_origin[1], cfg.grid_origin[2]};
    g.voxel_size = cfg.voxel_size;
    return g;
  }
};

void randomize(nn::ParamStore& ps, Rng& rng) {
  for (auto& e : ps.entries()) {
    Tensor& v = e.var.node()->value;
    for (int64_t i = 0; i < v.numel(); ++i) v[i] = rng.normal(0.0, 0.3);
  }
}
}  // namespace

TEST_CASE("pool_weights: zero-init projection gives uniform weights") {
  {  // paper-literal per-voxel softmax: (1/3, 1/3, 1/3)
    Fixture f;
    f.cfg.pool_softmax_per_voxel = true;
    TpvNet net(f.ps = nn::ParamStore{}, f.cfg, f.rng);
    Tensor w = net.pool_weights(Var(randn({4, 4, 2, 2}, f.rng))).val();
    for (int64_t i = 0; i < w.numel(); ++i) CHECK(w[i] == doctest::Approx(1.0 / 3).epsilon(1e-9));
  }
  {  // default spatial normalization: channel d uniform along axis d
    Fixture f;
    Tensor w = f.net.pool_weights(Var(randn({4, 4, 2, 2}, f.rng))).val();
    for (int x = 0; x < 4; ++x)
      for (int y = 0; y < 4; ++y)
        for (int z = 0; z < 2; ++z) {
          CHECK(w.at(x, y, z, 0) == doctest::Approx(1.0 / 4).epsilon(1e-9));
          CHECK(w.at(x, y, z, 1) == doctest::Approx(1.0 / 4).epsilon(1e-9));
          CHECK(w.at(x, y, z, 2) == doctest::Approx(1.0 / 2).epsilon(1e-9));
        }
  }
}

TEST_CASE("pool_weights: normalized along each mode's axis, deterministic") {
  Fixture f;
  randomize(f.ps, f.rng);
  Tensor vol = randn({4, 4, 2, 2}, f.rng);
  Tensor w = f.net.pool_weights(Var(vol)).val();
  CHECK(max_abs_diff(w, f.net.pool_weights(Var(vol)).val()) == 0.0);

  // Spatial mode: channel d sums to 1 along spatial axis d.
  for (int y = 0; y < 4; ++y)
    for (int z = 0; z < 2; ++z) {
      double s = 0.0;
      for (int x = 0; x < 4; ++x) s += w.at(x, y, z, 0);
      CHECK(std::fabs(s - 1.0) < 1e-5);
    }
  for (int x = 0; x < 4; ++x)
    for (int z = 0; z < 2; ++z) {
      double s = 0.0;
      for (int y = 0; y < 4; ++y) s += w.at(x, y, z, 1);
      CHECK(std::fabs(s - 1.0) < 1e-5);
    }
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 4; ++y) {
      double s = 0.0;
      for (int z = 0; z < 2; ++z) s += w.at(x, y, z, 2);
      CHECK(std::fabs(s - 1.0) < 1e-5);
    }
}

TEST_CASE("wap_pool examples") {
  Rng rng(1);
  {  // volume constant along the reduced axis, normalized weights -> that value
    Tensor f({2, 2, 3, 2});
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 2; ++y)
        for (int z = 0; z < 3; ++z)
          for (int c = 0; c < 2; ++c) f.at(x, y, z, c) = 10.0 * x + y + 0.5 * c;
    Tensor w({2, 2, 3});
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 2; ++y) {
        double parts[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
        const double s = parts[0] + parts[1] + parts[2];
        for (int z = 0; z < 3; ++z) w.at(x, y, z) = parts[z] / s;
      }
    Tensor plane = ad::wap_pool(Var(f), Var(w), 2).val();
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 2; ++y)
        for (int c = 0; c < 2; ++c)
          CHECK(plane.at(x, y, c) == doctest::Approx(10.0 * x + y + 0.5 * c).epsilon(1e-12));
  }
  {  // one-hot weights select a slice
    Tensor f = randn({2, 3, 2, 2}, rng);
    Tensor w({2, 3, 2});
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 3; ++y) w.at(x, y, 1) = 1.0;
    Tensor plane = ad::wap_pool(Var(f), Var(w), 2).val();
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 3; ++y)
        for (int c = 0; c < 2; ++c) CHECK(plane.at(x, y, c) == f.at(x, y, 1, c));
  }
  {  // random case against the scalar loop oracle, every axis
    Tensor f = randn({2, 2, 2, 3}, rng);
    Tensor w = rand_uniform({2, 2, 2}, rng);
    for (int axis = 0; axis < 3; ++axis) {
      Tensor plane = ad::wap_pool(Var(f), Var(w), axis).val();
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int c = 0; c < 3; ++c) {
            double acc = 0.0;
            for (int r = 0; r < 2; ++r) {
              int x = axis == 0 ? r : a;
              int y = axis == 1 ? r : (axis == 0 ? a : b);
              int z = axis == 2 ? r : b;
              acc += w.at(x, y, z) * f.at(x, y, z, c);
            }
            CHECK(plane.at(a, b, c) == doctest::Approx(acc).epsilon(1e-12));
          }
    }
  }
  CHECK_THROWS_AS(ad::wap_pool(Var(randn({2, 2, 2, 2}, rng)), Var(randn({2, 2, 2}, rng)), 3),
                  ConfigError);
}

TEST_CASE("wap_pool with uniform weights equals the mean along the axis") {
  Rng rng(2);
  Tensor f = randn({3, 4, 2, 2}, rng);
  const int dims[3] = {3, 4, 2};
  for (int axis = 0; axis < 3; ++axis) {
    Tensor w = Tensor::full({3, 4, 2}, 1.0 / dims[axis]);
    Tensor wap = ad::wap_pool(Var(f), Var(w), axis).val();
    Tensor mean_oracle(wap.shape());
    for (int64_t i = 0; i < wap.numel(); ++i) mean_oracle[i] = 0.0;
    for (int x = 0; x < 3; ++x)
      for (int y = 0; y < 4; ++y)
        for (int z = 0; z < 2; ++z)
          for (int c = 0; c < 2; ++c) {
            double& slot = axis == 0   ? mean_oracle.at(y, z, c)
                           : axis == 1 ? mean_oracle.at(x, z, c)
                                       : mean_oracle.at(x, y, c);
            slot += f.at(x, y, z, c) / dims[axis];
          }
    CHECK(max_abs_diff(wap, mean_oracle) < 1e-6);
  }
}

TEST_CASE("gmp_pool examples") {
  Rng rng(3);
  {  // one-hot volume projects the hot voxel
    Tensor f = Tensor::full({2, 2, 2, 1}, -5.0);
    f.at(1, 0, 1, 0) = 7.0;
    Tensor plane = ad::gmp_pool(Var(f), 2).val();
    CHECK(plane.at(1, 0, 0) == 7.0);
    CHECK(plane.at(0, 0, 0) == -5.0);
  }
  {  // constant volume -> constant plane
    Tensor f = Tensor::full({2, 3, 2, 2}, 1.25);
    Tensor plane = ad::gmp_pool(Var(f), 0).val();
    for (int64_t i = 0; i < plane.numel(); ++i) CHECK(plane[i] == 1.25);
  }
  {  // random volume vs loop oracle
    Tensor f = randn({2, 2, 2, 3}, rng);
    for (int axis = 0; axis < 3; ++axis) {
      Tensor plane = ad::gmp_pool(Var(f), axis).val();
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int c = 0; c < 3; ++c) {
            double best = -1e300;
            for (int r = 0; r < 2; ++r) {
              int x = axis == 0 ? r : a;
              int y = axis == 1 ? r : (axis == 0 ? a : b);
              int z = axis == 2 ? r : b;
              best = std::max(best, f.at(x, y, z, c));
            }
            CHECK(plane.at(a, b, c) == best);
          }
    }
  }
}

TEST_CASE("tpv_encode: shape preservation, determinism, gradients") {
  Fixture f;
  randomize(f.ps, f.rng);
  Rng rng(4);
  TpvTriplet t{Var(randn({4, 4, 2}, rng)), Var(randn({4, 2, 2}, rng)),
               Var(randn({4, 2, 2}, rng))};
  TpvTriplet e = f.net.encode(t);
  CHECK(e.xy.shape() == t.xy.shape());
  CHECK(e.yz.shape() == t.yz.shape());
  CHECK(e.zx.shape() == t.zx.shape());

  TpvTriplet e2 = f.net.encode(t);
  CHECK(max_abs_diff(e.xy.val(), e2.xy.val()) == 0.0);

  // Gradient of a readout of the encoded xy plane vs finite differences.
  Tensor r = randn({4, 4, 2}, rng);
  Tensor plane0 = t.xy.val();
  testutil::grad_check(
      [&](const Var& p) {
        TpvTriplet in{p, t.yz, t.zx};
        return testutil::scalar_readout(f.net.encode(in).xy, r);
      },
      plane0, 1e-4, 24);
}

TEST_CASE("broadcast examples and loop oracle") {
  Rng rng(5);
  std::vector<int> dims = {3, 4, 2};
  {  // all z-slices identical for the xy broadcast
    Tensor plane = randn({3, 4, 2}, rng);
    Tensor vol = ad::broadcast_plane(Var(plane), 2, dims).val();
    for (int x = 0; x < 3; ++x)
      for (int y = 0; y < 4; ++y)
        for (int z = 0; z < 2; ++z)
          for (int c = 0; c < 2; ++c) CHECK(vol.at(x, y, z, c) == plane.at(x, y, c));
  }
  {  // zero plane -> zero volume
    Tensor vol = ad::broadcast_plane(Var(Tensor({4, 2, 2})), 0, dims).val();
    for (int64_t i = 0; i < vol.numel(); ++i) CHECK(vol[i] == 0.0);
  }
  {  // random planes, every axis, per-index equality
    for (int axis = 0; axis < 3; ++axis) {
      std::vector<int> pshape = axis == 0   ? std::vector<int>{4, 2, 2}
                                : axis == 1 ? std::vector<int>{3, 2, 2}
                                            : std::vector<int>{3, 4, 2};
      Tensor plane = randn(pshape, rng);
      Tensor vol = ad::broadcast_plane(Var(plane), axis, dims).val();
      for (int x = 0; x < 3; ++x)
        for (int y = 0; y < 4; ++y)
          for (int z = 0; z < 2; ++z)
            for (int c = 0; c < 2; ++c) {
              const double expect = axis == 0   ? plane.at(y, z, c)
                                    : axis == 1 ? plane.at(x, z, c)
                                                : plane.at(x, y, c);
              CHECK(vol.at(x, y, z, c) == expect);
            }
    }
  }
}

TEST_CASE("agg_weights: normalization and zero-init uniformity") {
  Fixture f;
  GridSpec g = f.grid();
  Rng rng(6);
  Var f3d(randn({4, 4, 2, 2}, rng));
  std::array<Var, 3> broadcasts = {Var(randn({4, 4, 2, 2}, rng)), Var(randn({4, 4, 2, 2}, rng)),
                                   Var(randn({4, 4, 2, 2}, rng))};

  // Zero-init conv -> uniform 0.25.
  Tensor w = f.net.agg_weights(f3d, broadcasts).val();
  for (int64_t i = 0; i < w.numel(); ++i) CHECK(w[i] == doctest::Approx(0.25).epsilon(1e-9));

  randomize(f.ps, f.rng);
  w = f.net.agg_weights(f3d, broadcasts).val();
  for (int64_t v = 0; v < g.num_voxels(); ++v) {
    double s = 0.0;
    for (int c = 0; c < 4; ++c) s += w[v * 4 + c];
    CHECK(std::fabs(s - 1.0) < 1e-5);
  }
}

TEST_CASE("agg_weights with a kernel-1 conv commutes with voxel permutation") {
  // Per-voxel projection (conv kernel 1) + softmax: permuting voxel contents
  // permutes the weights identically.
  Rng rng(7);
  Tensor w0 = randn({1, 1, 1, 2, 4}, rng);
  Tensor b0 = randn({4}, rng);
  auto weights_of = [&](const Tensor& vol) {
    Var logits = ad::conv3d(Var(vol), Var(w0), Var(b0), 1, 0);
    return ad::softmax(logits, 3).val();
  };
  Tensor vol = randn({2, 2, 2, 2}, rng);
  Tensor w = weights_of(vol);

  // Swap voxel (0,0,0) and (1,1,1).
  Tensor vol2 = vol;
  for (int c = 0; c < 2; ++c) std::swap(vol2.at(0, 0, 0, c), vol2.at(1, 1, 1, c));
  Tensor w2 = weights_of(vol2);
  for (int c = 0; c < 4; ++c) {
    CHECK(w2.at(0, 0, 0, c) == w.at(1, 1, 1, c));
    CHECK(w2.at(1, 1, 1, c) == w.at(0, 0, 0, c));
    CHECK(w2.at(0, 1, 0, c) == w.at(0, 1, 0, c));
  }
}

TEST_CASE("aggregate examples, loop oracle and convexity") {
  Rng rng(8);
  Tensor f0 = randn({2, 2, 2, 3}, rng), bxy = randn({2, 2, 2, 3}, rng),
         byz = randn({2, 2, 2, 3}, rng), bzx = randn({2, 2, 2, 3}, rng);

  {  // one-hot on channel 0 -> exactly F3D
    Tensor w({2, 2, 2, 4});
    for (int64_t v = 0; v < 8; ++v) w[v * 4 + 0] = 1.0;
    Tensor out = ad::aggregate4(Var(f0), Var(bxy), Var(byz), Var(bzx), Var(w)).val();
    CHECK(max_abs_diff(out, f0) == 0.0);
  }
  {  // uniform -> per-voxel mean of the four volumes
    Tensor w = Tensor::full({2, 2, 2, 4}, 0.25);
    Tensor out = ad::aggregate4(Var(f0), Var(bxy), Var(byz), Var(bzx), Var(w)).val();
    for (int64_t i = 0; i < out.numel(); ++i)
      CHECK(out[i] == doctest::Approx((f0[i] + bxy[i] + byz[i] + bzx[i]) / 4).epsilon(1e-12));
  }
  {  // random normalized weights: loop oracle + convex bounds
    Tensor w({2, 2, 2, 4});
    for (int64_t v = 0; v < 8; ++v) {
      double parts[4], s = 0.0;
      for (double& p : parts) {
        p = rng.uniform(0.01, 1.0);
        s += p;
      }
      for (int c = 0; c < 4; ++c) w[v * 4 + c] = parts[c] / s;
    }
    Tensor out = ad::aggregate4(Var(f0), Var(bxy), Var(byz), Var(bzx), Var(w)).val();
    for (int64_t v = 0; v < 8; ++v)
      for (int c = 0; c < 3; ++c) {
        const int64_t i = v * 3 + c;
        const double expect = w[v * 4 + 0] * f0[i] + w[v * 4 + 1] * bxy[i] +
                              w[v * 4 + 2] * byz[i] + w[v * 4 + 3] * bzx[i];
        CHECK(out[i] == doctest::Approx(expect).epsilon(1e-12));
        const double lo = std::min({f0[i], bxy[i], byz[i], bzx[i]});
        const double hi = std::max({f0[i], bxy[i], byz[i], bzx[i]});
        CHECK(out[i] >= lo - 1e-12);
        CHECK(out[i] <= hi + 1e-12);
      }
  }
}

TEST_CASE("ssc_head: valid distributions; zero-init head is uniform") {
  Fixture f;
  Rng rng(9);
  Var feat(randn({4, 4, 2, 2}, rng));

  {  // zero-init projection -> uniform 1/Nc
    for (const auto& name : {"tpv.head1.w", "tpv.head1.b", "tpv.head2.w", "tpv.head2.b"})
      f.ps.find(name)->node()->value.fill(0.0);
    Tensor probs = f.net.head(feat).val();
    for (int64_t i = 0; i < probs.numel(); ++i)
      CHECK(probs[i] == doctest::Approx(1.0 / 8).epsilon(1e-9));
  }
  randomize(f.ps, f.rng);
  Tensor probs = f.net.head(feat).val();
  for (int64_t v = 0; v < 32; ++v) {
    double s = 0.0;
    for (int c = 0; c < 8; ++c) s += probs[v * 8 + c];
    CHECK(std::fabs(s - 1.0) < 1e-5);
  }
}

TEST_CASE("softmax argmax is invariant to a constant logit shift") {
  Rng rng(10);
  Tensor logits = randn({6, 5}, rng);
  Tensor shifted = logits;
  for (int i = 0; i < 6; ++i)
    for (int c = 0; c < 5; ++c) shifted.at(i, c) += 3.7;
  Tensor p1 = ad::softmax(Var(logits), 1).val();
  Tensor p2 = ad::softmax(Var(shifted), 1).val();
  for (int i = 0; i < 6; ++i) {
    int a1 = 0, a2 = 0;
    for (int c = 1; c < 5; ++c) {
      if (p1.at(i, c) > p1.at(i, a1)) a1 = c;
      if (p2.at(i, c) > p2.at(i, a2)) a2 = c;
    }
    CHECK(a1 == a2);
  }
}

TEST_CASE("tpv_net forward: dims preserved, valid distributions, both poolers") {
  for (PoolMode mode : {PoolMode::kWap, PoolMode::kGmp}) {
    Config cfg = small_config();
    cfg.pool_mode = mode;
    nn::ParamStore ps;
    Rng rng(52);
    TpvNet net(ps, cfg, rng);
    randomize(ps, rng);

    GridSpec g;
    g.dims = cfg.grid_dims;
    g.origin = {cfg.grid_origin[0], cfg.grid_origin[1], cfg.grid_origin[2]};
    g.voxel_size = cfg.voxel_size;

    TpvNetOut out = net.forward(Var(randn({4, 4, 2, 2}, rng)), g);
    CHECK(out.f_final.shape() == std::vector<int>{4, 4, 2, 2});
    CHECK(out.probs.shape() == std::vector<int>{4, 4, 2, 8});
    for (int64_t v = 0; v < 32; ++v) {
      double s = 0.0;
      for (int c = 0; c < 8; ++c) s += out.probs.val()[v * 8 + c];
      CHECK(std::fabs(s - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("tpv_net composite gradient check on a 4x4x2 grid") {
  Fixture f;
  randomize(f.ps, f.rng);
  GridSpec g = f.grid();
  Rng rng(11);
  Tensor vol0 = randn({4, 4, 2, 2}, rng);
  Tensor r = randn({4, 4, 2, 8}, rng);

  // Gradient w.r.t. the input volume through the whole pool->encode->
  // broadcast->aggregate->head composite.
  testutil::grad_check(
      [&](const Var& v) { return testutil::scalar_readout(f.net.forward(v, g).probs, r); }, vol0,
      2e-4, 32);

  // And w.r.t. a parameter sample.
  std::vector<Var> probe;
  for (const auto& name : {"tpv.pool.w", "tpv.agg.w", "tpv.enc_a.w", "tpv.head1.w", "tpv.head2.b"})
    probe.push_back(*f.ps.find(name));
  param_grad_check(
      [&]() { return testutil::scalar_readout(f.net.forward(Var(vol0), g).probs, r); }, probe, 3,
      2e-4, 12);
}
