#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "tpvocc/data.hpp"
#include "tpvocc/lidar_branch.hpp"

using namespace tpvocc;
using ad::Var;
using testutil::max_abs_diff;
using testutil::small_config;

namespace {
struct Fixture {
  Config cfg = small_config();
  nn::ParamStore ps;
  Rng rng{31};
  LidarBranch branch{ps, cfg, rng};

  GridSpec grid() const {
    GridSpec g;
    g.dims = cfg.grid_dims;
    g.origin = {cfg.grid_origin[0], cfg.grid_origin[1], cfg.grid_origin[2]};
    g.voxel_size = cfg.voxel_size;
    return g;
  }
};
}  // namespace

TEST_CASE("encode_points: empty cloud yields an empty feature set") {
  Fixture f;
  Var feats = f.branch.encode_points(Tensor({0, 3}), f.grid());
  CHECK(feats.val().shape() == std::vector<int>{0, 2});
}

TEST_CASE("encode_points: point-wise map duplicates and permutes with the input") {
  Fixture f;
  Rng rng(1);
  Tensor pts({4, 3});
  for (int64_t i = 0; i < pts.numel(); ++i) pts[i] = rng.uniform(0.0, 1.0);
  // Duplicate row 1 as row 3.
  for (int a = 0; a < 3; ++a) pts.at(3, a) = pts.at(1, a);

  Tensor feats = f.branch.encode_points(pts, f.grid()).val();
  for (int c = 0; c < 2; ++c) CHECK(feats.at(3, c) == feats.at(1, c));

  Tensor perm({4, 3});
  const int order[4] = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i)
    for (int a = 0; a < 3; ++a) perm.at(i, a) = pts.at(order[i], a);
  Tensor pfeats = f.branch.encode_points(perm, f.grid()).val();
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 2; ++c) CHECK(pfeats.at(i, c) == feats.at(order[i], c));
}

TEST_CASE("densify examples") {
  Fixture f;
  GridSpec g = f.grid();

  {  // no in-bounds points -> zero volume
    Tensor pts = Tensor::from({2, 3}, {9, 9, 9, -5, 0, 0});
    Var feats = f.branch.encode_points(pts, g);
    Tensor vol = f.branch.densify(feats, pts, g).val();
    for (int64_t i = 0; i < vol.numel(); ++i) CHECK(vol[i] == 0.0);
  }
  {  // one point per voxel -> that point's feature
    const Vec3 c0 = g.voxel_center(1, 0, 1);
    const Vec3 c1 = g.voxel_center(3, 3, 0);
    Tensor pts = Tensor::from({2, 3}, {c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]});
    Var feats = f.branch.encode_points(pts, g);
    Tensor vol = f.branch.densify(feats, pts, g).val();
    for (int c = 0; c < 2; ++c) {
      CHECK(vol.at(1, 0, 1, c) == feats.val().at(0, c));
      CHECK(vol.at(3, 3, 0, c) == feats.val().at(1, c));
    }
  }
  {  // several points per voxel -> element-wise max (loop oracle)
    Rng rng(2);
    const int n = 25;
    Tensor pts({n, 3});
    for (int i = 0; i < n; ++i) {
      pts.at(i, 0) = rng.uniform(0.0, 2.0);
      pts.at(i, 1) = rng.uniform(-1.0, 1.0);
      pts.at(i, 2) = rng.uniform(0.0, 1.0);
    }
    Var feats = f.branch.encode_points(pts, g);
    Tensor vol = f.branch.densify(feats, pts, g).val();

    Tensor oracle({4, 4, 2, 2});
    std::vector<bool> seen((size_t)g.num_voxels(), false);
    for (int i = 0; i < n; ++i) {
      auto idx = voxel_index({pts.at(i, 0), pts.at(i, 1), pts.at(i, 2)}, g);
      if (!idx) continue;
      const auto [x, y, z] = *idx;
      const size_t v = (size_t)g.linear_index(x, y, z);
      for (int c = 0; c < 2; ++c) {
        const double fv = feats.val().at(i, c);
        if (!seen[v] || fv > oracle.at(x, y, z, c)) oracle.at(x, y, z, c) = fv;
      }
      // mark seen after both channels were initialized
      if (!seen[v]) {
        seen[v] = true;
      }
    }
    CHECK(max_abs_diff(vol, oracle) == 0.0);
  }
}

TEST_CASE("densify: order-invariant and monotone under added points") {
  Fixture f;
  GridSpec g = f.grid();
  Rng rng(3);
  const int n = 16;
  Tensor pts({n, 3});
  for (int i = 0; i < n; ++i) {
    pts.at(i, 0) = rng.uniform(0.0, 2.0);
    pts.at(i, 1) = rng.uniform(-1.0, 1.0);
    pts.at(i, 2) = rng.uniform(0.0, 1.0);
  }
  Tensor vol = f.branch.densify(f.branch.encode_points(pts, g), pts, g).val();

  // Permuted input -> identical volume.
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[(size_t)i] = i;
  std::shuffle(order.begin(), order.end(), rng.engine());
  Tensor perm({n, 3});
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) perm.at(i, a) = pts.at(order[(size_t)i], a);
  Tensor vol2 = f.branch.densify(f.branch.encode_points(perm, g), perm, g).val();
  CHECK(max_abs_diff(vol, vol2) == 0.0);

  // Adding a point to an occupied voxel can only raise its max-pooled entries.
  auto host = voxel_index({pts.at(0, 0), pts.at(0, 1), pts.at(0, 2)}, g);
  REQUIRE(host.has_value());
  Tensor more({n + 1, 3});
  for (int64_t i = 0; i < pts.numel(); ++i) more[i] = pts[i];
  const Vec3 extra = g.voxel_center((*host)[0], (*host)[1], (*host)[2]);
  for (int a = 0; a < 3; ++a) more.at(n, a) = extra[(size_t)a];
  Tensor vol3 = f.branch.densify(f.branch.encode_points(more, g), more, g).val();
  for (int c = 0; c < 2; ++c)
    CHECK(vol3.at((*host)[0], (*host)[1], (*host)[2], c) >=
          vol.at((*host)[0], (*host)[1], (*host)[2], c));
}

TEST_CASE("densified support equals voxelized point support") {
  Fixture f;
  GridSpec g = f.grid();
  Rng rng(4);
  const int n = 40;
  Tensor pts({n, 3});
  for (int i = 0; i < n; ++i) {
    pts.at(i, 0) = rng.uniform(-0.5, 2.5);
    pts.at(i, 1) = rng.uniform(-1.5, 1.5);
    pts.at(i, 2) = rng.uniform(-0.5, 1.5);
  }
  Tensor vol = f.branch.densify(f.branch.encode_points(pts, g), pts, g).val();
  OccupancyMask m = voxelize(data::tensor_to_points(pts), g);

  for (int64_t v = 0; v < g.num_voxels(); ++v) {
    bool nonzero = false;
    for (int c = 0; c < 2; ++c)
      if (vol[v * 2 + c] != 0.0) nonzero = true;
    CHECK(nonzero == (m.mask[(size_t)v] == 1));
  }
}
