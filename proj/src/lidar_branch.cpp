#include "tpvocc/lidar_branch.hpp"

#include "tpvocc/data.hpp"

namespace tpvocc {

using ad::Var;

LidarBranch::LidarBranch(nn::ParamStore& ps, const Config& cfg, Rng& rng)
    : channels_(cfg.channels) {
  mlp1_ = nn::Linear(ps, "lidar.mlp1", 3, 2 * cfg.channels, rng);
  mlp2_ = nn::Linear(ps, "lidar.mlp2", 2 * cfg.channels, cfg.channels, rng);
  // Nonzero output bias keeps encoded features away from the exact zero
  // vector, so densified support matches the voxelized point support.
  Tensor& b2 = mlp2_.b.node()->value;
  for (int64_t i = 0; i < b2.numel(); ++i) b2[i] = rng.uniform(0.02, 0.1);
  refine_ = Refine3d(ps, "lidar.refine", cfg.channels, cfg.refine_blocks, rng);
}

Var LidarBranch::encode_points(const Tensor& points, const GridSpec& grid) const {
  grid.validate();
  const int n = points.numel() == 0 ? 0 : points.size(0);
  Tensor norm({n, 3});
  const Vec3 ext = grid.extent();
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a)
      norm.at(i, a) = (points.at(i, a) - grid.origin[a]) / ext[a];
  return mlp2_.forward(ad::relu(mlp1_.forward(ad::constant(std::move(norm)))));
}

Var LidarBranch::densify(const Var& feats, const Tensor& points, const GridSpec& grid) const {
  const auto& fs = feats.shape();
  const int n = points.numel() == 0 ? 0 : points.size(0);
  if (fs.size() != 2 || fs[0] != n) throw ConfigError("densify: features not row-aligned with points");
  std::vector<int64_t> ids = point_voxel_ids(data::tensor_to_points(points), grid);
  Var vol = ad::densify_max(feats, std::move(ids), grid.num_voxels());
  return ad::reshape(vol, {grid.dims[0], grid.dims[1], grid.dims[2], fs[1]});
}

LidarBranch::Out LidarBranch::forward(const Tensor& points, const GridSpec& grid) {
  Out o;
  o.point_feats = encode_points(points, grid);
  o.densified = densify(o.point_feats, points, grid);
  o.f3d = refine_.forward(o.densified);
  return o;
}

}  // namespace tpvocc
