#pragma once

#include "tpvocc/camera_branch.hpp"
#include "tpvocc/config.hpp"
#include "tpvocc/geometry.hpp"
#include "tpvocc/nn.hpp"

namespace tpvocc {

class LidarBranch {
 public:
  LidarBranch(nn::ParamStore& ps, const Config& cfg, Rng& rng);

  // Shared point-wise MLP over grid-normalized xyz -> [N,C].
  ad::Var encode_points(const Tensor& points, const GridSpec& grid) const;

  // Element-wise max over each voxel's points; empty voxels are zero.
  ad::Var densify(const ad::Var& feats, const Tensor& points, const GridSpec& grid) const;

  const Refine3d& refine3d() const { return refine_; }

  struct Out {
    ad::Var point_feats;  // [N,C]
    ad::Var densified;    // [X,Y,Z,C]
    ad::Var f3d;          // refined volume
  };
  Out forward(const Tensor& points, const GridSpec& grid);

 private:
  int channels_ = 0;
  nn::Linear mlp1_, mlp2_;
  Refine3d refine_;
};

}  // namespace tpvocc
