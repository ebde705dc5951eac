#pragma once

#include <string>
#include <tuple>
#include <vector>

#include "tpvocc/autodiff.hpp"
#include "tpvocc/config.hpp"
#include "tpvocc/geometry.hpp"
#include "tpvocc/nn.hpp"

namespace tpvocc {

// Per-pixel discrete depth probabilities plus the bin edges they live on.
struct DepthDistribution {
  ad::Var probs;              // [H',W',B], softmax over B
  std::vector<double> edges;  // B+1 monotone depths in meters
};

inline std::vector<double> depth_bin_edges(double z_min, double z_max, int bins) {
  std::vector<double> e((size_t)bins + 1);
  for (int i = 0; i <= bins; ++i) e[(size_t)i] = z_min + (z_max - z_min) * i / (double)bins;
  return e;
}

// Pre-splat frustum: features for every (pixel, depth bin) cell plus the
// world coordinate of each cell center.
struct FrustumFeature {
  ad::Var feat;   // [H',W',B,C]
  Tensor coords;  // [H'*W'*B, 3]
};

// Shape-preserving residual 3D encoder-decoder used to refine voxel volumes
// in both branches.
class Refine3d {
 public:
  Refine3d() = default;
  Refine3d(nn::ParamStore& ps, const std::string& prefix, int channels, int blocks_per_scale,
           Rng& rng);
  ad::Var forward(const ad::Var& vol) const;

 private:
  struct Block {
    nn::Conv3d a, b;
  };
  nn::Conv3d conv_in_, conv_down_, conv_up_;
  std::vector<Block> low_, high_;
};

// Occupancy-gated voxel transformer: deformable cross-attention into the LSS
// volume at occupied voxels, a shared per-voxel MLP elsewhere.
class Evt {
 public:
  Evt() = default;
  Evt(nn::ParamStore& ps, const std::string& prefix, int channels, int heads, int points,
      Rng& rng);

  ad::Var forward(const ad::Var& f_lss, const OccupancyMask& m);

  // Total attention-path voxels since the last reset; each forward adds
  // exactly popcount(mask).
  int64_t attention_invocations() const { return attn_invocations_; }
  void reset_attention_counter() { attn_invocations_ = 0; }

 private:
  int channels_ = 0, heads_ = 0, points_ = 0;
  nn::Linear offset_, attn_, value_, out_, mlp1_, mlp2_;
  Tensor offset_template_;  // [H,K,3] in voxel units
  int64_t attn_invocations_ = 0;
};

class CameraBranch {
 public:
  CameraBranch(nn::ParamStore& ps, const Config& cfg, Rng& rng);

  // image [H,W,3] -> (trunk feature [H',W',Ct], depth distribution, context [H',W',C])
  std::tuple<ad::Var, DepthDistribution, ad::Var> encode_image(const Tensor& image) const;

  // Outer product D (x) C with back-projected bin-center coordinates.
  FrustumFeature lss_lift(const DepthDistribution& d, const ad::Var& ctx,
                          const CameraModel& feat_cam) const;

  // Mean-pool frustum cells into voxels; empty voxels stay zero.
  ad::Var splat(const FrustumFeature& f, const GridSpec& grid) const;

  ad::Var evt_transform(const ad::Var& f_lss, const OccupancyMask& m) { return evt_.forward(f_lss, m); }
  const Refine3d& refine3d() const { return refine_; }
  Evt& evt() { return evt_; }

  struct Out {
    ad::Var f2d;
    DepthDistribution depth;
    ad::Var context;
    ad::Var f_lss;
    ad::Var f_evt;
    ad::Var f3d;
  };
  Out forward(const Tensor& image, const OccupancyMask& mask, const CameraModel& cam,
              const GridSpec& grid);

 private:
  const Config* cfg_ = nullptr;
  nn::Conv2d enc1_, enc2_, enc3_, depth_head_, ctx_head_;
  Evt evt_;
  Refine3d refine_;
};

}  // namespace tpvocc
