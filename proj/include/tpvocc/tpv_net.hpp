#pragma once

#include <array>

#include "tpvocc/autodiff.hpp"
#include "tpvocc/config.hpp"
#include "tpvocc/geometry.hpp"
#include "tpvocc/nn.hpp"

namespace tpvocc {

// Axis convention for the three TPV planes: reducing axis 2 (z) gives the XY
// plane, axis 0 (x) the YZ plane, axis 1 (y) the ZX plane.
struct TpvTriplet {
  ad::Var xy;  // [X,Y,C]
  ad::Var yz;  // [Y,Z,C]
  ad::Var zx;  // [X,Z,C]
};

struct TpvNetOut {
  ad::Var pool_weights;                 // [X,Y,Z,3]
  TpvTriplet planes;                    // pooled
  TpvTriplet encoded;                   // after the 2D encoder
  std::array<ad::Var, 3> broadcasts;    // order: xy, yz, zx volumes
  ad::Var agg_weights;                  // [X,Y,Z,4]
  ad::Var f_final;                      // [X,Y,Z,C]
  ad::Var probs;                        // [X,Y,Z,Nc]
};

// Shared TPV occupancy prediction network: pooler, plane encoder, broadcast +
// aggregation, SSC head. Identical for both branches, which is what makes the
// cross-modal distillation pairs line up.
class TpvNet {
 public:
  TpvNet(nn::ParamStore& ps, const Config& cfg, Rng& rng);

  // Pooling weights for the three planes. Default: each channel d is
  // softmax-normalized along spatial axis d, so the weighted sum along d is a
  // convex average. The paper-literal per-voxel 3-way softmax sits behind
  // cfg.pool_softmax_per_voxel.
  ad::Var pool_weights(const ad::Var& f) const;

  TpvTriplet pool(const ad::Var& f, const ad::Var& weights) const;
  TpvTriplet encode(const TpvTriplet& t) const;
  std::array<ad::Var, 3> broadcast(const TpvTriplet& t, const GridSpec& grid) const;
  ad::Var agg_weights(const ad::Var& f3d, const std::array<ad::Var, 3>& broadcasts) const;
  static ad::Var aggregate(const ad::Var& f3d, const std::array<ad::Var, 3>& broadcasts,
                           const ad::Var& w4);
  ad::Var head(const ad::Var& f_final) const;

  TpvNetOut forward(const ad::Var& f3d, const GridSpec& grid) const;

 private:
  ad::Var encode_plane(const ad::Var& plane) const;

  const Config* cfg_ = nullptr;
  nn::Conv3d pool_conv_, agg_conv_;
  nn::Conv2d enc_a_, enc_down_, enc_mid_, enc_up_, enc_fuse_;
  nn::Linear head1_, head2_;
};

}  // namespace tpvocc
