#include "tpvocc/tpv_net.hpp"

namespace tpvocc {

using ad::Var;

TpvNet::TpvNet(nn::ParamStore& ps, const Config& cfg, Rng& rng) : cfg_(&cfg) {
  const int c = cfg.channels;
  // Zero-init projections: pooling and aggregation weights start uniform.
  pool_conv_ = nn::Conv3d(ps, "tpv.pool", c, 3, 3, 1, 1, rng, /*zero_init=*/true);
  agg_conv_ = nn::Conv3d(ps, "tpv.agg", c, 4, 3, 1, 1, rng, /*zero_init=*/true);
  enc_a_ = nn::Conv2d(ps, "tpv.enc_a", c, c, 3, 1, 1, rng);
  enc_down_ = nn::Conv2d(ps, "tpv.enc_down", c, 2 * c, 3, 2, 1, rng);
  enc_mid_ = nn::Conv2d(ps, "tpv.enc_mid", 2 * c, 2 * c, 3, 1, 1, rng);
  enc_up_ = nn::Conv2d(ps, "tpv.enc_up", 2 * c, c, 3, 1, 1, rng);
  enc_fuse_ = nn::Conv2d(ps, "tpv.enc_fuse", c, c, 3, 1, 1, rng);
  head1_ = nn::Linear(ps, "tpv.head1", c, c, rng);
  head2_ = nn::Linear(ps, "tpv.head2", c, cfg.num_classes, rng);
}

Var TpvNet::pool_weights(const Var& f) const {
  Var logits = pool_conv_.forward(f);  // [X,Y,Z,3]
  if (cfg_->pool_softmax_per_voxel) return ad::softmax(logits, 3);
  std::vector<Var> channels;
  channels.reserve(3);
  for (int d = 0; d < 3; ++d) channels.push_back(ad::softmax(ad::select_last(logits, d), d));
  return ad::stack_last(channels);
}

TpvTriplet TpvNet::pool(const Var& f, const Var& weights) const {
  TpvTriplet t;
  if (cfg_->pool_mode == PoolMode::kGmp) {
    t.xy = ad::gmp_pool(f, 2);
    t.yz = ad::gmp_pool(f, 0);
    t.zx = ad::gmp_pool(f, 1);
  } else {
    t.xy = ad::wap_pool(f, ad::select_last(weights, 2), 2);
    t.yz = ad::wap_pool(f, ad::select_last(weights, 0), 0);
    t.zx = ad::wap_pool(f, ad::select_last(weights, 1), 1);
  }
  return t;
}

Var TpvNet::encode_plane(const Var& plane) const {
  const auto& sh = plane.shape();
  Var h = ad::relu(enc_a_.forward(plane));
  Var d = ad::relu(enc_mid_.forward(ad::relu(enc_down_.forward(h))));
  Var u = ad::crop2d(ad::upsample2x_2d(enc_up_.forward(d)), sh[0], sh[1]);
  return enc_fuse_.forward(ad::relu(ad::add(h, u)));
}

TpvTriplet TpvNet::encode(const TpvTriplet& t) const {
  return {encode_plane(t.xy), encode_plane(t.yz), encode_plane(t.zx)};
}

std::array<Var, 3> TpvNet::broadcast(const TpvTriplet& t, const GridSpec& grid) const {
  std::vector<int> dims = {grid.dims[0], grid.dims[1], grid.dims[2]};
  return {ad::broadcast_plane(t.xy, 2, dims), ad::broadcast_plane(t.yz, 0, dims),
          ad::broadcast_plane(t.zx, 1, dims)};
}

Var TpvNet::agg_weights(const Var& f3d, const std::array<Var, 3>& broadcasts) const {
  Var summed = ad::add(ad::add(f3d, broadcasts[0]), ad::add(broadcasts[1], broadcasts[2]));
  return ad::softmax(agg_conv_.forward(summed), 3);
}

Var TpvNet::aggregate(const Var& f3d, const std::array<Var, 3>& broadcasts, const Var& w4) {
  return ad::aggregate4(f3d, broadcasts[0], broadcasts[1], broadcasts[2], w4);
}

Var TpvNet::head(const Var& f_final) const {
  const auto& sh = f_final.shape();
  const int64_t v = (int64_t)sh[0] * sh[1] * sh[2];
  Var flat = ad::reshape(f_final, {(int)v, sh[3]});
  Var logits = head2_.forward(ad::relu(head1_.forward(flat)));
  Var probs = ad::softmax(logits, 1);
  return ad::reshape(probs, {sh[0], sh[1], sh[2], cfg_->num_classes});
}

TpvNetOut TpvNet::forward(const Var& f3d, const GridSpec& grid) const {
  TpvNetOut o;
  o.pool_weights = pool_weights(f3d);
  o.planes = pool(f3d, o.pool_weights);
  o.encoded = encode(o.planes);
  o.broadcasts = broadcast(o.encoded, grid);
  o.agg_weights = agg_weights(f3d, o.broadcasts);
  o.f_final = aggregate(f3d, o.broadcasts, o.agg_weights);
  o.probs = head(o.f_final);
  return o;
}

}  // namespace tpvocc
