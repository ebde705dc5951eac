#include "tpvocc/camera_branch.hpp"

#include <cmath>

namespace tpvocc {

using ad::Var;

// ---------------- Refine3d ----------------

Refine3d::Refine3d(nn::ParamStore& ps, const std::string& prefix, int c, int blocks_per_scale,
                   Rng& rng) {
  if (blocks_per_scale < 1) throw ConfigError("refine3d: need at least one block per scale");
  conv_in_ = nn::Conv3d(ps, prefix + ".in", c, c, 3, 1, 1, rng);
  conv_down_ = nn::Conv3d(ps, prefix + ".down", c, 2 * c, 3, 2, 1, rng);
  for (int i = 0; i < blocks_per_scale; ++i) {
    const std::string n = prefix + ".low" + std::to_string(i);
    low_.push_back({nn::Conv3d(ps, n + "a", 2 * c, 2 * c, 3, 1, 1, rng),
                    nn::Conv3d(ps, n + "b", 2 * c, 2 * c, 3, 1, 1, rng)});
  }
  conv_up_ = nn::Conv3d(ps, prefix + ".up", 2 * c, c, 3, 1, 1, rng);
  for (int i = 0; i < blocks_per_scale; ++i) {
    const std::string n = prefix + ".high" + std::to_string(i);
    high_.push_back({nn::Conv3d(ps, n + "a", c, c, 3, 1, 1, rng),
                     nn::Conv3d(ps, n + "b", c, c, 3, 1, 1, rng)});
  }
}

namespace {
Var resblock(const nn::Conv3d& a, const nn::Conv3d& b, const Var& x) {
  return ad::relu(ad::add(x, b.forward(ad::relu(a.forward(x)))));
}

// Nearest upsample back to an arbitrary (possibly odd) shape.
Var upsample3d_to(const Var& x, int nx, int ny, int nz) {
  Var up = ad::upsample2x_3d(x);
  const auto& sh = up.shape();
  if (sh[0] == nx && sh[1] == ny && sh[2] == nz) return up;
  // Crop via gather on flattened rows.
  const int c = sh[3];
  std::vector<int64_t> idx;
  idx.reserve((size_t)nx * ny * nz);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j)
      for (int k = 0; k < nz; ++k)
        idx.push_back(((int64_t)std::min(i, sh[0] - 1) * sh[1] + std::min(j, sh[1] - 1)) * sh[2] +
                      std::min(k, sh[2] - 1));
  Var flat = ad::reshape(up, {sh[0] * sh[1] * sh[2], c});
  return ad::reshape(ad::gather_rows(flat, std::move(idx)), {nx, ny, nz, c});
}
}  // namespace

Var Refine3d::forward(const Var& vol) const {
  const auto& sh = vol.shape();
  Var h = ad::relu(conv_in_.forward(vol));
  Var d = ad::relu(conv_down_.forward(h));
  for (const Block& blk : low_) d = resblock(blk.a, blk.b, d);
  Var u = upsample3d_to(conv_up_.forward(d), sh[0], sh[1], sh[2]);
  Var m = ad::add(h, u);
  for (const Block& blk : high_) m = resblock(blk.a, blk.b, m);
  return m;
}

// ---------------- EVT ----------------

Evt::Evt(nn::ParamStore& ps, const std::string& prefix, int channels, int heads, int points,
         Rng& rng)
    : channels_(channels), heads_(heads), points_(points) {
  // Offsets start at the fixed template: the predicting map is zero-init.
  offset_ = nn::Linear(ps, prefix + ".offset", channels, heads * points * 3, rng,
                       /*zero_init=*/true);
  attn_ = nn::Linear(ps, prefix + ".attn", channels, heads * points, rng);
  value_ = nn::Linear(ps, prefix + ".value", channels, channels, rng);
  out_ = nn::Linear(ps, prefix + ".out", heads * channels, channels, rng);
  mlp1_ = nn::Linear(ps, prefix + ".mlp1", channels, 2 * channels, rng);
  mlp2_ = nn::Linear(ps, prefix + ".mlp2", 2 * channels, channels, rng);

  // Cube-corner template, radius growing with the head index.
  offset_template_ = Tensor({heads, points, 3});
  static const double corners[8][3] = {{-1, -1, -1}, {1, -1, -1}, {-1, 1, -1}, {1, 1, -1},
                                       {-1, -1, 1},  {1, -1, 1},  {-1, 1, 1},  {1, 1, 1}};
  for (int h = 0; h < heads; ++h) {
    const double radius = 0.75 * (h + 1);
    for (int k = 0; k < points; ++k) {
      const double scale = radius * (1.0 + k / 8 * 0.5);
      for (int a = 0; a < 3; ++a)
        offset_template_.at(h, k, a) = scale * corners[k % 8][a] / std::sqrt(3.0);
    }
  }
}

Var Evt::forward(const Var& f_lss, const OccupancyMask& m) {
  const auto& sh = f_lss.shape();
  if (sh.size() != 4 || sh[3] != channels_) throw ConfigError("evt: bad volume shape");
  const int nx = sh[0], ny = sh[1], nz = sh[2];
  const int64_t nvox = (int64_t)nx * ny * nz;
  if ((int64_t)m.mask.size() != nvox) throw ConfigError("evt: mask does not match volume");

  std::vector<int64_t> occ, unocc;
  occ.reserve((size_t)nvox);
  unocc.reserve((size_t)nvox);
  for (int64_t v = 0; v < nvox; ++v) (m.mask[(size_t)v] ? occ : unocc).push_back(v);
  attn_invocations_ += (int64_t)occ.size();

  Var flat = ad::reshape(f_lss, {(int)nvox, channels_});
  Var out_flat;

  if (!occ.empty()) {
    const int no = (int)occ.size();
    Var q = ad::gather_rows(flat, occ);
    // Sampling positions = voxel center + template + predicted offset,
    // in voxel-index space.
    Tensor base({no, heads_ * points_ * 3});
    for (int i = 0; i < no; ++i) {
      const int64_t v = occ[(size_t)i];
      const double cx = (double)(v / ((int64_t)ny * nz));
      const double cy = (double)((v / nz) % ny);
      const double cz = (double)(v % nz);
      for (int h = 0; h < heads_; ++h)
        for (int k = 0; k < points_; ++k) {
          const int64_t o = ((int64_t)h * points_ + k) * 3;
          base[(int64_t)i * heads_ * points_ * 3 + o + 0] = cx + offset_template_.at(h, k, 0);
          base[(int64_t)i * heads_ * points_ * 3 + o + 1] = cy + offset_template_.at(h, k, 1);
          base[(int64_t)i * heads_ * points_ * 3 + o + 2] = cz + offset_template_.at(h, k, 2);
        }
    }
    Var pos = ad::add_const(offset_.forward(q), base);
    Var coords = ad::reshape(pos, {no * heads_ * points_, 3});
    Var sampled = ad::trilinear_sample(f_lss, coords);
    Var values = ad::reshape(value_.forward(sampled), {no, heads_, points_, channels_});
    Var attn = ad::softmax(ad::reshape(attn_.forward(q), {no, heads_, points_}), 2);
    Var combined = ad::attn_combine(attn, values);
    Var occ_out = ad::add(q, out_.forward(combined));
    out_flat = ad::scatter_rows(occ_out, occ, nvox);
  }

  if (!unocc.empty()) {
    Var u = ad::gather_rows(flat, unocc);
    Var mlp_out = mlp2_.forward(ad::relu(mlp1_.forward(u)));
    Var scat = ad::scatter_rows(mlp_out, unocc, nvox);
    out_flat = out_flat.defined() ? ad::add(out_flat, scat) : scat;
  }

  if (!out_flat.defined()) out_flat = ad::constant(Tensor({(int)nvox, channels_}));
  return ad::reshape(out_flat, {nx, ny, nz, channels_});
}

// ---------------- CameraBranch ----------------

CameraBranch::CameraBranch(nn::ParamStore& ps, const Config& cfg, Rng& rng) : cfg_(&cfg) {
  const int ct = cfg.trunk_channels, c = cfg.channels;
  enc1_ = nn::Conv2d(ps, "cam.enc1", 3, ct, 3, 2, 1, rng);
  enc2_ = nn::Conv2d(ps, "cam.enc2", ct, ct, 3, 2, 1, rng);
  enc3_ = nn::Conv2d(ps, "cam.enc3", ct, ct, 3, 1, 1, rng);
  depth_head_ = nn::Conv2d(ps, "cam.depth_head", ct, cfg.depth_bins, 3, 1, 1, rng);
  ctx_head_ = nn::Conv2d(ps, "cam.ctx_head", ct, c, 3, 1, 1, rng);
  evt_ = Evt(ps, "cam.evt", c, cfg.evt_heads, cfg.evt_points, rng);
  refine_ = Refine3d(ps, "cam.refine", c, cfg.refine_blocks, rng);
}

std::tuple<Var, DepthDistribution, Var> CameraBranch::encode_image(const Tensor& image) const {
  if (image.dim() != 3 || image.size(0) != cfg_->image_h || image.size(1) != cfg_->image_w ||
      image.size(2) != 3)
    throw ConfigError("encode_image: image shape does not match configured dims");
  for (int64_t i = 0; i < image.numel(); ++i)
    if (!std::isfinite(image[i])) throw DataError("encode_image: non-finite image value");

  Var x = ad::constant(image);
  Var f2d = ad::relu(enc3_.forward(ad::relu(enc2_.forward(ad::relu(enc1_.forward(x))))));
  DepthDistribution d;
  d.probs = ad::softmax(depth_head_.forward(f2d), 2);
  d.edges = depth_bin_edges(cfg_->depth_min, cfg_->depth_max, cfg_->depth_bins);
  Var ctx = ctx_head_.forward(f2d);
  return {f2d, d, ctx};
}

FrustumFeature CameraBranch::lss_lift(const DepthDistribution& d, const Var& ctx,
                                      const CameraModel& feat_cam) const {
  const auto& ds = d.probs.shape();
  const auto& cs = ctx.shape();
  if (ds[0] != cs[0] || ds[1] != cs[1]) throw ConfigError("lss_lift: D/C spatial dims differ");
  const int h = ds[0], w = ds[1], nb = ds[2];

  FrustumFeature f;
  f.feat = ad::outer_lift(d.probs, ctx);
  f.coords = Tensor({h * w * nb, 3});
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u)
      for (int b = 0; b < nb; ++b) {
        const double zc = 0.5 * (d.edges[(size_t)b] + d.edges[(size_t)b + 1]);
        const Vec3 world = feat_cam.cam_to_world(feat_cam.unproject((double)u, (double)v, zc));
        const int64_t i = ((int64_t)v * w + u) * nb + b;
        f.coords[i * 3 + 0] = world[0];
        f.coords[i * 3 + 1] = world[1];
        f.coords[i * 3 + 2] = world[2];
      }
  return f;
}

Var CameraBranch::splat(const FrustumFeature& f, const GridSpec& grid) const {
  const auto& sh = f.feat.shape();
  const int64_t p = (int64_t)sh[0] * sh[1] * sh[2];
  const int c = sh[3];
  std::vector<Vec3> pts((size_t)p);
  for (int64_t i = 0; i < p; ++i)
    pts[(size_t)i] = {f.coords[i * 3 + 0], f.coords[i * 3 + 1], f.coords[i * 3 + 2]};
  std::vector<int64_t> ids = point_voxel_ids(pts, grid);
  Var cells = ad::reshape(f.feat, {(int)p, c});
  Var vol = ad::splat_mean(cells, std::move(ids), grid.num_voxels());
  return ad::reshape(vol, {grid.dims[0], grid.dims[1], grid.dims[2], c});
}

CameraBranch::Out CameraBranch::forward(const Tensor& image, const OccupancyMask& mask,
                                        const CameraModel& cam, const GridSpec& grid) {
  Out o;
  auto [f2d, d, ctx] = encode_image(image);
  o.f2d = f2d;
  o.depth = d;
  o.context = ctx;
  FrustumFeature fr = lss_lift(d, ctx, cam.scaled(cfg_->image_stride));
  o.f_lss = splat(fr, grid);
  o.f_evt = evt_.forward(o.f_lss, mask);
  o.f3d = refine_.forward(o.f_evt);
  return o;
}

}  // namespace tpvocc
