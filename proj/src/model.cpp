#include "tpvocc/model.hpp"

namespace tpvocc {

std::vector<uint8_t> ModelOutputs::predicted_labels() const {
  const Tensor& p = tpv.probs.val();
  const auto& sh = p.shape();
  const int nc = sh.back();
  const int64_t v = p.numel() / nc;
  std::vector<uint8_t> labels((size_t)v);
  for (int64_t i = 0; i < v; ++i) {
    int best = 0;
    double bv = p[i * nc];
    for (int c = 1; c < nc; ++c)
      if (p[i * nc + c] > bv) {
        bv = p[i * nc + c];
        best = c;
      }
    labels[(size_t)i] = (uint8_t)best;
  }
  return labels;
}

SscModel::SscModel(Role role, const Config& cfg) : role_(role), cfg_(cfg) {
  cfg_.validate();
  // One init stream per role so teacher and student draws are independent of
  // each other but fixed by the config seed.
  Rng rng(mix_seed(cfg.seed, role == Role::kTeacherLidar ? 0x7eac4e8ull : 0x57d3ull));
  if (role == Role::kTeacherLidar) {
    lid_ = std::make_unique<LidarBranch>(params_, cfg_, rng);
  } else {
    cam_ = std::make_unique<CameraBranch>(params_, cfg_, rng);
  }
  tpv_ = std::make_unique<TpvNet>(params_, cfg_, rng);
}

OccupancyMask SscModel::build_mask(const data::SceneSample& sample) const {
  const Tensor depth =
      cfg_.evt_mask_from_gt_depth ? data::render_depth(sample.scene) : sample.depth;
  const auto points = backproject_depth(depth, sample.scene.camera);
  return voxelize(points, sample.scene.grid);
}

ModelOutputs SscModel::forward(const data::SceneSample& sample) {
  const GridSpec& grid = sample.scene.grid;
  ModelOutputs out;
  if (role_ == Role::kTeacherLidar) {
    auto lo = lid_->forward(sample.points, grid);
    out.pre_refine = lo.densified;
    out.f3d = lo.f3d;
  } else {
    out.mask = build_mask(sample);
    auto co = cam_->forward(sample.image, out.mask, sample.scene.camera, grid);
    out.f2d = co.f2d;
    out.depth = co.depth;
    out.context = co.context;
    out.f_lss = co.f_lss;
    out.pre_refine = co.f_evt;
    out.f3d = co.f3d;
  }
  out.tpv = tpv_->forward(out.f3d, grid);
  return out;
}

}  // namespace tpvocc
