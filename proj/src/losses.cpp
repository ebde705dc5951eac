#include "tpvocc/losses.hpp"

#include <cmath>

#include "tpvocc/data.hpp"

namespace tpvocc::losses {

using ad::Var;

std::vector<double> class_weights(const std::vector<int64_t>& class_counts) {
  int64_t total = 0;
  for (int64_t c : class_counts) total += c;
  if (total == 0) throw DataError("class_weights: no labeled voxels");
  std::vector<double> w(class_counts.size());
  for (size_t i = 0; i < class_counts.size(); ++i) {
    const double freq = (double)class_counts[i] / (double)total;
    w[i] = 1.0 / std::log(1.02 + freq);
  }
  return w;
}

namespace {
std::pair<Var, std::vector<int>> flatten_probs(const ad::Var& probs,
                                               const std::vector<uint8_t>& labels) {
  const auto& sh = probs.shape();
  const int nc = sh.back();
  int64_t v = 1;
  for (size_t i = 0; i + 1 < sh.size(); ++i) v *= sh[i];
  if ((int64_t)labels.size() != v)
    throw ConfigError("loss: label count does not match probability grid");
  Var flat = probs.shape().size() == 2 ? probs : ad::reshape(probs, {(int)v, nc});
  std::vector<int> l(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) l[i] = labels[i];
  return {flat, std::move(l)};
}
}  // namespace

Var weighted_ce(const ad::Var& probs, const std::vector<uint8_t>& labels,
                const std::vector<double>& weights) {
  auto [flat, l] = flatten_probs(probs, labels);
  return ad::weighted_ce(flat, l, weights);
}

Var scal(const ad::Var& probs, const std::vector<uint8_t>& labels, ScalMode mode) {
  auto [flat, l] = flatten_probs(probs, labels);
  if (mode == ScalMode::kSemantic) return ad::scal_loss_op(flat, l);

  // Geometric: collapse to {empty, occupied} and run the semantic form.
  const int nc = flat.shape()[1];
  Var p_empty = ad::select_last(flat, 0);
  Var p_occ = ad::sum_last_range(flat, 1, nc);
  Var binary = ad::stack_last({p_empty, p_occ});
  std::vector<int> bl(l.size());
  for (size_t i = 0; i < l.size(); ++i) bl[i] = l[i] == 255 ? 255 : (l[i] > 0 ? 1 : 0);
  return ad::scal_loss_op(binary, bl);
}

Var depth_loss(const DepthDistribution& d, const Tensor& gt_depth) {
  const auto& sh = d.probs.shape();
  if (gt_depth.dim() != 2 || gt_depth.size(0) != sh[0] || gt_depth.size(1) != sh[1])
    throw ConfigError("depth_loss: ground-truth depth does not match distribution dims");
  const int bins = sh[2];
  const double z0 = d.edges.front(), z1 = d.edges.back();

  std::vector<int> labels((size_t)gt_depth.numel(), 255);
  int64_t covered = 0;
  for (int64_t i = 0; i < gt_depth.numel(); ++i) {
    const double z = gt_depth[i];
    if (z <= 0.0) continue;  // sentinel: no LiDAR coverage
    int b = (int)std::floor((z - z0) / (z1 - z0) * bins);
    labels[(size_t)i] = std::clamp(b, 0, bins - 1);
    ++covered;
  }
  if (covered == 0) throw DataError("depth_loss: no pixels with LiDAR coverage");

  Var flat = ad::reshape(d.probs, {sh[0] * sh[1], bins});
  return ad::weighted_ce(flat, labels, std::vector<double>((size_t)bins, 1.0));
}

Tensor project_lidar_depth(const Tensor& points, const CameraModel& feat_cam) {
  Tensor depth({feat_cam.height, feat_cam.width});
  for (const Vec3& p : data::tensor_to_points(points)) {
    const auto uvz = feat_cam.project(p);
    if (uvz[2] <= 0.0) continue;
    const int u = (int)std::lround(uvz[0]);
    const int v = (int)std::lround(uvz[1]);
    if (u < 0 || u >= feat_cam.width || v < 0 || v >= feat_cam.height) continue;
    double& cell = depth.at(v, u);
    if (cell == 0.0 || uvz[2] < cell) cell = uvz[2];
  }
  return depth;
}

}  // namespace tpvocc::losses
