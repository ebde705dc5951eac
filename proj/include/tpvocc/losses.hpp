#pragma once

#include <vector>

#include "tpvocc/autodiff.hpp"
#include "tpvocc/camera_branch.hpp"
#include "tpvocc/geometry.hpp"

namespace tpvocc::losses {

// Inverse-log-frequency class weights, 1 / log(1.02 + freq).
std::vector<double> class_weights(const std::vector<int64_t>& class_counts);

// Mean over valid voxels of -w[y] * log p[y]; 255 voxels are excluded.
// probs: [X,Y,Z,Nc] or [V,Nc].
ad::Var weighted_ce(const ad::Var& probs, const std::vector<uint8_t>& labels,
                    const std::vector<double>& weights);

enum class ScalMode { kGeometric, kSemantic };

// Scene-class affinity loss: -mean over present classes of
// log(precision) + log(recall) + log(specificity), soft counts over valid
// voxels. Geometric mode runs the same loss on {empty, occupied}.
ad::Var scal(const ad::Var& probs, const std::vector<uint8_t>& labels, ScalMode mode);

// Per-pixel cross-entropy of the depth distribution against the ground-truth
// depth bin; pixels with sentinel 0 (no LiDAR coverage) are excluded.
ad::Var depth_loss(const DepthDistribution& d, const Tensor& gt_depth);

// LiDAR points projected into the feature-resolution camera; per pixel the
// nearest depth, 0 where nothing projects.
Tensor project_lidar_depth(const Tensor& points, const CameraModel& feat_cam);

}  // namespace tpvocc::losses
