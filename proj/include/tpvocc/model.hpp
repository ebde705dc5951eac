#pragma once

#include <memory>

#include "tpvocc/camera_branch.hpp"
#include "tpvocc/config.hpp"
#include "tpvocc/data.hpp"
#include "tpvocc/lidar_branch.hpp"
#include "tpvocc/nn.hpp"
#include "tpvocc/tpv_net.hpp"

namespace tpvocc {

enum class Role { kTeacherLidar, kStudentCamera };

inline const char* role_name(Role r) {
  return r == Role::kTeacherLidar ? "teacher-lidar" : "student-camera";
}

struct ModelOutputs {
  // Camera-only products (undefined Vars for the LiDAR branch).
  ad::Var f2d;
  DepthDistribution depth;
  ad::Var context;
  ad::Var f_lss;
  OccupancyMask mask;

  // Shared products.
  ad::Var pre_refine;  // EVT output (camera) or densified volume (LiDAR)
  ad::Var f3d;
  TpvNetOut tpv;

  std::vector<uint8_t> predicted_labels() const;
};

class SscModel {
 public:
  SscModel(Role role, const Config& cfg);

  ModelOutputs forward(const data::SceneSample& sample);

  Role role() const { return role_; }
  const Config& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  void freeze() { params_.freeze(); }

  CameraBranch* camera() { return cam_.get(); }
  LidarBranch* lidar() { return lid_.get(); }
  TpvNet& tpv() { return *tpv_; }

  // Occupancy mask for the EVT gate, built by back-projecting the input depth
  // map (or a clean re-render when cfg.evt_mask_from_gt_depth is set).
  OccupancyMask build_mask(const data::SceneSample& sample) const;

 private:
  Role role_;
  Config cfg_;
  nn::ParamStore params_;
  std::unique_ptr<CameraBranch> cam_;
  std::unique_ptr<LidarBranch> lid_;
  std::unique_ptr<TpvNet> tpv_;
};

}  // namespace tpvocc
