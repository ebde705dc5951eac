#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "tpvocc/common.hpp"

namespace tpvocc {

// Procedural scene generation knobs. Object sizes are in voxels.
struct SceneParams {
  int cars_min = 1, cars_max = 3;
  std::array<int, 3> car_size_min{3, 2, 1}, car_size_max{5, 3, 2};
  int buildings_min = 1, buildings_max = 2;
  std::array<int, 2> building_footprint{3, 6};  // min/max per axis
  std::array<int, 2> building_height{4, 7};
  int poles_min = 1, poles_max = 3;
  std::array<int, 2> pole_height{4, 7};
  int veg_min = 1, veg_max = 4;
  std::array<int, 2> veg_radius{1, 2};
  int sidewalk_width = 3;
  bool occlusion_shadow = true;
};

enum class PoolMode { kWap, kGmp };

struct Config {
  // grid
  std::array<int, 3> grid_dims{32, 32, 8};
  std::array<double, 3> grid_origin{0.0, -6.4, 0.0};
  double voxel_size = 0.4;
  int num_classes = 8;  // empty, road, sidewalk, car, building, vegetation, pole, other

  // channels
  int channels = 8;         // pipeline-wide feature width C
  int trunk_channels = 16;  // image encoder trunk
  int refine_blocks = 1;    // residual blocks per scale in the 3D refiner
  int depth_bins = 10;
  double depth_min = 0.2, depth_max = 14.0;

  // image + camera
  int image_h = 48, image_w = 64, image_stride = 4;
  double cam_fx = 60.0, cam_fy = 60.0, cam_cx = 32.0, cam_cy = 24.0;
  std::array<double, 3> cam_pos{-0.8, 0.0, 1.6};

  // lidar rig
  std::array<double, 3> lidar_pos{-0.4, 0.0, 2.0};
  int lidar_azimuth_rays = 96, lidar_elevation_rays = 24;
  double lidar_az_min_deg = -90.0, lidar_az_max_deg = 90.0;
  double lidar_el_min_deg = -40.0, lidar_el_max_deg = 2.0;

  // efficient voxel transformer
  int evt_heads = 2, evt_points = 8;
  bool evt_mask_from_gt_depth = false;  // occupancy mask source: noisy input depth by default

  // TPV processing
  PoolMode pool_mode = PoolMode::kWap;
  bool pool_softmax_per_voxel = false;  // paper-literal 3-way per-voxel softmax (ablation)

  // distillation
  bool fsd = true, trd = true, tad = true, pad = true;
  int trd_max_positions = 4096;
  bool kl_reverse = false;  // true -> KL(teacher || student)
  std::array<double, 8> lambdas{3.0, 1.5, 0.5, 0.001, 4.0, 5.0, 10.0, 70.0};

  // optimizer / schedule
  double lr = 2e-4;
  double weight_decay = 1e-2;
  int epochs = 15;
  int batch_size = 4;

  // dataset
  int scenes = 200;
  int train_scenes = 160, val_scenes = 20, test_scenes = 20;
  double image_noise_std = 0.05;
  double depth_noise_std = 0.10;
  std::string data_dir = "data";
  uint64_t seed = 1;

  SceneParams scene;

  void validate() const;
  int feat_h() const { return image_h / image_stride; }
  int feat_w() const { return image_w / image_stride; }
};

Config load_config(const std::string& path);
std::string config_to_json(const Config& cfg);
Config config_from_json_text(const std::string& text);

// FNV-1a over the canonical JSON dump; identifies a run configuration.
std::string config_hash(const Config& cfg);

}  // namespace tpvocc
