#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "tpvocc/common.hpp"
#include "tpvocc/tensor.hpp"

namespace tpvocc {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }

// The 3D scene lattice. Linear voxel id = x*(Y*Z) + y*Z + z (row-major),
// which is also the byte order of the on-disk label grid.
struct GridSpec {
  std::array<int, 3> dims{32, 32, 8};
  Vec3 origin{0.0, 0.0, 0.0};
  double voxel_size = 0.4;

  void validate() const {
    if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
      throw ConfigError("GridSpec: dims must be positive");
    if (!(voxel_size > 0.0)) throw ConfigError("GridSpec: voxel_size must be positive");
  }
  int64_t num_voxels() const { return (int64_t)dims[0] * dims[1] * dims[2]; }
  int64_t linear_index(int x, int y, int z) const {
    return ((int64_t)x * dims[1] + y) * dims[2] + z;
  }
  Vec3 extent() const {
    return {dims[0] * voxel_size, dims[1] * voxel_size, dims[2] * voxel_size};
  }
  Vec3 voxel_center(int x, int y, int z) const {
    return {origin[0] + (x + 0.5) * voxel_size, origin[1] + (y + 0.5) * voxel_size,
            origin[2] + (z + 0.5) * voxel_size};
  }
};

// Pinhole camera. Camera frame: +z forward, +x right (image u), +y down
// (image v). `rot` maps camera coordinates into world coordinates, `pos` is
// the camera center in the world frame.
struct CameraModel {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  int height = 0, width = 0;
  std::array<double, 9> rot{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major cam->world
  Vec3 pos{0, 0, 0};

  void validate() const;

  Vec3 cam_to_world(const Vec3& p) const {
    return {rot[0] * p[0] + rot[1] * p[1] + rot[2] * p[2] + pos[0],
            rot[3] * p[0] + rot[4] * p[1] + rot[5] * p[2] + pos[1],
            rot[6] * p[0] + rot[7] * p[1] + rot[8] * p[2] + pos[2]};
  }
  Vec3 world_to_cam(const Vec3& p) const {
    const Vec3 d = p - pos;
    return {rot[0] * d[0] + rot[3] * d[1] + rot[6] * d[2],
            rot[1] * d[0] + rot[4] * d[1] + rot[7] * d[2],
            rot[2] * d[0] + rot[5] * d[1] + rot[8] * d[2]};
  }
  // Pixel (u, v) at depth z -> camera-frame point.
  Vec3 unproject(double u, double v, double z) const {
    return {(u - cx) * z / fx, (v - cy) * z / fy, z};
  }
  // World point -> (u, v, depth). Depth <= 0 means behind the camera.
  std::array<double, 3> project(const Vec3& world) const {
    const Vec3 pc = world_to_cam(world);
    if (pc[2] <= 0.0) return {0.0, 0.0, pc[2]};
    return {fx * pc[0] / pc[2] + cx, fy * pc[1] / pc[2] + cy, pc[2]};
  }
  // World-frame unit direction of the ray through pixel (u, v).
  Vec3 pixel_ray(double u, double v) const;
  // Intrinsics rescaled to a feature map downsampled by `stride`.
  CameraModel scaled(int stride) const {
    CameraModel c = *this;
    c.fx /= stride;
    c.fy /= stride;
    c.cx /= stride;
    c.cy /= stride;
    c.height = height / stride;
    c.width = width / stride;
    return c;
  }
  // Camera looking along world +x, up = world +z (forward-facing rig).
  static CameraModel looking_along_x(double fx, double fy, double cx, double cy, int h, int w,
                                     const Vec3& position);
};

struct OccupancyMask {
  GridSpec grid;
  std::vector<uint8_t> mask;  // X*Y*Z entries in {0,1}

  int64_t popcount() const {
    int64_t n = 0;
    for (uint8_t m : mask) n += m;
    return n;
  }
};

// Pinhole inverse projection of a depth map (0 = invalid sentinel) into the
// world frame; one point per valid pixel.
std::vector<Vec3> backproject_depth(const Tensor& depth, const CameraModel& cam);

// floor((p - origin) / voxel_size); points exactly on the upper extent fall
// outside (half-open voxel intervals).
std::optional<std::array<int, 3>> voxel_index(const Vec3& p, const GridSpec& grid);

// Linear voxel ids for a batch of points; -1 marks out-of-bounds points.
// Throws DataError on non-finite coordinates.
std::vector<int64_t> point_voxel_ids(const std::vector<Vec3>& points, const GridSpec& grid);

OccupancyMask voxelize(const std::vector<Vec3>& points, const GridSpec& grid);

}  // namespace tpvocc
