#include "tpvocc/geometry.hpp"

#include <cmath>
#include <string>

namespace tpvocc {

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("CameraModel: focal lengths must be positive");
  if (height <= 0 || width <= 0) throw ConfigError("CameraModel: image dims must be positive");
  // R^T R = I within 1e-6.
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += rot[3 * k + i] * rot[3 * k + j];
      const double expect = (i == j) ? 1.0 : 0.0;
      if (std::fabs(dot - expect) > 1e-6)
        throw ConfigError("CameraModel: extrinsic rotation is not orthonormal");
    }
}

Vec3 CameraModel::pixel_ray(double u, double v) const {
  Vec3 d{(u - cx) / fx, (v - cy) / fy, 1.0};
  const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  d = (1.0 / n) * d;
  return {rot[0] * d[0] + rot[1] * d[1] + rot[2] * d[2],
          rot[3] * d[0] + rot[4] * d[1] + rot[5] * d[2],
          rot[6] * d[0] + rot[7] * d[1] + rot[8] * d[2]};
}

CameraModel CameraModel::looking_along_x(double fx, double fy, double cx, double cy, int h, int w,
                                         const Vec3& position) {
  CameraModel c;
  c.fx = fx;
  c.fy = fy;
  c.cx = cx;
  c.cy = cy;
  c.height = h;
  c.width = w;
  c.pos = position;
  // Camera axes in world coordinates: +z(cam, forward) -> +x(world),
  // +x(cam, right) -> -y(world), +y(cam, down) -> -z(world).
  // Columns of `rot` are the camera axes expressed in the world frame.
  c.rot = {0, 0, 1,   // world x row
           -1, 0, 0,  // world y row
           0, -1, 0}; // world z row
  return c;
}

std::vector<Vec3> backproject_depth(const Tensor& depth, const CameraModel& cam) {
  if (depth.dim() != 2 || depth.size(0) != cam.height || depth.size(1) != cam.width)
    throw ConfigError("backproject_depth: depth map does not match camera dims");
  std::vector<Vec3> points;
  points.reserve((size_t)depth.numel());
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u) {
      const double z = depth.at(v, u);
      if (!std::isfinite(z))
        throw DataError("backproject_depth: non-finite depth at pixel (u=" + std::to_string(u) +
                        ", v=" + std::to_string(v) + ")");
      if (z < 0.0)
        throw DataError("backproject_depth: negative depth at pixel (u=" + std::to_string(u) +
                        ", v=" + std::to_string(v) + ")");
      if (z == 0.0) continue;  // sentinel: no depth
      points.push_back(cam.cam_to_world(cam.unproject((double)u, (double)v, z)));
    }
  return points;
}

std::optional<std::array<int, 3>> voxel_index(const Vec3& p, const GridSpec& grid) {
  std::array<int, 3> idx;
  for (int a = 0; a < 3; ++a) {
    const double t = (p[a] - grid.origin[a]) / grid.voxel_size;
    const double f = std::floor(t);
    if (f < 0.0 || f >= (double)grid.dims[a]) return std::nullopt;
    idx[a] = (int)f;
  }
  return idx;
}

std::vector<int64_t> point_voxel_ids(const std::vector<Vec3>& points, const GridSpec& grid) {
  grid.validate();
  std::vector<int64_t> ids(points.size(), -1);
  for (size_t i = 0; i < points.size(); ++i) {
    const Vec3& p = points[i];
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
      throw DataError("voxelize: non-finite coordinate in point " + std::to_string(i));
    if (auto idx = voxel_index(p, grid))
      ids[i] = grid.linear_index((*idx)[0], (*idx)[1], (*idx)[2]);
  }
  return ids;
}

OccupancyMask voxelize(const std::vector<Vec3>& points, const GridSpec& grid) {
  OccupancyMask m;
  m.grid = grid;
  m.mask.assign((size_t)grid.num_voxels(), 0);
  for (int64_t id : point_voxel_ids(points, grid))
    if (id >= 0) m.mask[(size_t)id] = 1;
  return m;
}

}  // namespace tpvocc
