#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "tpvocc/config.hpp"
#include "tpvocc/geometry.hpp"
#include "tpvocc/tensor.hpp"

namespace tpvocc::data {

// Semantic classes of the synthetic scenes. 255 stays the invalid sentinel.
enum Class : uint8_t {
  kEmpty = 0,
  kRoad = 1,
  kSidewalk = 2,
  kCar = 3,
  kBuilding = 4,
  kVegetation = 5,
  kPole = 6,
  kOther = 7,
};
inline constexpr uint8_t kInvalid = 255;

const std::vector<std::string>& class_names();
const std::vector<std::array<double, 3>>& class_palette();

struct Scene {
  GridSpec grid;
  CameraModel camera;
  Vec3 lidar_pos{0, 0, 0};
  std::vector<uint8_t> labels;  // X*Y*Z, linear id x*(Y*Z)+y*Z+z
  uint64_t seed = 0;

  uint8_t label_at(int x, int y, int z) const {
    return labels[(size_t)grid.linear_index(x, y, z)];
  }
};

// A scene plus its rendered sensor inputs.
struct SceneSample {
  Scene scene;
  Tensor image;   // [H,W,3]
  Tensor depth;   // [H,W], camera-z of first hit, 0 = no hit (input depth, noisy)
  Tensor points;  // [N,3] world-frame LiDAR returns
};

// First solid voxel (label not in {0,255}) along a ray. Returns the voxel and
// the ray parameter at which the ray enters it.
struct RayHit {
  std::array<int, 3> voxel;
  double t_entry;
};
std::optional<RayHit> ray_first_hit(const Scene& s, const Vec3& origin, const Vec3& dir,
                                    double t_max);

Scene generate_scene(uint64_t seed, const Config& cfg);

// Clean z-depth render of the labels (no noise); used for ground-truth masks.
Tensor render_depth(const Scene& s);

// Per-pixel ray march: class-colored image plus z-depth, both with Gaussian
// noise of the given stddevs (depth noise only on valid pixels).
std::pair<Tensor, Tensor> render_camera(const Scene& s, double image_noise_std,
                                        double depth_noise_std, Rng& rng);

// Spherical ray fan from the LiDAR pose; one point per hit (hit voxel center).
Tensor simulate_lidar(const Scene& s, int n_azimuth, int n_elevation, const Config& cfg);

// Deterministic scene + renders for one seed.
SceneSample make_scene_sample(uint64_t seed, const Config& cfg);

// Scene directory format: meta.json, labels.u8, points.f32, depth.f32, image.f32.
void save_scene(const SceneSample& sample, const std::string& dir);
SceneSample load_scene(const std::string& dir);

// Writes cfg.scenes scene directories under root plus a dataset.json index.
void generate_dataset(const Config& cfg, const std::string& root);
std::string scene_dir(const std::string& root, int index);
int dataset_scene_count(const std::string& root);

// SemanticKITTI voxel label reader (16-bit little-endian ids at 256x256x32),
// remapped to train ids with the dataset's published learning map. Read-only.
std::vector<uint8_t> read_semantickitti_labels(const std::string& path);

std::vector<Vec3> tensor_to_points(const Tensor& pts);

}  // namespace tpvocc::data
