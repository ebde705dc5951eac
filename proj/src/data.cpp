#include "tpvocc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

namespace tpvocc::data {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names = {"empty",    "road",       "sidewalk", "car",
                                                 "building", "vegetation", "pole",     "other"};
  return names;
}

const std::vector<std::array<double, 3>>& class_palette() {
  static const std::vector<std::array<double, 3>> palette = {
      {0.05, 0.05, 0.08},  // empty / sky
      {0.50, 0.30, 0.60},  // road
      {0.85, 0.60, 0.90},  // sidewalk
      {0.15, 0.35, 0.95},  // car
      {0.95, 0.85, 0.25},  // building
      {0.20, 0.75, 0.25},  // vegetation
      {0.60, 0.60, 0.60},  // pole
      {0.90, 0.25, 0.20},  // other
  };
  return palette;
}

// ---------------- ray marching ----------------

std::optional<RayHit> ray_first_hit(const Scene& s, const Vec3& origin, const Vec3& dir,
                                    double t_max) {
  const GridSpec& g = s.grid;
  const Vec3 lo = g.origin;
  const Vec3 hi = {g.origin[0] + g.dims[0] * g.voxel_size, g.origin[1] + g.dims[1] * g.voxel_size,
                   g.origin[2] + g.dims[2] * g.voxel_size};

  // Slab intersection with the grid AABB.
  double t0 = 0.0, t1 = t_max;
  for (int a = 0; a < 3; ++a) {
    if (std::fabs(dir[a]) < 1e-12) {
      if (origin[a] < lo[a] || origin[a] >= hi[a]) return std::nullopt;
      continue;
    }
    double ta = (lo[a] - origin[a]) / dir[a];
    double tb = (hi[a] - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1) return std::nullopt;

  // Start voxel at entry (nudged inside to dodge exact-boundary floor).
  const double eps = 1e-9 * std::max(1.0, t0);
  Vec3 p = origin + (t0 + eps) * dir;
  std::array<int, 3> v;
  for (int a = 0; a < 3; ++a) {
    v[a] = (int)std::floor((p[a] - lo[a]) / g.voxel_size);
    v[a] = std::clamp(v[a], 0, g.dims[a] - 1);
  }

  std::array<int, 3> step;
  Vec3 t_next, t_delta;
  for (int a = 0; a < 3; ++a) {
    if (dir[a] > 0) {
      step[a] = 1;
      t_next[a] = ((v[a] + 1) * g.voxel_size + lo[a] - origin[a]) / dir[a];
      t_delta[a] = g.voxel_size / dir[a];
    } else if (dir[a] < 0) {
      step[a] = -1;
      t_next[a] = (v[a] * g.voxel_size + lo[a] - origin[a]) / dir[a];
      t_delta[a] = -g.voxel_size / dir[a];
    } else {
      step[a] = 0;
      t_next[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    }
  }

  double t_enter = t0;
  while (t_enter <= t1) {
    const uint8_t label = s.label_at(v[0], v[1], v[2]);
    if (label != kEmpty && label != kInvalid) return RayHit{v, t_enter};
    int axis = 0;
    if (t_next[1] < t_next[axis]) axis = 1;
    if (t_next[2] < t_next[axis]) axis = 2;
    t_enter = t_next[axis];
    t_next[axis] += t_delta[axis];
    v[axis] += step[axis];
    if (v[axis] < 0 || v[axis] >= g.dims[axis]) return std::nullopt;
  }
  return std::nullopt;
}

// ---------------- generation ----------------

namespace {

void fill_box(Scene& s, int x0, int y0, int z0, int sx, int sy, int sz, uint8_t cls) {
  for (int x = x0; x < x0 + sx; ++x)
    for (int y = y0; y < y0 + sy; ++y)
      for (int z = z0; z < z0 + sz; ++z)
        s.labels[(size_t)s.grid.linear_index(x, y, z)] = cls;
}

void check_feasible(const Config& cfg) {
  const auto& d = cfg.grid_dims;
  const SceneParams& p = cfg.scene;
  auto fail = [](const std::string& what) {
    throw ConfigError("generate_scene: infeasible params: " + what);
  };
  for (int a = 0; a < 3; ++a)
    if (p.car_size_max[a] > d[a] - (a == 2 ? 1 : 0)) fail("car larger than grid");
  if (p.building_footprint[1] > d[0] || p.building_footprint[1] > d[1])
    fail("building footprint larger than grid");
  if (p.building_height[1] > d[2] - 1) fail("building taller than grid");
  if (p.pole_height[1] > d[2] - 1) fail("pole taller than grid");
  if (2 * p.sidewalk_width >= d[1]) fail("sidewalks cover the whole road");
  if (p.veg_radius[1] * 2 + 1 > std::min(d[0], d[1])) fail("vegetation blob larger than grid");
  if (p.cars_min > p.cars_max || p.buildings_min > p.buildings_max || p.poles_min > p.poles_max ||
      p.veg_min > p.veg_max)
    fail("min count above max count");
}

}  // namespace

Scene generate_scene(uint64_t seed, const Config& cfg) {
  cfg.validate();
  check_feasible(cfg);
  const SceneParams& prm = cfg.scene;

  Scene s;
  s.seed = seed;
  s.grid.dims = cfg.grid_dims;
  s.grid.origin = {cfg.grid_origin[0], cfg.grid_origin[1], cfg.grid_origin[2]};
  s.grid.voxel_size = cfg.voxel_size;
  s.grid.validate();
  s.camera = CameraModel::looking_along_x(cfg.cam_fx, cfg.cam_fy, cfg.cam_cx, cfg.cam_cy,
                                          cfg.image_h, cfg.image_w,
                                          {cfg.cam_pos[0], cfg.cam_pos[1], cfg.cam_pos[2]});
  s.camera.validate();
  s.lidar_pos = {cfg.lidar_pos[0], cfg.lidar_pos[1], cfg.lidar_pos[2]};
  s.labels.assign((size_t)s.grid.num_voxels(), kEmpty);

  const int X = cfg.grid_dims[0], Y = cfg.grid_dims[1], Z = cfg.grid_dims[2];
  Rng rng(mix_seed(seed, 0x5ce17e));

  // Ground layer: road with sidewalk strips along both y edges.
  for (int x = 0; x < X; ++x)
    for (int y = 0; y < Y; ++y) {
      const bool side = y < prm.sidewalk_width || y >= Y - prm.sidewalk_width;
      s.labels[(size_t)s.grid.linear_index(x, y, 0)] = side ? kSidewalk : kRoad;
    }

  // Cars on the road strip.
  const int n_cars = rng.uniform_int(prm.cars_min, prm.cars_max);
  for (int i = 0; i < n_cars; ++i) {
    const int sx = rng.uniform_int(prm.car_size_min[0], prm.car_size_max[0]);
    const int sy = rng.uniform_int(prm.car_size_min[1], prm.car_size_max[1]);
    const int sz = rng.uniform_int(prm.car_size_min[2], prm.car_size_max[2]);
    const int ylo = prm.sidewalk_width;
    const int yhi = Y - prm.sidewalk_width - sy;
    const int x0 = rng.uniform_int(0, X - sx);
    const int y0 = yhi >= ylo ? rng.uniform_int(ylo, yhi) : rng.uniform_int(0, Y - sy);
    fill_box(s, x0, y0, 1, sx, sy, sz, kCar);
  }

  // Buildings near the y edges (tall slabs).
  const int n_build = rng.uniform_int(prm.buildings_min, prm.buildings_max);
  for (int i = 0; i < n_build; ++i) {
    const int fx = rng.uniform_int(prm.building_footprint[0], prm.building_footprint[1]);
    const int fy = rng.uniform_int(prm.building_footprint[0], prm.building_footprint[1]);
    const int h = rng.uniform_int(prm.building_height[0],
                                  std::min(prm.building_height[1], Z - 1));
    const int x0 = rng.uniform_int(0, X - fx);
    const bool north = rng.uniform_int(0, 1) == 1;
    const int y0 = north ? std::max(0, Y - fy) : 0;
    fill_box(s, x0, y0, 1, fx, fy, h, kBuilding);
  }

  // Poles.
  const int n_poles = rng.uniform_int(prm.poles_min, prm.poles_max);
  for (int i = 0; i < n_poles; ++i) {
    const int h = rng.uniform_int(prm.pole_height[0], std::min(prm.pole_height[1], Z - 1));
    const int x0 = rng.uniform_int(0, X - 1);
    const int y0 = rng.uniform_int(0, Y - 1);
    fill_box(s, x0, y0, 1, 1, 1, h, kPole);
  }

  // Vegetation blobs (half ellipsoids sitting on the ground).
  const int n_veg = rng.uniform_int(prm.veg_min, prm.veg_max);
  for (int i = 0; i < n_veg; ++i) {
    const int r = rng.uniform_int(prm.veg_radius[0], prm.veg_radius[1]);
    const int cxv = rng.uniform_int(r, X - 1 - r);
    const int cyv = rng.uniform_int(r, Y - 1 - r);
    const int h = std::min(2 * r + 1, Z - 1);
    for (int x = cxv - r; x <= cxv + r; ++x)
      for (int y = cyv - r; y <= cyv + r; ++y)
        for (int z = 1; z <= h; ++z) {
          const double dx = (x - cxv) / (double)(r + 0.5);
          const double dy = (y - cyv) / (double)(r + 0.5);
          const double dz = (z - 1) / (double)h;
          if (dx * dx + dy * dy + dz * dz <= 1.0)
            s.labels[(size_t)s.grid.linear_index(x, y, z)] = kVegetation;
        }
  }

  // Occlusion shadow: empty voxels whose center is hidden from the camera by
  // solid geometry become the invalid sentinel (unobserved free space).
  if (prm.occlusion_shadow) {
    std::vector<uint8_t> shadow((size_t)s.grid.num_voxels(), 0);
    for (int x = 0; x < X; ++x)
      for (int y = 0; y < Y; ++y)
        for (int z = 0; z < Z; ++z) {
          if (s.label_at(x, y, z) != kEmpty) continue;
          const Vec3 c = s.grid.voxel_center(x, y, z);
          const Vec3 d = c - s.camera.pos;
          const double dist = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
          const Vec3 dir = (1.0 / dist) * d;
          const auto hit = ray_first_hit(s, s.camera.pos, dir, dist - 0.5 * s.grid.voxel_size);
          if (hit) shadow[(size_t)s.grid.linear_index(x, y, z)] = 1;
        }
    for (size_t i = 0; i < shadow.size(); ++i)
      if (shadow[i]) s.labels[i] = kInvalid;
  }

  return s;
}

// ---------------- rendering ----------------

Tensor render_depth(const Scene& s) {
  const CameraModel& cam = s.camera;
  Tensor depth({cam.height, cam.width});
  const double t_max = 1e9;
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u) {
      const Vec3 dir = cam.pixel_ray((double)u, (double)v);
      const auto hit = ray_first_hit(s, cam.pos, dir, t_max);
      if (!hit) continue;
      // Store camera-z of the entry point so unproject() reconstructs it.
      const Vec3 entry = cam.pos + hit->t_entry * dir;
      depth.at(v, u) = cam.world_to_cam(entry)[2];
    }
  return depth;
}

std::pair<Tensor, Tensor> render_camera(const Scene& s, double image_noise_std,
                                        double depth_noise_std, Rng& rng) {
  const CameraModel& cam = s.camera;
  Tensor image({cam.height, cam.width, 3});
  Tensor depth({cam.height, cam.width});
  const auto& palette = class_palette();
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u) {
      const Vec3 dir = cam.pixel_ray((double)u, (double)v);
      const auto hit = ray_first_hit(s, cam.pos, dir, 1e9);
      uint8_t cls = kEmpty;
      if (hit) {
        cls = s.label_at(hit->voxel[0], hit->voxel[1], hit->voxel[2]);
        const Vec3 entry = cam.pos + hit->t_entry * dir;
        double z = cam.world_to_cam(entry)[2];
        if (depth_noise_std > 0.0) z = std::max(1e-3, z + rng.normal(0.0, depth_noise_std));
        depth.at(v, u) = z;
      }
      for (int c = 0; c < 3; ++c) {
        double val = palette[cls][c];
        if (image_noise_std > 0.0) val += rng.normal(0.0, image_noise_std);
        image.at(v, u, c) = val;
      }
    }
  return {std::move(image), std::move(depth)};
}

Tensor simulate_lidar(const Scene& s, int n_azimuth, int n_elevation, const Config& cfg) {
  if (n_azimuth <= 0 || n_elevation <= 0)
    throw ConfigError("simulate_lidar: ray counts must be positive");
  const double deg = M_PI / 180.0;
  const double az0 = cfg.lidar_az_min_deg * deg, az1 = cfg.lidar_az_max_deg * deg;
  const double el0 = cfg.lidar_el_min_deg * deg, el1 = cfg.lidar_el_max_deg * deg;
  std::vector<double> pts;
  for (int e = 0; e < n_elevation; ++e) {
    const double el = n_elevation == 1 ? el0 : el0 + (el1 - el0) * e / (double)(n_elevation - 1);
    for (int a = 0; a < n_azimuth; ++a) {
      const double az = az0 + (az1 - az0) * (a + 0.5) / (double)n_azimuth;
      const Vec3 dir = {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
      const auto hit = ray_first_hit(s, s.lidar_pos, dir, 1e9);
      if (!hit) continue;
      const Vec3 c = s.grid.voxel_center(hit->voxel[0], hit->voxel[1], hit->voxel[2]);
      pts.insert(pts.end(), {c[0], c[1], c[2]});
    }
  }
  const int n = (int)(pts.size() / 3);
  return Tensor::from({n, 3}, std::move(pts));
}

namespace {
// Sensor tensors are float32-valued by construction, so the on-disk f32
// format round-trips losslessly.
void quantize_f32(Tensor& t) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = (double)(float)t[i];
}
}  // namespace

SceneSample make_scene_sample(uint64_t seed, const Config& cfg) {
  SceneSample sample;
  sample.scene = generate_scene(seed, cfg);
  Rng noise_rng(mix_seed(seed, 0x401fe));
  auto [image, depth] =
      render_camera(sample.scene, cfg.image_noise_std, cfg.depth_noise_std, noise_rng);
  sample.image = std::move(image);
  sample.depth = std::move(depth);
  sample.points = simulate_lidar(sample.scene, cfg.lidar_azimuth_rays, cfg.lidar_elevation_rays,
                                 cfg);
  quantize_f32(sample.image);
  quantize_f32(sample.depth);
  quantize_f32(sample.points);
  return sample;
}

// ---------------- dataset i/o ----------------

namespace {

void write_f32(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  std::vector<float> buf((size_t)t.numel());
  for (int64_t i = 0; i < t.numel(); ++i) buf[(size_t)i] = (float)t[i];
  out.write(reinterpret_cast<const char*>(buf.data()), (std::streamsize)(buf.size() * 4));
}

std::vector<float> read_f32(const std::string& path, int64_t expected, const char* field) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(std::string("missing file '") + path + "' (" + field + ")");
  in.seekg(0, std::ios::end);
  const int64_t bytes = (int64_t)in.tellg();
  in.seekg(0);
  if (expected >= 0 && bytes != expected * 4)
    throw DataError(std::string(field) + ": expected " + std::to_string(expected * 4) +
                    " bytes in '" + path + "', got " + std::to_string(bytes));
  if (bytes % 4 != 0)
    throw DataError(std::string(field) + ": truncated float payload in '" + path + "'");
  std::vector<float> buf((size_t)(bytes / 4));
  in.read(reinterpret_cast<char*>(buf.data()), bytes);
  if (!in) throw DataError(std::string(field) + ": short read from '" + path + "'");
  return buf;
}

Tensor f32_to_tensor(const std::vector<float>& buf, std::vector<int> shape) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = (double)buf[(size_t)i];
  return t;
}

}  // namespace

void save_scene(const SceneSample& sample, const std::string& dir) {
  fs::create_directories(dir);
  const Scene& s = sample.scene;

  json meta;
  meta["grid"] = {{"dims", {s.grid.dims[0], s.grid.dims[1], s.grid.dims[2]}},
                  {"origin", {s.grid.origin[0], s.grid.origin[1], s.grid.origin[2]}},
                  {"voxel_size", s.grid.voxel_size}};
  meta["camera"] = {{"fx", s.camera.fx},     {"fy", s.camera.fy}, {"cx", s.camera.cx},
                    {"cy", s.camera.cy},     {"h", s.camera.height},
                    {"w", s.camera.width},   {"pos", {s.camera.pos[0], s.camera.pos[1], s.camera.pos[2]}},
                    {"rot", std::vector<double>(s.camera.rot.begin(), s.camera.rot.end())}};
  meta["lidar"] = {{"pos", {s.lidar_pos[0], s.lidar_pos[1], s.lidar_pos[2]}}};
  meta["seed"] = s.seed;
  meta["classes"] = class_names();
  json palette = json::array();
  for (const auto& c : class_palette()) palette.push_back({c[0], c[1], c[2]});
  meta["palette"] = palette;
  meta["n_points"] = sample.points.size(0);
  {
    std::ofstream out(dir + "/meta.json");
    if (!out) throw DataError("cannot open '" + dir + "/meta.json' for writing");
    out << meta.dump(2) << "\n";
  }
  {
    std::ofstream out(dir + "/labels.u8", std::ios::binary);
    if (!out) throw DataError("cannot open '" + dir + "/labels.u8' for writing");
    out.write(reinterpret_cast<const char*>(s.labels.data()), (std::streamsize)s.labels.size());
  }
  write_f32(dir + "/points.f32", sample.points);
  write_f32(dir + "/depth.f32", sample.depth);
  write_f32(dir + "/image.f32", sample.image);
}

SceneSample load_scene(const std::string& dir) {
  std::ifstream meta_in(dir + "/meta.json");
  if (!meta_in) throw DataError("missing file '" + dir + "/meta.json'");
  json meta;
  try {
    meta_in >> meta;
  } catch (const json::parse_error& e) {
    throw DataError("meta.json: invalid JSON in '" + dir + "': " + e.what());
  }

  SceneSample sample;
  Scene& s = sample.scene;
  try {
    const auto& g = meta.at("grid");
    const auto& dims = g.at("dims");
    s.grid.dims = {dims.at(0).get<int>(), dims.at(1).get<int>(), dims.at(2).get<int>()};
    const auto& org = g.at("origin");
    s.grid.origin = {org.at(0).get<double>(), org.at(1).get<double>(), org.at(2).get<double>()};
    s.grid.voxel_size = g.at("voxel_size").get<double>();
    const auto& c = meta.at("camera");
    s.camera.fx = c.at("fx").get<double>();
    s.camera.fy = c.at("fy").get<double>();
    s.camera.cx = c.at("cx").get<double>();
    s.camera.cy = c.at("cy").get<double>();
    s.camera.height = c.at("h").get<int>();
    s.camera.width = c.at("w").get<int>();
    const auto& cp = c.at("pos");
    s.camera.pos = {cp.at(0).get<double>(), cp.at(1).get<double>(), cp.at(2).get<double>()};
    const auto& cr = c.at("rot");
    for (int i = 0; i < 9; ++i) s.camera.rot[(size_t)i] = cr.at((size_t)i).get<double>();
    const auto& lp = meta.at("lidar").at("pos");
    s.lidar_pos = {lp.at(0).get<double>(), lp.at(1).get<double>(), lp.at(2).get<double>()};
    s.seed = meta.value("seed", (uint64_t)0);
  } catch (const json::exception& e) {
    throw DataError("meta.json: missing or malformed field in '" + dir + "': " + e.what());
  }
  s.grid.validate();
  s.camera.validate();

  const int64_t nvox = s.grid.num_voxels();
  {
    std::ifstream in(dir + "/labels.u8", std::ios::binary);
    if (!in) throw DataError("missing file '" + dir + "/labels.u8'");
    in.seekg(0, std::ios::end);
    const int64_t bytes = (int64_t)in.tellg();
    in.seekg(0);
    if (bytes != nvox)
      throw DataError("labels.u8: expected " + std::to_string(nvox) + " bytes in '" + dir +
                      "', got " + std::to_string(bytes));
    s.labels.resize((size_t)nvox);
    in.read(reinterpret_cast<char*>(s.labels.data()), bytes);
    if (!in) throw DataError("labels.u8: short read from '" + dir + "'");
  }

  const int n_points = meta.value("n_points", -1);
  auto pts = read_f32(dir + "/points.f32", n_points >= 0 ? (int64_t)n_points * 3 : -1, "points.f32");
  if (pts.size() % 3 != 0) throw DataError("points.f32: element count not divisible by 3");
  sample.points = f32_to_tensor(pts, {(int)(pts.size() / 3), 3});
  sample.depth = f32_to_tensor(
      read_f32(dir + "/depth.f32", (int64_t)s.camera.height * s.camera.width, "depth.f32"),
      {s.camera.height, s.camera.width});
  sample.image = f32_to_tensor(
      read_f32(dir + "/image.f32", (int64_t)s.camera.height * s.camera.width * 3, "image.f32"),
      {s.camera.height, s.camera.width, 3});
  return sample;
}

std::string scene_dir(const std::string& root, int index) {
  char buf[32];
  snprintf(buf, sizeof(buf), "scene_%05d", index);
  return root + "/" + buf;
}

void generate_dataset(const Config& cfg, const std::string& root) {
  cfg.validate();
  fs::create_directories(root);
  for (int i = 0; i < cfg.scenes; ++i) {
    const SceneSample sample = make_scene_sample(mix_seed(cfg.seed, (uint64_t)i), cfg);
    save_scene(sample, scene_dir(root, i));
  }
  json index;
  index["scenes"] = cfg.scenes;
  index["train"] = cfg.train_scenes;
  index["val"] = cfg.val_scenes;
  index["test"] = cfg.test_scenes;
  index["config_hash"] = config_hash(cfg);
  index["classes"] = class_names();
  std::ofstream out(root + "/dataset.json");
  if (!out) throw DataError("cannot open '" + root + "/dataset.json' for writing");
  out << index.dump(2) << "\n";
}

int dataset_scene_count(const std::string& root) {
  std::ifstream in(root + "/dataset.json");
  if (!in) throw DataError("missing dataset index '" + root + "/dataset.json'");
  json j;
  try {
    in >> j;
    return j.at("scenes").get<int>();
  } catch (const json::exception& e) {
    throw DataError("dataset.json: " + std::string(e.what()));
  }
}

std::vector<uint8_t> read_semantickitti_labels(const std::string& path) {
  static const std::map<uint16_t, uint8_t> learning_map = {
      {0, 0},   {1, 0},   {10, 1},  {11, 2},  {13, 5},  {15, 3},  {16, 5},  {18, 4},  {20, 5},
      {30, 6},  {31, 7},  {32, 8},  {40, 9},  {44, 10}, {48, 11}, {49, 12}, {50, 13}, {51, 14},
      {52, 0},  {60, 9},  {70, 15}, {71, 16}, {72, 17}, {80, 18}, {81, 19}, {99, 0},  {252, 1},
      {253, 7}, {254, 6}, {255, 8}, {256, 5}, {257, 5}, {258, 4}, {259, 5}};
  constexpr int64_t kVoxels = 256LL * 256 * 32;

  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("semantickitti: cannot open '" + path + "'");
  in.seekg(0, std::ios::end);
  const int64_t bytes = (int64_t)in.tellg();
  in.seekg(0);
  if (bytes != kVoxels * 2)
    throw DataError("semantickitti: expected " + std::to_string(kVoxels * 2) + " bytes in '" +
                    path + "', got " + std::to_string(bytes));
  std::vector<uint16_t> raw((size_t)kVoxels);
  in.read(reinterpret_cast<char*>(raw.data()), bytes);
  if (!in) throw DataError("semantickitti: short read from '" + path + "'");

  std::vector<uint8_t> out((size_t)kVoxels, 0);
  for (size_t i = 0; i < raw.size(); ++i) {
    const auto it = learning_map.find(raw[i]);
    out[i] = it == learning_map.end() ? 0 : it->second;
  }
  return out;
}

std::vector<Vec3> tensor_to_points(const Tensor& pts) {
  if (pts.numel() == 0) return {};
  if (pts.dim() != 2 || pts.size(1) != 3) throw ConfigError("points tensor must be [N,3]");
  std::vector<Vec3> out((size_t)pts.size(0));
  for (int i = 0; i < pts.size(0); ++i) out[(size_t)i] = {pts.at(i, 0), pts.at(i, 1), pts.at(i, 2)};
  return out;
}

}  // namespace tpvocc::data
