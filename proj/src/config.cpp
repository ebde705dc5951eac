#include "tpvocc/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace tpvocc {

using nlohmann::json;

void Config::validate() const {
  if (grid_dims[0] <= 0 || grid_dims[1] <= 0 || grid_dims[2] <= 0)
    throw ConfigError("config: grid dims must be positive");
  if (!(voxel_size > 0.0)) throw ConfigError("config: voxel_size must be positive");
  if (num_classes < 2 || num_classes > 254)
    throw ConfigError("config: num_classes must be in [2, 254]");
  if (channels <= 0 || trunk_channels <= 0) throw ConfigError("config: channels must be positive");
  if (refine_blocks < 1) throw ConfigError("config: refine_blocks must be >= 1");
  if (depth_bins < 2) throw ConfigError("config: depth_bins must be >= 2");
  if (!(depth_max > depth_min) || !(depth_min > 0.0))
    throw ConfigError("config: depth range must satisfy 0 < depth_min < depth_max");
  if (image_h % image_stride != 0 || image_w % image_stride != 0)
    throw ConfigError("config: image dims must be divisible by the encoder stride");
  if (image_stride != 4) throw ConfigError("config: encoder stride is fixed to 4");
  if (evt_heads < 1 || evt_points < 1) throw ConfigError("config: EVT heads/points must be >= 1");
  for (double l : lambdas)
    if (!(l > 0.0)) throw ConfigError("config: lambda weights must be positive");
  if (epochs < 1 || batch_size < 1) throw ConfigError("config: epochs/batch must be >= 1");
  if (train_scenes + val_scenes + test_scenes > scenes)
    throw ConfigError("config: split sizes exceed scene count");
  if (lidar_azimuth_rays < 1 || lidar_elevation_rays < 1)
    throw ConfigError("config: lidar ray counts must be >= 1");
}

namespace {

template <typename T, size_t N>
json arr(const std::array<T, N>& a) {
  json j = json::array();
  for (const auto& v : a) j.push_back(v);
  return j;
}

template <typename T, size_t N>
void get_arr(const json& j, const char* key, std::array<T, N>& out) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != N)
    throw ConfigError(std::string("config: '") + key + "' must be an array of " +
                      std::to_string(N) + " entries");
  for (size_t i = 0; i < N; ++i) out[i] = a[i].get<T>();
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string config_to_json(const Config& c) {
  json j;
  j["grid"] = {{"dims", arr(c.grid_dims)},
               {"origin", arr(c.grid_origin)},
               {"voxel_size", c.voxel_size}};
  j["classes"] = c.num_classes;
  j["channels"] = c.channels;
  j["trunk_channels"] = c.trunk_channels;
  j["refine_blocks"] = c.refine_blocks;
  j["depth"] = {{"bins", c.depth_bins}, {"min", c.depth_min}, {"max", c.depth_max}};
  j["image"] = {{"h", c.image_h}, {"w", c.image_w}, {"stride", c.image_stride},
                {"noise_std", c.image_noise_std}};
  j["camera"] = {{"fx", c.cam_fx}, {"fy", c.cam_fy}, {"cx", c.cam_cx}, {"cy", c.cam_cy},
                 {"pos", arr(c.cam_pos)}};
  j["lidar"] = {{"pos", arr(c.lidar_pos)},
                {"azimuth_rays", c.lidar_azimuth_rays},
                {"elevation_rays", c.lidar_elevation_rays},
                {"az_min_deg", c.lidar_az_min_deg},
                {"az_max_deg", c.lidar_az_max_deg},
                {"el_min_deg", c.lidar_el_min_deg},
                {"el_max_deg", c.lidar_el_max_deg}};
  j["evt"] = {{"heads", c.evt_heads},
              {"points", c.evt_points},
              {"mask_from_gt_depth", c.evt_mask_from_gt_depth}};
  j["pool"] = {{"mode", c.pool_mode == PoolMode::kWap ? "wap" : "gmp"},
               {"softmax_per_voxel", c.pool_softmax_per_voxel}};
  j["distill"] = {{"fsd", c.fsd}, {"trd", c.trd}, {"tad", c.tad}, {"pad", c.pad},
                  {"trd_max_positions", c.trd_max_positions}, {"kl_reverse", c.kl_reverse}};
  j["lambdas"] = arr(c.lambdas);
  j["opt"] = {{"lr", c.lr}, {"weight_decay", c.weight_decay}, {"epochs", c.epochs},
              {"batch_size", c.batch_size}};
  j["data"] = {{"scenes", c.scenes},      {"train", c.train_scenes}, {"val", c.val_scenes},
               {"test", c.test_scenes},   {"dir", c.data_dir},       {"depth_noise_std", c.depth_noise_std}};
  j["seed"] = c.seed;
  const SceneParams& s = c.scene;
  j["scene"] = {{"cars_min", s.cars_min},
                {"cars_max", s.cars_max},
                {"car_size_min", arr(s.car_size_min)},
                {"car_size_max", arr(s.car_size_max)},
                {"buildings_min", s.buildings_min},
                {"buildings_max", s.buildings_max},
                {"building_footprint", arr(s.building_footprint)},
                {"building_height", arr(s.building_height)},
                {"poles_min", s.poles_min},
                {"poles_max", s.poles_max},
                {"pole_height", arr(s.pole_height)},
                {"veg_min", s.veg_min},
                {"veg_max", s.veg_max},
                {"veg_radius", arr(s.veg_radius)},
                {"sidewalk_width", s.sidewalk_width},
                {"occlusion_shadow", s.occlusion_shadow}};
  return j.dump(2);
}

Config config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  Config c;
  try {
    if (j.contains("grid")) {
      get_arr(j["grid"], "dims", c.grid_dims);
      get_arr(j["grid"], "origin", c.grid_origin);
      get(j["grid"], "voxel_size", c.voxel_size);
    }
    get(j, "classes", c.num_classes);
    get(j, "channels", c.channels);
    get(j, "trunk_channels", c.trunk_channels);
    get(j, "refine_blocks", c.refine_blocks);
    if (j.contains("depth")) {
      get(j["depth"], "bins", c.depth_bins);
      get(j["depth"], "min", c.depth_min);
      get(j["depth"], "max", c.depth_max);
    }
    if (j.contains("image")) {
      get(j["image"], "h", c.image_h);
      get(j["image"], "w", c.image_w);
      get(j["image"], "stride", c.image_stride);
      get(j["image"], "noise_std", c.image_noise_std);
    }
    if (j.contains("camera")) {
      get(j["camera"], "fx", c.cam_fx);
      get(j["camera"], "fy", c.cam_fy);
      get(j["camera"], "cx", c.cam_cx);
      get(j["camera"], "cy", c.cam_cy);
      get_arr(j["camera"], "pos", c.cam_pos);
    }
    if (j.contains("lidar")) {
      get_arr(j["lidar"], "pos", c.lidar_pos);
      get(j["lidar"], "azimuth_rays", c.lidar_azimuth_rays);
      get(j["lidar"], "elevation_rays", c.lidar_elevation_rays);
      get(j["lidar"], "az_min_deg", c.lidar_az_min_deg);
      get(j["lidar"], "az_max_deg", c.lidar_az_max_deg);
      get(j["lidar"], "el_min_deg", c.lidar_el_min_deg);
      get(j["lidar"], "el_max_deg", c.lidar_el_max_deg);
    }
    if (j.contains("evt")) {
      get(j["evt"], "heads", c.evt_heads);
      get(j["evt"], "points", c.evt_points);
      get(j["evt"], "mask_from_gt_depth", c.evt_mask_from_gt_depth);
    }
    if (j.contains("pool")) {
      std::string mode = "wap";
      get(j["pool"], "mode", mode);
      if (mode == "wap")
        c.pool_mode = PoolMode::kWap;
      else if (mode == "gmp")
        c.pool_mode = PoolMode::kGmp;
      else
        throw ConfigError("config: pool.mode must be 'wap' or 'gmp'");
      get(j["pool"], "softmax_per_voxel", c.pool_softmax_per_voxel);
    }
    if (j.contains("distill")) {
      get(j["distill"], "fsd", c.fsd);
      get(j["distill"], "trd", c.trd);
      get(j["distill"], "tad", c.tad);
      get(j["distill"], "pad", c.pad);
      get(j["distill"], "trd_max_positions", c.trd_max_positions);
      get(j["distill"], "kl_reverse", c.kl_reverse);
    }
    get_arr(j, "lambdas", c.lambdas);
    if (j.contains("opt")) {
      get(j["opt"], "lr", c.lr);
      get(j["opt"], "weight_decay", c.weight_decay);
      get(j["opt"], "epochs", c.epochs);
      get(j["opt"], "batch_size", c.batch_size);
    }
    if (j.contains("data")) {
      get(j["data"], "scenes", c.scenes);
      get(j["data"], "train", c.train_scenes);
      get(j["data"], "val", c.val_scenes);
      get(j["data"], "test", c.test_scenes);
      get(j["data"], "dir", c.data_dir);
      get(j["data"], "depth_noise_std", c.depth_noise_std);
    }
    get(j, "seed", c.seed);
    if (j.contains("scene")) {
      const auto& s = j["scene"];
      get(s, "cars_min", c.scene.cars_min);
      get(s, "cars_max", c.scene.cars_max);
      get_arr(s, "car_size_min", c.scene.car_size_min);
      get_arr(s, "car_size_max", c.scene.car_size_max);
      get(s, "buildings_min", c.scene.buildings_min);
      get(s, "buildings_max", c.scene.buildings_max);
      get_arr(s, "building_footprint", c.scene.building_footprint);
      get_arr(s, "building_height", c.scene.building_height);
      get(s, "poles_min", c.scene.poles_min);
      get(s, "poles_max", c.scene.poles_max);
      get_arr(s, "pole_height", c.scene.pole_height);
      get(s, "veg_min", c.scene.veg_min);
      get(s, "veg_max", c.scene.veg_max);
      get_arr(s, "veg_radius", c.scene.veg_radius);
      get(s, "sidewalk_width", c.scene.sidewalk_width);
      get(s, "occlusion_shadow", c.scene.occlusion_shadow);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_hash(const Config& cfg) {
  const std::string dump = config_to_json(cfg);
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return std::string(buf);
}

}  // namespace tpvocc
