#pragma once

#include <doctest.h>

#include <algorithm>
#include <functional>
#include <vector>

#include "tpvocc/autodiff.hpp"
#include "tpvocc/config.hpp"
#include "tpvocc/tensor.hpp"

namespace testutil {

using tpvocc::Rng;
using tpvocc::Tensor;
using tpvocc::ad::Var;

// Fixed random linear readout to reduce any op output to a scalar.
inline Var scalar_readout(const Var& t, const Tensor& r) {
  return tpvocc::ad::sum_all(tpvocc::ad::mul(t, tpvocc::ad::constant(r)));
}

// Central-difference check of d f(x) / dx against reverse mode. Probes up to
// max_probe coordinates (all of them when the input is small).
inline void grad_check(const std::function<Var(const Var&)>& f, const Tensor& x0,
                       double rel_tol = 1e-4, int max_probe = 64, uint64_t seed = 0) {
  Var x(x0, /*requires_grad=*/true);
  Var y = f(x);
  REQUIRE(y.val().numel() == 1);
  tpvocc::ad::backward(y);
  const Tensor analytic = x.grad();

  const int64_t n = x0.numel();
  std::vector<int64_t> probes;
  if (n <= max_probe) {
    for (int64_t i = 0; i < n; ++i) probes.push_back(i);
  } else {
    std::vector<int64_t> all(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
    std::mt19937_64 gen(seed + 17);
    for (int i = 0; i < max_probe; ++i) {
      std::uniform_int_distribution<int64_t> d(i, n - 1);
      std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(d(gen))]);
      probes.push_back(all[static_cast<size_t>(i)]);
    }
  }

  const double h = 1e-6;
  for (int64_t i : probes) {
    Tensor xp = x0, xm = x0;
    xp[i] += h;
    xm[i] -= h;
    const double fp = f(Var(xp)).val()[0];
    const double fm = f(Var(xm)).val()[0];
    const double fd = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    const double err = std::fabs(a - fd);
    const double denom = std::max(std::fabs(a), std::fabs(fd));
    INFO("coord ", i, ": analytic=", a, " fd=", fd);
    CHECK(err <= rel_tol * denom + 1e-8);
  }
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.numel() == b.numel());
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// FD check of d f(params) / d(param entries) for a forward that closes over
// its parameters. Perturbs a few coordinates of each listed parameter.
inline void param_grad_check(const std::function<Var()>& forward_scalar,
                             const std::vector<Var>& params, int probes_per_param = 3,
                             double rel_tol = 1e-4, uint64_t seed = 0) {
  for (const auto& p : params) p.grad().fill(0.0);
  Var y = forward_scalar();
  REQUIRE(y.val().numel() == 1);
  tpvocc::ad::backward(y);

  std::mt19937_64 gen(seed + 5);
  const double h = 1e-6;
  for (const auto& p : params) {
    Tensor& value = p.node()->value;
    const Tensor analytic = p.grad();
    for (int t = 0; t < probes_per_param; ++t) {
      std::uniform_int_distribution<int64_t> d(0, value.numel() - 1);
      const int64_t i = d(gen);
      const double orig = value[i];
      value[i] = orig + h;
      const double fp = forward_scalar().val()[0];
      value[i] = orig - h;
      const double fm = forward_scalar().val()[0];
      value[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = analytic[i];
      const double err = std::fabs(a - fd);
      INFO("param entry ", i, ": analytic=", a, " fd=", fd);
      CHECK(err <= rel_tol * std::max(std::fabs(a), std::fabs(fd)) + 1e-8);
    }
  }
}

// Tiny pipeline configuration for fast module tests.
inline tpvocc::Config small_config() {
  tpvocc::Config cfg;
  cfg.grid_dims = {4, 4, 2};
  cfg.grid_origin = {0.0, -1.0, 0.0};
  cfg.voxel_size = 0.5;
  cfg.num_classes = 8;
  cfg.channels = 2;
  cfg.trunk_channels = 4;
  cfg.depth_bins = 3;
  cfg.depth_min = 0.2;
  cfg.depth_max = 3.0;
  cfg.image_h = 8;
  cfg.image_w = 8;
  cfg.cam_fx = 8.0;
  cfg.cam_fy = 8.0;
  cfg.cam_cx = 4.0;
  cfg.cam_cy = 4.0;
  cfg.cam_pos = {-0.5, 0.0, 0.6};
  cfg.lidar_pos = {-0.25, 0.0, 0.8};
  cfg.lidar_azimuth_rays = 24;
  cfg.lidar_elevation_rays = 8;
  cfg.scenes = 4;
  cfg.train_scenes = 2;
  cfg.val_scenes = 1;
  cfg.test_scenes = 1;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.scene.cars_min = 1;
  cfg.scene.cars_max = 1;
  cfg.scene.car_size_min = {1, 1, 1};
  cfg.scene.car_size_max = {2, 1, 1};
  cfg.scene.buildings_min = 0;
  cfg.scene.buildings_max = 1;
  cfg.scene.building_footprint = {1, 2};
  cfg.scene.building_height = {1, 1};
  cfg.scene.poles_min = 0;
  cfg.scene.poles_max = 1;
  cfg.scene.pole_height = {1, 1};
  cfg.scene.veg_min = 0;
  cfg.scene.veg_max = 1;
  cfg.scene.veg_radius = {1, 1};
  cfg.scene.sidewalk_width = 1;
  return cfg;
}

}  // namespace testutil
