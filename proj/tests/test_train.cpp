#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "tpvocc/trainer.hpp"

using namespace tpvocc;
using testutil::max_abs_diff;

namespace fs = std::filesystem;

namespace {

Config train_config() {
  Config cfg = testutil::small_config();
  cfg.grid_dims = {8, 8, 4};
  cfg.grid_origin = {0.0, -2.0, 0.0};
  cfg.voxel_size = 0.5;
  cfg.channels = 4;
  cfg.trunk_channels = 8;
  cfg.depth_bins = 4;
  cfg.depth_min = 0.2;
  cfg.depth_max = 5.0;
  cfg.image_h = 16;
  cfg.image_w = 16;
  cfg.cam_fx = 16.0;
  cfg.cam_fy = 16.0;
  cfg.cam_cx = 8.0;
  cfg.cam_cy = 8.0;
  cfg.cam_pos = {-0.5, 0.0, 0.8};
  cfg.lidar_pos = {-0.25, 0.0, 1.2};
  cfg.lidar_azimuth_rays = 32;
  cfg.lidar_elevation_rays = 10;
  cfg.scenes = 10;
  cfg.train_scenes = 8;
  cfg.val_scenes = 1;
  cfg.test_scenes = 1;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.lr = 1e-3;
  cfg.seed = 3;
  cfg.scene.cars_min = 1;
  cfg.scene.cars_max = 2;
  cfg.scene.car_size_max = {3, 2, 1};
  cfg.scene.buildings_min = 1;
  cfg.scene.buildings_max = 1;
  cfg.scene.building_footprint = {2, 3};
  cfg.scene.building_height = {2, 3};
  cfg.scene.poles_min = 1;
  cfg.scene.poles_max = 1;
  cfg.scene.pole_height = {2, 3};
  return cfg;
}

struct TempDir {
  std::string path;
  explicit TempDir(const char* tag) {
    path = (fs::temp_directory_path() / (std::string("tpvocc_train_") + tag)).string();
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string make_dataset(const Config& cfg, const std::string& dir) {
  data::generate_dataset(cfg, dir);
  return dir;
}

}  // namespace

TEST_CASE("2-epoch smoke run writes per-epoch checkpoints and logs") {
  TempDir tmp("smoke");
  Config cfg = train_config();
  make_dataset(cfg, tmp.path + "/data");
  train::SceneCache cache(tmp.path + "/data", cfg.scenes);

  train::Trainer trainer(cfg, Role::kTeacherLidar, tmp.path + "/run");
  auto result = trainer.run(cache);
  CHECK(result.epochs_run == 2);
  CHECK(fs::exists(tmp.path + "/run/ckpt_epoch_000.bin"));
  CHECK(fs::exists(tmp.path + "/run/ckpt_epoch_001.bin"));
  CHECK(fs::exists(tmp.path + "/run/ckpt_last.bin"));
  CHECK(fs::exists(tmp.path + "/run/train_log.jsonl"));

  // The structured log carries every loss component per step.
  std::ifstream log(tmp.path + "/run/train_log.jsonl");
  std::string line;
  REQUIRE(std::getline(log, line));
  for (const char* key : {"\"ce\"", "\"scal_geo\"", "\"scal_sem\"", "\"depth\"", "\"fsd\"",
                          "\"trd\"", "\"tad\"", "\"pad\"", "\"total\"", "\"lr\""})
    CHECK(line.find(key) != std::string::npos);
}

TEST_CASE("training loss decreases over epochs") {
  TempDir tmp("decrease");
  Config cfg = train_config();
  cfg.epochs = 3;
  make_dataset(cfg, tmp.path + "/data");
  train::SceneCache cache(tmp.path + "/data", cfg.scenes);

  train::Trainer trainer(cfg, Role::kTeacherLidar, tmp.path + "/run");
  auto result = trainer.run(cache);
  REQUIRE(result.epoch_mean_loss.size() == 3);
  CHECK(result.epoch_mean_loss.back() < result.epoch_mean_loss.front());
}

TEST_CASE("resume from a checkpoint reproduces the uninterrupted run") {
  TempDir tmp("resume");
  Config cfg = train_config();
  make_dataset(cfg, tmp.path + "/data");
  train::SceneCache cache(tmp.path + "/data", cfg.scenes);

  train::Trainer full(cfg, Role::kStudentCamera, tmp.path + "/full");
  auto full_result = full.run(cache);

  train::Trainer part(cfg, Role::kStudentCamera, tmp.path + "/part");
  part.run(cache, nullptr, "", /*stop_after_epochs=*/1);
  train::Trainer resumed(cfg, Role::kStudentCamera, tmp.path + "/part");
  auto resumed_result = resumed.run(cache, nullptr, tmp.path + "/part/ckpt_epoch_000.bin");

  // Epoch-1 losses of the resumed run match the uninterrupted run.
  const size_t steps_per_epoch = full_result.steps.size() / 2;
  REQUIRE(resumed_result.steps.size() == steps_per_epoch);
  for (size_t i = 0; i < steps_per_epoch; ++i) {
    CHECK(std::fabs(resumed_result.steps[i].total -
                    full_result.steps[steps_per_epoch + i].total) < 1e-6);
  }
}

TEST_CASE("distillation with all flags off reproduces plain student training") {
  TempDir tmp("flagsoff");
  Config cfg = train_config();
  cfg.epochs = 1;
  make_dataset(cfg, tmp.path + "/data");
  train::SceneCache cache(tmp.path + "/data", cfg.scenes);

  // A teacher checkpoint to hand to the distillation run.
  train::Trainer tt(cfg, Role::kTeacherLidar, tmp.path + "/teacher");
  auto tres = tt.run(cache);

  train::Trainer plain(cfg, Role::kStudentCamera, tmp.path + "/plain");
  auto plain_result = plain.run(cache);

  Config dcfg = cfg;
  dcfg.fsd = dcfg.trd = dcfg.tad = dcfg.pad = false;
  auto teacher = train::model_from_checkpoint(tres.final_checkpoint);
  train::Trainer dist(dcfg, Role::kStudentCamera, tmp.path + "/dist");
  auto dist_result = dist.run(cache, teacher.get());

  REQUIRE(plain_result.steps.size() == dist_result.steps.size());
  for (size_t i = 0; i < plain_result.steps.size(); ++i)
    CHECK(std::fabs(plain_result.steps[i].total - dist_result.steps[i].total) < 1e-6);
}

TEST_CASE("distillation trains and never accumulates teacher gradient") {
  TempDir tmp("frozen");
  Config cfg = train_config();
  cfg.epochs = 1;
  make_dataset(cfg, tmp.path + "/data");
  train::SceneCache cache(tmp.path + "/data", cfg.scenes);

  train::Trainer tt(cfg, Role::kTeacherLidar, tmp.path + "/teacher");
  auto tres = tt.run(cache);

  auto teacher = train::model_from_checkpoint(tres.final_checkpoint);
  train::Trainer dist(cfg, Role::kStudentCamera, tmp.path + "/dist");
  auto result = dist.run(cache, teacher.get());
  CHECK(result.epochs_run == 1);

  for (const auto& e : teacher->params().entries()) {
    const Tensor& g = e.var.node()->grad;
    for (int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.0);
  }

  // Distillation components were live (nonzero) during training.
  bool any_distill = false;
  for (const auto& s : result.steps)
    if (s.fsd != 0.0 || s.trd != 0.0 || s.tad != 0.0 || s.pad != 0.0) any_distill = true;
  CHECK(any_distill);

  // A student checkpoint cannot be used as a distillation teacher.
  train::Trainer bad(cfg, Role::kStudentCamera, tmp.path + "/bad");
  auto student = train::model_from_checkpoint(result.final_checkpoint);
  CHECK_THROWS_AS(bad.run(cache, student.get()), ConfigError);
}

TEST_CASE("checkpoint reload reproduces forward outputs bit-identically") {
  TempDir tmp("reload");
  Config cfg = train_config();
  cfg.epochs = 1;
  make_dataset(cfg, tmp.path + "/data");
  train::SceneCache cache(tmp.path + "/data", cfg.scenes);

  train::Trainer trainer(cfg, Role::kTeacherLidar, tmp.path + "/run");
  auto result = trainer.run(cache);

  ad::NoGradGuard ng;
  Tensor before = trainer.model().forward(cache.at(0)).tpv.probs.val();
  auto reloaded = train::model_from_checkpoint(result.final_checkpoint);
  Tensor after = reloaded->forward(cache.at(0)).tpv.probs.val();
  CHECK(max_abs_diff(before, after) == 0.0);
}

TEST_CASE("evaluation is deterministic and split-aware") {
  TempDir tmp("eval");
  Config cfg = train_config();
  cfg.epochs = 1;
  make_dataset(cfg, tmp.path + "/data");
  train::SceneCache cache(tmp.path + "/data", cfg.scenes);

  train::Trainer trainer(cfg, Role::kTeacherLidar, tmp.path + "/run");
  auto result = trainer.run(cache);

  auto r1 = train::evaluate_checkpoint(result.final_checkpoint, tmp.path + "/data", "test");
  auto r2 = train::evaluate_checkpoint(result.final_checkpoint, tmp.path + "/data", "test");
  CHECK(r1.iou == r2.iou);
  CHECK(r1.miou == r2.miou);
  CHECK(r1.tp == r2.tp);
  CHECK(r1.fp == r2.fp);
  CHECK(r1.fn == r2.fn);
  CHECK(r1.config_hash == r2.config_hash);

  CHECK_THROWS_AS(train::evaluate_checkpoint(result.final_checkpoint, tmp.path + "/data", "bogus"),
                  ConfigError);
}

TEST_CASE("corrupt checkpoints are rejected with described fields") {
  TempDir tmp("ckptbad");
  Config cfg = train_config();
  cfg.epochs = 1;
  make_dataset(cfg, tmp.path + "/data");
  train::SceneCache cache(tmp.path + "/data", cfg.scenes);
  train::Trainer trainer(cfg, Role::kTeacherLidar, tmp.path + "/run");
  auto result = trainer.run(cache);

  const std::string path = tmp.path + "/run/ckpt_last.bin";
  fs::resize_file(path, 100);  // cuts into the header
  CHECK_THROWS_AS(train::model_from_checkpoint(path), DataError);

  std::ofstream bad(tmp.path + "/bad.bin", std::ios::binary);
  bad << "NOTACKPT";
  bad.close();
  CHECK_THROWS_AS(train::model_from_checkpoint(tmp.path + "/bad.bin"), DataError);
}

#ifdef TPVOCC_CLI_PATH
TEST_CASE("CLI surface: subcommands, flags, exit codes") {
  TempDir tmp("cli");
  Config cfg = train_config();
  cfg.epochs = 1;
  cfg.scenes = 6;
  cfg.train_scenes = 4;
  cfg.val_scenes = 1;
  cfg.test_scenes = 1;
  {
    std::ofstream out(tmp.path + "/config.json");
    out << config_to_json(cfg);
  }
  const std::string cli = TPVOCC_CLI_PATH;
  const std::string cfg_arg = " --config " + tmp.path + "/config.json";
  auto run = [&](const std::string& args) {
    const std::string cmd = cli + " " + args + " > " + tmp.path + "/cli_out.txt 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };

  CHECK(run("gen-data" + cfg_arg + " --out " + tmp.path + "/data") == 0);
  CHECK(run("train-teacher" + cfg_arg + " --data " + tmp.path + "/data --out " + tmp.path +
            "/teacher") == 0);
  CHECK(run("train-student" + cfg_arg + " --data " + tmp.path + "/data --out " + tmp.path +
            "/student") == 0);
  CHECK(run("distill" + cfg_arg + " --data " + tmp.path + "/data --out " + tmp.path +
            "/distill --teacher " + tmp.path + "/teacher/ckpt_last.bin --no-trd --lambda8 35") ==
        0);
  CHECK(run("eval" + cfg_arg + " --data " + tmp.path + "/data --ckpt " + tmp.path +
            "/distill/ckpt_last.bin --split test --out " + tmp.path + "/eval") == 0);
  CHECK(fs::exists(tmp.path + "/eval/metrics_test.json"));
  CHECK(run("report" + cfg_arg + " --data " + tmp.path + "/data --ckpt " + tmp.path +
            "/teacher/ckpt_last.bin --scene 0 --out " + tmp.path + "/report") == 0);
  CHECK(fs::exists(tmp.path + "/report/tpv_xy_pca.ppm"));

  // Exit codes: 1 usage, 2 data.
  CHECK(run("no-such-command") == 1);
  CHECK(run("eval" + cfg_arg + " --data " + tmp.path + "/data") == 1);  // missing --ckpt
  CHECK(run("eval" + cfg_arg + " --data " + tmp.path + "/data --ckpt " + tmp.path +
            "/missing.bin") == 2);
  CHECK(run("train-teacher" + cfg_arg + " --data " + tmp.path + "/no_dataset") == 2);
}
#endif
