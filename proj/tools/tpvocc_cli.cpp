#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "tpvocc/checkpoint.hpp"
#include "tpvocc/config.hpp"
#include "tpvocc/data.hpp"
#include "tpvocc/report.hpp"
#include "tpvocc/trainer.hpp"

namespace fs = std::filesystem;
using namespace tpvocc;

namespace {

struct CliState {
  std::string config_path;
  int64_t seed = -1;
  std::string out_dir = "runs/out";
  std::string data_dir;
  std::string teacher_ckpt;
  std::string ckpt;
  std::string resume;
  std::string split = "test";
  int scene_index = 0;
  bool fsd = true, trd = true, tad = true, pad = true;
  std::array<double, 8> lambdas{};  // only applied when the flag was passed
};

Config make_config(const CliState& st, CLI::App* sub) {
  Config cfg = st.config_path.empty() ? Config{} : load_config(st.config_path);
  if (st.seed >= 0) cfg.seed = (uint64_t)st.seed;
  if (!st.data_dir.empty()) cfg.data_dir = st.data_dir;
  auto passed = [&](const std::string& name) {
    const CLI::Option* o = sub->get_option_no_throw(name);
    return o && o->count() > 0;
  };
  if (passed("--fsd")) cfg.fsd = st.fsd;
  if (passed("--trd")) cfg.trd = st.trd;
  if (passed("--tad")) cfg.tad = st.tad;
  if (passed("--pad")) cfg.pad = st.pad;
  for (int i = 0; i < 8; ++i) {
    const std::string name = "--lambda" + std::to_string(i + 1);
    if (passed(name)) cfg.lambdas[(size_t)i] = st.lambdas[(size_t)i];
  }
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* sub, CliState& st) {
  sub->add_option("--config", st.config_path, "config JSON file");
  sub->add_option("--seed", st.seed, "override config seed");
  sub->add_option("--out", st.out_dir, "output directory");
}

void add_loss_flags(CLI::App* sub, CliState& st) {
  sub->add_flag("--fsd,!--no-fsd", st.fsd, "feature similarity distillation");
  sub->add_flag("--trd,!--no-trd", st.trd, "TPV relation distillation");
  sub->add_flag("--tad,!--no-tad", st.tad, "TPV aggregator distillation");
  sub->add_flag("--pad,!--no-pad", st.pad, "prediction alignment distillation");
  for (int i = 0; i < 8; ++i)
    sub->add_option("--lambda" + std::to_string(i + 1), st.lambdas[(size_t)i],
                    "loss weight override");
}

int run_training(const CliState& st, CLI::App* sub, Role role, bool with_teacher) {
  Config cfg = make_config(st, sub);
  const std::string data_root = cfg.data_dir;
  train::SceneCache cache(data_root, cfg.scenes);

  std::unique_ptr<SscModel> teacher;
  if (with_teacher) {
    if (st.teacher_ckpt.empty()) throw ConfigError("distill: --teacher <checkpoint> is required");
    teacher = train::model_from_checkpoint(st.teacher_ckpt);
    if (teacher->role() != Role::kTeacherLidar)
      throw ConfigError("distill: teacher checkpoint role must be teacher-lidar");
    const Config& tc = teacher->config();
    if (tc.grid_dims != cfg.grid_dims || tc.channels != cfg.channels ||
        tc.num_classes != cfg.num_classes)
      throw ConfigError("distill: teacher grid/channel/class config does not match");
  }

  train::Trainer trainer(cfg, role, st.out_dir);
  train::TrainResult result = trainer.run(cache, teacher.get(), st.resume);
  std::cout << "trained " << result.epochs_run << " epoch(s); final checkpoint: "
            << result.final_checkpoint << "\n";

  const train::Split split = train::dataset_split(cfg);
  if (!split.val_ids.empty()) {
    auto report = train::evaluate_model(trainer.model(), cache, split.val_ids);
    std::cout << report.to_table(data::class_names());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TPV-based semantic scene completion: data generation, training, distillation,"
               " evaluation and reports"};
  app.require_subcommand(1);
  CliState st;

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic scene dataset");
  add_common(gen, st);

  CLI::App* tt = app.add_subcommand("train-teacher", "train the LiDAR teacher");
  add_common(tt, st);
  tt->add_option("--data", st.data_dir, "dataset directory");
  tt->add_option("--resume", st.resume, "checkpoint to resume from");
  add_loss_flags(tt, st);

  CLI::App* ts = app.add_subcommand("train-student", "train the camera student (no distillation)");
  add_common(ts, st);
  ts->add_option("--data", st.data_dir, "dataset directory");
  ts->add_option("--resume", st.resume, "checkpoint to resume from");
  add_loss_flags(ts, st);

  CLI::App* di = app.add_subcommand("distill", "train the camera student against a frozen teacher");
  add_common(di, st);
  di->add_option("--data", st.data_dir, "dataset directory");
  di->add_option("--teacher", st.teacher_ckpt, "teacher checkpoint")->required();
  di->add_option("--resume", st.resume, "checkpoint to resume from");
  add_loss_flags(di, st);

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(ev, st);
  ev->add_option("--data", st.data_dir, "dataset directory");
  ev->add_option("--ckpt", st.ckpt, "checkpoint to evaluate")->required();
  ev->add_option("--split", st.split, "train, val or test");

  CLI::App* rp = app.add_subcommand("report", "emit TPV/PCA/weight-map plots for one scene");
  add_common(rp, st);
  rp->add_option("--data", st.data_dir, "dataset directory");
  rp->add_option("--ckpt", st.ckpt, "checkpoint to visualize")->required();
  rp->add_option("--scene", st.scene_index, "scene index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) {
      Config cfg = make_config(st, gen);
      const std::string root = gen->count("--out") ? st.out_dir : cfg.data_dir;
      data::generate_dataset(cfg, root);
      std::cout << "wrote " << cfg.scenes << " scenes to " << root << "\n";
      return 0;
    }
    if (tt->parsed()) return run_training(st, tt, Role::kTeacherLidar, false);
    if (ts->parsed()) return run_training(st, ts, Role::kStudentCamera, false);
    if (di->parsed()) return run_training(st, di, Role::kStudentCamera, true);

    if (ev->parsed()) {
      Config cfg = make_config(st, ev);
      auto report = train::evaluate_checkpoint(st.ckpt, cfg.data_dir, st.split);
      fs::create_directories(st.out_dir);
      const std::string base = st.out_dir + "/metrics_" + st.split;
      {
        std::ofstream j(base + ".json");
        j << report.to_json() << "\n";
      }
      {
        std::ofstream t(base + ".txt");
        t << report.to_table(data::class_names());
      }
      std::cout << report.to_table(data::class_names());
      std::cout << "wrote " << base << ".json\n";
      return 0;
    }
    if (rp->parsed()) {
      Config cfg = make_config(st, rp);
      auto model = train::model_from_checkpoint(st.ckpt);
      const auto sample = data::load_scene(data::scene_dir(cfg.data_dir, st.scene_index));
      auto files = report::emit_scene_report(*model, sample, st.out_dir);
      for (const auto& f : files) std::cout << f << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
