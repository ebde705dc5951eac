#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tpvocc/checkpoint.hpp"
#include "tpvocc/config.hpp"
#include "tpvocc/data.hpp"
#include "tpvocc/distill.hpp"
#include "tpvocc/metrics.hpp"
#include "tpvocc/model.hpp"

namespace tpvocc::train {

// Deterministic split over scene indices: [0,train) train,
// [train, train+val) val, [train+val, train+val+test) test.
struct Split {
  std::vector<int> train_ids, val_ids, test_ids;
};
Split dataset_split(const Config& cfg);
const std::vector<int>& split_ids(const Split& s, const std::string& name);

// All scenes of a dataset held in memory (desk scale keeps this tiny).
class SceneCache {
 public:
  SceneCache(const std::string& root, int count);
  const data::SceneSample& at(int id) const { return samples_[(size_t)id]; }
  int size() const { return (int)samples_.size(); }

 private:
  std::vector<data::SceneSample> samples_;
};

std::vector<int64_t> label_histogram(const SceneCache& cache, const std::vector<int>& ids,
                                     int num_classes);

struct StepLog {
  int epoch = 0, step = 0;
  double lr = 0;
  double ce = 0, scal_geo = 0, scal_sem = 0, depth = 0;
  double fsd = 0, trd = 0, tad = 0, pad = 0;
  double total = 0;
};

struct TrainResult {
  std::string final_checkpoint;
  std::vector<StepLog> steps;
  std::vector<double> epoch_mean_loss;
  int epochs_run = 0;
};

metrics::MetricsReport evaluate_model(SscModel& model, const SceneCache& cache,
                                      const std::vector<int>& ids);

class Trainer {
 public:
  // teacher: frozen teacher model for distillation (must be teacher-lidar).
  Trainer(const Config& cfg, Role role, std::string out_dir);

  // resume_path: continue from a checkpoint written by an identical config.
  // stop_after_epochs: train at most this many epochs this invocation (the
  // cosine schedule still spans cfg.epochs); -1 = run to the end.
  TrainResult run(const SceneCache& cache, SscModel* teacher = nullptr,
                  const std::string& resume_path = "", int stop_after_epochs = -1);

  SscModel& model() { return model_; }

 private:
  distill::LossComponents scene_losses(const data::SceneSample& sample, const ModelOutputs& out,
                                       SscModel* teacher, const std::vector<double>& weights,
                                       uint64_t step_seed);

  Config cfg_;
  Role role_;
  std::string out_dir_;
  SscModel model_;
};

// Convenience wrapper: load a checkpoint (role + config snapshot from the
// file), evaluate it on a split, return the report.
metrics::MetricsReport evaluate_checkpoint(const std::string& ckpt_path,
                                           const std::string& data_root,
                                           const std::string& split_name);

// Builds a model matching a checkpoint's role/config and loads the weights.
std::unique_ptr<SscModel> model_from_checkpoint(const std::string& ckpt_path);

}  // namespace tpvocc::train
