#include "tpvocc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tpvocc/losses.hpp"

namespace tpvocc::train {

namespace fs = std::filesystem;
using ad::Var;

Split dataset_split(const Config& cfg) {
  Split s;
  int next = 0;
  for (int i = 0; i < cfg.train_scenes; ++i) s.train_ids.push_back(next++);
  for (int i = 0; i < cfg.val_scenes; ++i) s.val_ids.push_back(next++);
  for (int i = 0; i < cfg.test_scenes; ++i) s.test_ids.push_back(next++);
  return s;
}

const std::vector<int>& split_ids(const Split& s, const std::string& name) {
  if (name == "train") return s.train_ids;
  if (name == "val") return s.val_ids;
  if (name == "test") return s.test_ids;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

SceneCache::SceneCache(const std::string& root, int count) {
  const int available = data::dataset_scene_count(root);
  if (count > available)
    throw DataError("dataset '" + root + "' has " + std::to_string(available) +
                    " scenes, config wants " + std::to_string(count));
  samples_.reserve((size_t)count);
  for (int i = 0; i < count; ++i) samples_.push_back(data::load_scene(data::scene_dir(root, i)));
}

std::vector<int64_t> label_histogram(const SceneCache& cache, const std::vector<int>& ids,
                                     int num_classes) {
  std::vector<int64_t> counts((size_t)num_classes, 0);
  for (int id : ids)
    for (uint8_t l : cache.at(id).scene.labels)
      if (l != 255) ++counts[(size_t)std::min<int>(l, num_classes - 1)];
  return counts;
}

metrics::MetricsReport evaluate_model(SscModel& model, const SceneCache& cache,
                                      const std::vector<int>& ids) {
  if (ids.empty()) throw DataError("evaluate: empty split");
  const auto t0 = std::chrono::steady_clock::now();
  metrics::MetricsAccumulator acc(model.config().num_classes);
  for (int id : ids) {
    ad::NoGradGuard ng;
    ModelOutputs out = model.forward(cache.at(id));
    acc.add(out.predicted_labels(), cache.at(id).scene.labels);
  }
  metrics::MetricsReport r = acc.finalize();
  r.seed = model.config().seed;
  r.config_hash = config_hash(model.config());
  r.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Trainer::Trainer(const Config& cfg, Role role, std::string out_dir)
    : cfg_(cfg), role_(role), out_dir_(std::move(out_dir)), model_(role, cfg) {
  fs::create_directories(out_dir_);
}

namespace {

Var zero_scalar() { return ad::constant(Tensor::scalar(0.0)); }

double finite_or_throw(const distill::LossComponents& c, const Var& total, int epoch, int step) {
  const double t = total.val()[0];
  if (std::isfinite(t)) return t;
  std::ostringstream os;
  os << "non-finite loss at epoch " << epoch << " step " << step << ": ce=" << c.ce.val()[0]
     << " scal_geo=" << c.scal_geo.val()[0] << " scal_sem=" << c.scal_sem.val()[0]
     << " depth=" << c.depth.val()[0] << " fsd=" << c.fsd.val()[0] << " trd=" << c.trd.val()[0]
     << " tad=" << c.tad.val()[0] << " pad=" << c.pad.val()[0];
  throw NumericError(os.str());
}

Tensor flat2(const Tensor& t, int cols) { return t.reshaped({(int)(t.numel() / cols), cols}); }

}  // namespace

distill::LossComponents Trainer::scene_losses(const data::SceneSample& sample,
                                              const ModelOutputs& out, SscModel* teacher,
                                              const std::vector<double>& weights,
                                              uint64_t step_seed) {
  distill::LossComponents c;
  const auto& labels = sample.scene.labels;
  c.ce = losses::weighted_ce(out.tpv.probs, labels, weights);
  c.scal_geo = losses::scal(out.tpv.probs, labels, losses::ScalMode::kGeometric);
  c.scal_sem = losses::scal(out.tpv.probs, labels, losses::ScalMode::kSemantic);

  if (role_ == Role::kStudentCamera) {
    const Tensor gt = losses::project_lidar_depth(
        sample.points, sample.scene.camera.scaled(cfg_.image_stride));
    c.depth = losses::depth_loss(out.depth, gt);
  } else {
    c.depth = zero_scalar();
  }

  const bool any_distill = cfg_.fsd || cfg_.trd || cfg_.tad || cfg_.pad;
  if (teacher && any_distill) {
    ModelOutputs tout;
    {
      ad::NoGradGuard ng;
      tout = teacher->forward(sample);
    }
    const int cch = cfg_.channels;
    if (cfg_.fsd) {
      std::vector<distill::FeaturePair> pairs;
      pairs.push_back({"pre_refine", ad::reshape(out.pre_refine, {(int)(out.pre_refine.val().numel() / cch), cch}),
                       flat2(tout.pre_refine.val(), cch)});
      pairs.push_back({"f3d", ad::reshape(out.f3d, {(int)(out.f3d.val().numel() / cch), cch}),
                       flat2(tout.f3d.val(), cch)});
      pairs.push_back({"tpv_xy", ad::reshape(out.tpv.encoded.xy, {(int)(out.tpv.encoded.xy.val().numel() / cch), cch}),
                       flat2(tout.tpv.encoded.xy.val(), cch)});
      pairs.push_back({"tpv_yz", ad::reshape(out.tpv.encoded.yz, {(int)(out.tpv.encoded.yz.val().numel() / cch), cch}),
                       flat2(tout.tpv.encoded.yz.val(), cch)});
      pairs.push_back({"tpv_zx", ad::reshape(out.tpv.encoded.zx, {(int)(out.tpv.encoded.zx.val().numel() / cch), cch}),
                       flat2(tout.tpv.encoded.zx.val(), cch)});
      c.fsd = distill::fsd_loss(pairs);
    } else {
      c.fsd = zero_scalar();
    }
    if (cfg_.trd) {
      const std::array<Tensor, 3> tplanes = {tout.tpv.encoded.xy.val(), tout.tpv.encoded.yz.val(),
                                             tout.tpv.encoded.zx.val()};
      c.trd = distill::trd_loss(out.tpv.encoded, tplanes, cfg_.trd_max_positions, step_seed);
    } else {
      c.trd = zero_scalar();
    }
    c.tad = cfg_.tad ? distill::tad_loss(out.tpv.agg_weights, tout.tpv.agg_weights.val(),
                                         cfg_.kl_reverse)
                     : zero_scalar();
    c.pad = cfg_.pad ? distill::pad_loss(out.tpv.probs, tout.tpv.probs.val(), cfg_.kl_reverse)
                     : zero_scalar();
  } else {
    c.fsd = zero_scalar();
    c.trd = zero_scalar();
    c.tad = zero_scalar();
    c.pad = zero_scalar();
  }
  return c;
}

TrainResult Trainer::run(const SceneCache& cache, SscModel* teacher,
                         const std::string& resume_path, int stop_after_epochs) {
  cfg_.validate();
  if (teacher) {
    if (teacher->role() != Role::kTeacherLidar)
      throw ConfigError("distill: teacher checkpoint must have role teacher-lidar");
    teacher->freeze();
  }

  const Split split = dataset_split(cfg_);
  const int steps_per_epoch =
      (int)((split.train_ids.size() + cfg_.batch_size - 1) / cfg_.batch_size);
  const int64_t total_steps = (int64_t)steps_per_epoch * cfg_.epochs;
  nn::AdamW opt(model_.params(), cfg_.lr, cfg_.weight_decay, total_steps);

  int start_epoch = 0;
  if (!resume_path.empty()) {
    CheckpointMeta meta = load_checkpoint(resume_path, model_.params(), &opt);
    if (meta.role != role_name(role_))
      throw DataError("resume: checkpoint role '" + meta.role + "' does not match '" +
                      std::string(role_name(role_)) + "'");
    start_epoch = meta.epoch + 1;
  }

  const std::vector<double> weights = losses::class_weights(
      label_histogram(cache, split.train_ids, cfg_.num_classes));

  std::ofstream log(out_dir_ + "/train_log.jsonl", start_epoch > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("trainer: cannot open log in '" + out_dir_ + "'");

  TrainResult result;
  const int end_epoch = stop_after_epochs < 0
                            ? cfg_.epochs
                            : std::min(cfg_.epochs, start_epoch + stop_after_epochs);

  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    std::vector<int> order = split.train_ids;
    std::mt19937_64 shuffle_rng(mix_seed(mix_seed(cfg_.seed, 0xe90c4), (uint64_t)epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    int global_step = epoch * steps_per_epoch;
    for (size_t pos = 0; pos < order.size(); pos += (size_t)cfg_.batch_size, ++global_step) {
      const size_t bend = std::min(order.size(), pos + (size_t)cfg_.batch_size);
      const double inv_batch = 1.0 / (double)(bend - pos);
      StepLog sl;
      sl.epoch = epoch;
      sl.step = global_step;
      sl.lr = opt.current_lr();

      for (size_t b = pos; b < bend; ++b) {
        const data::SceneSample& sample = cache.at(order[b]);
        ModelOutputs out = model_.forward(sample);
        distill::LossComponents comp =
            scene_losses(sample, out, teacher, weights, mix_seed(cfg_.seed, (uint64_t)global_step));
        Var total = distill::total_loss(comp, cfg_.lambdas);
        const double tv = finite_or_throw(comp, total, epoch, global_step);
        ad::backward(ad::mul_scalar(total, inv_batch));

        sl.ce += comp.ce.val()[0] * inv_batch;
        sl.scal_geo += comp.scal_geo.val()[0] * inv_batch;
        sl.scal_sem += comp.scal_sem.val()[0] * inv_batch;
        sl.depth += comp.depth.val()[0] * inv_batch;
        sl.fsd += comp.fsd.val()[0] * inv_batch;
        sl.trd += comp.trd.val()[0] * inv_batch;
        sl.tad += comp.tad.val()[0] * inv_batch;
        sl.pad += comp.pad.val()[0] * inv_batch;
        sl.total += tv * inv_batch;
      }
      opt.step();
      model_.params().zero_grad();

      nlohmann::json row = {{"epoch", sl.epoch},     {"step", sl.step},
                            {"lr", sl.lr},           {"ce", sl.ce},
                            {"scal_geo", sl.scal_geo}, {"scal_sem", sl.scal_sem},
                            {"depth", sl.depth},     {"fsd", sl.fsd},
                            {"trd", sl.trd},         {"tad", sl.tad},
                            {"pad", sl.pad},         {"total", sl.total}};
      log << row.dump() << "\n";
      epoch_loss += sl.total;
      result.steps.push_back(sl);
    }
    epoch_loss /= steps_per_epoch;
    result.epoch_mean_loss.push_back(epoch_loss);
    ++result.epochs_run;

    metrics::MetricsReport val;
    bool have_val = !split.val_ids.empty();
    if (have_val) val = evaluate_model(model_, cache, split.val_ids);

    nlohmann::json erow = {{"epoch", epoch}, {"mean_total", epoch_loss}};
    if (have_val) {
      erow["val_iou"] = val.iou;
      erow["val_miou"] = val.miou;
    }
    log << erow.dump() << "\n";
    log.flush();

    CheckpointMeta meta;
    meta.epoch = epoch;
    meta.opt_step = opt.step_count();
    meta.role = role_name(role_);
    meta.config_json = config_to_json(cfg_);
    char name[64];
    snprintf(name, sizeof(name), "/ckpt_epoch_%03d.bin", epoch);
    save_checkpoint(out_dir_ + name, model_.params(), &opt, meta);
    save_checkpoint(out_dir_ + "/ckpt_last.bin", model_.params(), &opt, meta);
    result.final_checkpoint = out_dir_ + "/ckpt_last.bin";
  }
  return result;
}

std::unique_ptr<SscModel> model_from_checkpoint(const std::string& ckpt_path) {
  CheckpointMeta meta = peek_checkpoint(ckpt_path);
  const Config cfg = config_from_json_text(meta.config_json);
  const Role role =
      meta.role == "teacher-lidar" ? Role::kTeacherLidar : Role::kStudentCamera;
  auto model = std::make_unique<SscModel>(role, cfg);
  load_checkpoint(ckpt_path, model->params(), nullptr);
  return model;
}

metrics::MetricsReport evaluate_checkpoint(const std::string& ckpt_path,
                                           const std::string& data_root,
                                           const std::string& split_name) {
  auto model = model_from_checkpoint(ckpt_path);
  const Config& cfg = model->config();
  const Split split = dataset_split(cfg);
  const auto& ids = split_ids(split, split_name);
  if (ids.empty()) throw DataError("evaluate: split '" + split_name + "' is empty");
  SceneCache cache(data_root, cfg.train_scenes + cfg.val_scenes + cfg.test_scenes);
  return evaluate_model(*model, cache, ids);
}

}  // namespace tpvocc::train
