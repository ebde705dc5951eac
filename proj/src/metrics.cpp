#include "tpvocc/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

namespace tpvocc::metrics {

MetricsAccumulator::MetricsAccumulator(int num_classes) : nc_(num_classes) {
  if (num_classes < 2) throw ConfigError("metrics: need at least 2 classes");
  tp_.assign((size_t)nc_, 0);
  fp_.assign((size_t)nc_, 0);
  fn_.assign((size_t)nc_, 0);
}

void MetricsAccumulator::add(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  if (pred.size() != gt.size()) throw ConfigError("metrics: pred/gt size mismatch");
  for (size_t i = 0; i < gt.size(); ++i) {
    const uint8_t g = gt[i];
    if (g == 255) continue;  // invalid voxels never enter any count
    const uint8_t p = pred[i];
    if (g >= nc_) throw DataError("metrics: ground-truth label out of range");
    if (p >= nc_) throw DataError("metrics: predicted label out of range");
    ++valid_;

    const bool go = g != 0, po = p != 0;
    if (go && po) ++occ_tp_;
    if (!go && po) ++occ_fp_;
    if (go && !po) ++occ_fn_;

    if (p == g) {
      ++tp_[p];
    } else {
      ++fp_[p];
      ++fn_[g];
    }
  }
  ++scenes_;
}

MetricsReport MetricsAccumulator::finalize() const {
  if (valid_ == 0) throw DataError("metrics: no valid voxels (all ground truth is invalid)");
  MetricsReport r;
  r.tp = tp_;
  r.fp = fp_;
  r.fn = fn_;
  r.occ_tp = occ_tp_;
  r.occ_fp = occ_fp_;
  r.occ_fn = occ_fn_;
  r.valid_voxels = valid_;
  r.scenes = scenes_;

  const int64_t occ_union = occ_tp_ + occ_fp_ + occ_fn_;
  r.iou = occ_union == 0 ? 1.0 : (double)occ_tp_ / (double)occ_union;

  r.per_class_iou.assign((size_t)nc_, std::nan(""));
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < nc_; ++c) {
    const int64_t u = tp_[(size_t)c] + fp_[(size_t)c] + fn_[(size_t)c];
    if (u == 0) continue;  // absent from both pred and gt: excluded
    r.per_class_iou[(size_t)c] = (double)tp_[(size_t)c] / (double)u;
    if (c == 0) continue;  // empty class never enters mIoU
    sum += r.per_class_iou[(size_t)c];
    ++counted;
  }
  r.miou = counted == 0 ? 0.0 : sum / counted;
  return r;
}

MetricsReport compute_metrics(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                              int num_classes) {
  MetricsAccumulator acc(num_classes);
  acc.add(pred, gt);
  return acc.finalize();
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["metrics"]["iou"] = iou;
  j["metrics"]["miou"] = miou;
  nlohmann::json pc = nlohmann::json::array();
  for (double v : per_class_iou) {
    if (std::isnan(v))
      pc.push_back(nullptr);
    else
      pc.push_back(v);
  }
  j["metrics"]["per_class_iou"] = pc;
  j["metrics"]["tp"] = tp;
  j["metrics"]["fp"] = fp;
  j["metrics"]["fn"] = fn;
  j["metrics"]["occupied"] = {{"tp", occ_tp}, {"fp", occ_fp}, {"fn", occ_fn}};
  j["metrics"]["valid_voxels"] = valid_voxels;
  j["metrics"]["scenes"] = scenes;
  j["meta"]["seed"] = seed;
  j["meta"]["config_hash"] = config_hash;
  j["meta"]["wall_time_sec"] = wall_time_sec;
  return j.dump(2);
}

std::string MetricsReport::to_table(const std::vector<std::string>& class_names) const {
  std::ostringstream os;
  char buf[128];
  snprintf(buf, sizeof(buf), "IoU  %6.2f%%   mIoU %6.2f%%   (%lld voxels, %d scenes)\n",
           100.0 * iou, 100.0 * miou, (long long)valid_voxels, scenes);
  os << buf;
  os << "  class            IoU      TP        FP        FN\n";
  for (size_t c = 1; c < per_class_iou.size(); ++c) {
    const std::string name = c < class_names.size() ? class_names[c] : "class" + std::to_string(c);
    if (std::isnan(per_class_iou[c])) {
      snprintf(buf, sizeof(buf), "  %-12s%9s\n", name.c_str(), "--");
    } else {
      snprintf(buf, sizeof(buf), "  %-12s%8.2f%%%10lld%10lld%10lld\n", name.c_str(),
               100.0 * per_class_iou[c], (long long)tp[c], (long long)fp[c], (long long)fn[c]);
    }
    os << buf;
  }
  return os.str();
}

}  // namespace tpvocc::metrics
