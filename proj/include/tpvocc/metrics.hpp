#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tpvocc/common.hpp"

namespace tpvocc::metrics {

// IoU is the binary occupied-vs-empty score; mIoU averages per-class IoU over
// semantic classes (class 0 and the 255 sentinel excluded). Classes absent
// from both prediction and ground truth are excluded from the mean, not
// counted as 0 or 1.
struct MetricsReport {
  double iou = 0.0;
  double miou = 0.0;
  std::vector<double> per_class_iou;  // size Nc; NaN for excluded classes
  std::vector<int64_t> tp, fp, fn;    // per class
  int64_t occ_tp = 0, occ_fp = 0, occ_fn = 0;
  int64_t valid_voxels = 0;
  int scenes = 0;
  uint64_t seed = 0;
  std::string config_hash;
  double wall_time_sec = 0.0;

  std::string to_json() const;
  std::string to_table(const std::vector<std::string>& class_names) const;
};

class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(int num_classes);

  void add(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt);
  MetricsReport finalize() const;

 private:
  int nc_;
  std::vector<int64_t> tp_, fp_, fn_;
  int64_t occ_tp_ = 0, occ_fp_ = 0, occ_fn_ = 0;
  int64_t valid_ = 0;
  int scenes_ = 0;
};

MetricsReport compute_metrics(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                              int num_classes);

}  // namespace tpvocc::metrics
