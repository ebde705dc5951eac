#pragma once

#include <array>
#include <string>
#include <vector>

#include "tpvocc/autodiff.hpp"
#include "tpvocc/tpv_net.hpp"

namespace tpvocc::distill {

// One student/teacher feature pair, flattened to [M,C]. The teacher side is a
// plain tensor: distillation losses never propagate gradient into it.
struct FeaturePair {
  std::string name;
  ad::Var student;
  Tensor teacher;
};

// 1 - mean over feature maps of mean per-element cosine similarity.
ad::Var fsd_loss(const std::vector<FeaturePair>& features);

// Pairwise cosine affinity of a [K,C] feature map (teacher-side helper).
Tensor affinity_tensor(const Tensor& feat);

// Mean L1 between student and teacher affinity matrices, summed over the
// three planes. When a plane has more than max_positions positions, both
// sides are subsampled at the same seeded index set.
ad::Var trd_loss(const TpvTriplet& student, const std::array<Tensor, 3>& teacher,
                 int max_positions, uint64_t seed);

// Mean-over-voxels KL between aggregation weight distributions (4 channels).
ad::Var tad_loss(const ad::Var& student_w4, const Tensor& teacher_w4, bool reverse = false);

// Same over predicted class distributions (Nc channels).
ad::Var pad_loss(const ad::Var& student_probs, const Tensor& teacher_probs, bool reverse = false);

// All eight terms of the training objective. Every component must be present;
// disabled distillation terms enter as zero constants.
struct LossComponents {
  ad::Var ce, scal_geo, scal_sem, depth, fsd, trd, tad, pad;
};

ad::Var total_loss(const LossComponents& c, const std::array<double, 8>& lambdas);

}  // namespace tpvocc::distill
