#include "tpvocc/distill.hpp"

#include <algorithm>
#include <random>

#include "tpvocc/kernels.hpp"

namespace tpvocc::distill {

using ad::Var;

Var fsd_loss(const std::vector<FeaturePair>& features) {
  if (features.empty()) throw ConfigError("fsd_loss: empty feature list");
  Var acc;
  for (const auto& pair : features) {
    Var cos = ad::mean_cosine_rows(pair.student, pair.teacher);
    acc = acc.defined() ? ad::add(acc, cos) : cos;
  }
  Var mean_cos = ad::mul_scalar(acc, 1.0 / (double)features.size());
  return ad::add_scalar(ad::mul_scalar(mean_cos, -1.0), 1.0);
}

Tensor affinity_tensor(const Tensor& feat) {
  if (feat.dim() != 2) throw ConfigError("affinity_tensor: expects [K,C]");
  const int64_t k = feat.size(0);
  Tensor out({(int)k, (int)k});
  kernels::affinity_forward(feat.data(), k, feat.size(1), out.data());
  return out;
}

namespace {

Tensor flatten_plane_tensor(const Tensor& plane) {
  return plane.reshaped({plane.size(0) * plane.size(1), plane.size(2)});
}

std::vector<int64_t> sample_positions(int64_t k, int n, uint64_t seed) {
  std::vector<int64_t> idx((size_t)k);
  for (int64_t i = 0; i < k; ++i) idx[(size_t)i] = i;
  std::mt19937_64 gen(seed);
  // Partial Fisher-Yates: the first n entries are a uniform sample.
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<int64_t> d(i, k - 1);
    std::swap(idx[(size_t)i], idx[(size_t)d(gen)]);
  }
  idx.resize((size_t)n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Var trd_plane_loss(const Var& s_plane, const Tensor& t_plane, int max_positions, uint64_t seed) {
  if (!s_plane.val().same_shape(t_plane)) throw ConfigError("trd_loss: plane shape mismatch");
  const auto& sh = s_plane.shape();
  const int64_t k = (int64_t)sh[0] * sh[1];
  const int c = sh[2];
  Var s_flat = ad::reshape(s_plane, {(int)k, c});
  Tensor t_flat = flatten_plane_tensor(t_plane);

  if (max_positions > 0 && k > max_positions) {
    // Identical index set on both sides.
    std::vector<int64_t> idx = sample_positions(k, max_positions, seed);
    Tensor t_sub({max_positions, c});
    for (int i = 0; i < max_positions; ++i)
      for (int ch = 0; ch < c; ++ch) t_sub.at(i, ch) = t_flat.at((int)idx[(size_t)i], ch);
    s_flat = ad::gather_rows(s_flat, std::move(idx));
    t_flat = std::move(t_sub);
  }

  Var aff_s = ad::affinity(s_flat);
  Tensor aff_t = affinity_tensor(t_flat);
  return ad::mean_all(ad::abs(ad::sub_const(aff_s, aff_t)));
}

}  // namespace

Var trd_loss(const TpvTriplet& student, const std::array<Tensor, 3>& teacher, int max_positions,
             uint64_t seed) {
  Var lxy = trd_plane_loss(student.xy, teacher[0], max_positions, mix_seed(seed, 0));
  Var lyz = trd_plane_loss(student.yz, teacher[1], max_positions, mix_seed(seed, 1));
  Var lzx = trd_plane_loss(student.zx, teacher[2], max_positions, mix_seed(seed, 2));
  return ad::add(lxy, ad::add(lyz, lzx));
}

namespace {
Var kl_volume(const Var& s, const Tensor& t, bool reverse, const char* op) {
  const auto& sh = s.shape();
  if (sh.size() < 2) throw ConfigError(std::string(op) + ": expects a channelled volume");
  const int ch = sh.back();
  int64_t rows = 1;
  for (size_t i = 0; i + 1 < sh.size(); ++i) rows *= sh[i];
  Var flat = sh.size() == 2 ? s : ad::reshape(s, {(int)rows, ch});
  Tensor t_flat = t.reshaped({(int)rows, ch});
  return ad::kl_rows_mean(flat, t_flat, reverse);
}
}  // namespace

Var tad_loss(const Var& student_w4, const Tensor& teacher_w4, bool reverse) {
  if (!student_w4.val().same_shape(teacher_w4)) throw ConfigError("tad_loss: shape mismatch");
  return kl_volume(student_w4, teacher_w4, reverse, "tad_loss");
}

Var pad_loss(const Var& student_probs, const Tensor& teacher_probs, bool reverse) {
  if (!student_probs.val().same_shape(teacher_probs)) throw ConfigError("pad_loss: shape mismatch");
  return kl_volume(student_probs, teacher_probs, reverse, "pad_loss");
}

Var total_loss(const LossComponents& c, const std::array<double, 8>& lambdas) {
  const Var* parts[8] = {&c.ce, &c.scal_geo, &c.scal_sem, &c.depth,
                         &c.fsd, &c.trd,      &c.tad,      &c.pad};
  static const char* names[8] = {"ce", "scal_geo", "scal_sem", "depth",
                                 "fsd", "trd",      "tad",      "pad"};
  Var total;
  for (int i = 0; i < 8; ++i) {
    if (!parts[i]->defined())
      throw ConfigError(std::string("total_loss: missing component '") + names[i] + "'");
    Var term = ad::mul_scalar(*parts[i], lambdas[(size_t)i]);
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

}  // namespace tpvocc::distill
