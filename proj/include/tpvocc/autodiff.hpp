#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "tpvocc/tensor.hpp"

namespace tpvocc::ad {

// Reverse-mode tape over dense double tensors. Each forward op builds a Node
// holding its value and a closure that pushes gradient into its parents.
// Graphs are rebuilt every forward pass (define-by-run).

class Node;
using NodePtr = std::shared_ptr<Node>;

class Node {
 public:
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backprop;

  Tensor& ensure_grad() {
    if (grad.empty() && value.numel() > 0) grad = Tensor(value.shape());
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& val() const { return node_->value; }
  Tensor& grad() const { return node_->ensure_grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::vector<int>& shape() const { return node_->value.shape(); }
  NodePtr node() const { return node_; }

  static Var wrap(NodePtr n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  NodePtr node_;
};

// While a NoGradGuard is alive, new ops record no parents (teacher /
// inference mode).
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Accumulates gradients of a scalar root into every reachable node that
// requires grad. Leaf grads persist across calls until explicitly zeroed.
void backward(const Var& scalar_root);

// Probability floor shared by every log-taking loss.
inline constexpr double kProbEps = 1e-7;

// ---- elementwise / scalar ----
Var constant(Tensor t);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var add_const(const Var& a, const Tensor& t);
Var sub_const(const Var& a, const Tensor& t);  // a - t
Var relu(const Var& a);
Var abs(const Var& a);
Var clamp(const Var& a, double lo, double hi);

// ---- reductions / shape ----
Var sum_all(const Var& a);   // -> [1]
Var mean_all(const Var& a);  // -> [1]
Var reshape(const Var& a, std::vector<int> shape);
Var select_last(const Var& a, int index);
Var stack_last(const std::vector<Var>& parts);
Var sum_last_range(const Var& a, int c0, int c1);
Var gather_rows(const Var& x, std::vector<int64_t> idx);
Var scatter_rows(const Var& rows, std::vector<int64_t> idx, int64_t m);
Var crop2d(const Var& x, int h, int w);
Var upsample2x_2d(const Var& x);
Var upsample2x_3d(const Var& x);
Var softmax(const Var& x, int axis);

// ---- dense layers ----
Var linear(const Var& x, const Var& w, const Var& b);
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var conv3d(const Var& x, const Var& w, const Var& b, int stride, int pad);

// ---- pipeline-specific ops ----
Var outer_lift(const Var& depth, const Var& ctx);
Var splat_mean(const Var& cells, std::vector<int64_t> cell_to_voxel, int64_t nvox);
Var densify_max(const Var& feats, std::vector<int64_t> point_to_voxel, int64_t nvox);
Var wap_pool(const Var& f, const Var& w, int axis);
Var gmp_pool(const Var& f, int axis);
Var broadcast_plane(const Var& plane, int axis, std::vector<int> dims3);
Var aggregate4(const Var& f, const Var& bxy, const Var& byz, const Var& bzx, const Var& w4);
Var trilinear_sample(const Var& vol, const Var& coords);
Var attn_combine(const Var& attn, const Var& values);
Var affinity(const Var& feat);

// ---- fused losses (teacher side enters as plain tensors: no grad path) ----
Var mean_cosine_rows(const Var& student, const Tensor& teacher);
// Mean-over-rows KL(student || teacher); `reverse` flips to KL(teacher || student).
Var kl_rows_mean(const Var& student, const Tensor& teacher, bool reverse = false);
Var weighted_ce(const Var& probs, const std::vector<int>& labels,
                const std::vector<double>& weights);
Var scal_loss_op(const Var& probs, const std::vector<int>& labels);

}  // namespace tpvocc::ad
