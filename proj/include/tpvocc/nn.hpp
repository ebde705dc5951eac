#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tpvocc/autodiff.hpp"
#include "tpvocc/common.hpp"
#include "tpvocc/tensor.hpp"

namespace tpvocc::nn {

// Named parameter registry. Registration order is the checkpoint layout, so
// modules must construct in a fixed order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ad::Var var;
  };

  ad::Var add(const std::string& name, Tensor init) {
    for (const auto& e : entries_)
      if (e.name == name) throw ConfigError("ParamStore: duplicate parameter '" + name + "'");
    entries_.push_back({name, ad::Var(std::move(init), /*requires_grad=*/true)});
    return entries_.back().var;
  }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  const ad::Var* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e.var;
    return nullptr;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.grad().fill(0.0);
  }
  void freeze() {
    for (auto& e : entries_) e.var.node()->requires_grad = false;
  }
  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.var.val().numel();
    return n;
  }

 private:
  std::vector<Entry> entries_;
};

inline Tensor he_init(std::vector<int> shape, int64_t fan_in, Rng& rng) {
  return randn(std::move(shape), rng, std::sqrt(2.0 / (double)fan_in));
}

struct Linear {
  ad::Var w, b;

  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng,
         bool zero_init = false) {
    Tensor wt = zero_init ? Tensor::zeros({in, out}) : he_init({in, out}, in, rng);
    w = ps.add(prefix + ".w", std::move(wt));
    b = ps.add(prefix + ".b", Tensor::zeros({out}));
  }
  ad::Var forward(const ad::Var& x) const { return ad::linear(x, w, b); }
};

struct Conv2d {
  ad::Var w, b;
  int stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& prefix, int in, int out, int k, int stride_, int pad_,
         Rng& rng, bool zero_init = false)
      : stride(stride_), pad(pad_) {
    const int64_t fan_in = (int64_t)k * k * in;
    Tensor wt = zero_init ? Tensor::zeros({k, k, in, out}) : he_init({k, k, in, out}, fan_in, rng);
    w = ps.add(prefix + ".w", std::move(wt));
    b = ps.add(prefix + ".b", Tensor::zeros({out}));
  }
  ad::Var forward(const ad::Var& x) const { return ad::conv2d(x, w, b, stride, pad); }
};

struct Conv3d {
  ad::Var w, b;
  int stride = 1, pad = 1;

  Conv3d() = default;
  Conv3d(ParamStore& ps, const std::string& prefix, int in, int out, int k, int stride_, int pad_,
         Rng& rng, bool zero_init = false)
      : stride(stride_), pad(pad_) {
    const int64_t fan_in = (int64_t)k * k * k * in;
    Tensor wt =
        zero_init ? Tensor::zeros({k, k, k, in, out}) : he_init({k, k, k, in, out}, fan_in, rng);
    w = ps.add(prefix + ".w", std::move(wt));
    b = ps.add(prefix + ".b", Tensor::zeros({out}));
  }
  ad::Var forward(const ad::Var& x) const { return ad::conv3d(x, w, b, stride, pad); }
};

// AdamW with cosine-annealed learning rate over a fixed step budget.
class AdamW {
 public:
  AdamW() = default;
  AdamW(ParamStore& store, double lr_max, double weight_decay, int64_t total_steps)
      : store_(&store), lr_max_(lr_max), weight_decay_(weight_decay), total_steps_(total_steps) {
    for (auto& e : store.entries()) {
      m_.push_back(Tensor(e.var.val().shape()));
      v_.push_back(Tensor(e.var.val().shape()));
    }
  }

  double current_lr() const {
    const double t = std::min((double)step_, (double)total_steps_);
    const double frac = total_steps_ > 0 ? t / (double)total_steps_ : 0.0;
    return lr_max_ * 0.5 * (1.0 + std::cos(M_PI * frac));
  }

  void step() {
    const double lr = current_lr();
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, (double)step_);
    const double bc2 = 1.0 - std::pow(beta2_, (double)step_);
    auto& entries = store_->entries();
    for (size_t p = 0; p < entries.size(); ++p) {
      Tensor& param = entries[p].var.node()->value;
      Tensor& grad = entries[p].var.grad();
      Tensor& m = m_[p];
      Tensor& v = v_[p];
      for (int64_t i = 0; i < param.numel(); ++i) {
        const double g = grad[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * param[i]);
      }
    }
  }

  int64_t step_count() const { return step_; }
  int64_t total_steps() const { return total_steps_; }
  std::vector<Tensor>& moments_m() { return m_; }
  std::vector<Tensor>& moments_v() { return v_; }
  void set_step_count(int64_t s) { step_ = s; }

 private:
  ParamStore* store_ = nullptr;
  double lr_max_ = 2e-4, weight_decay_ = 1e-2;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t total_steps_ = 0, step_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace tpvocc::nn
