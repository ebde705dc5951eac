#include "tpvocc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "tpvocc/kernels.hpp"

namespace tpvocc::ad {

namespace {
thread_local int g_no_grad_depth = 0;
}

bool grad_enabled() { return g_no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

Var::Var(Tensor value, bool requires_grad) {
  node_ = std::make_shared<Node>();
  node_->value = std::move(value);
  node_->requires_grad = requires_grad && grad_enabled();
}

Var constant(Tensor t) { return Var(std::move(t), false); }

namespace {

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bp) {
  bool track = grad_enabled();
  if (track) {
    track = false;
    for (const auto& p : parents)
      if (p.requires_grad()) {
        track = true;
        break;
      }
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (track) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(bp);
  }
  return Var::wrap(std::move(n));
}

inline bool wants(Node& self, size_t i) { return self.parents[i]->requires_grad; }
inline Tensor& pgrad(Node& self, size_t i) { return self.parents[i]->ensure_grad(); }

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.val().same_shape(b.val()))
    throw ConfigError(std::string(op) + ": shape mismatch");
}

}  // namespace

void backward(const Var& root) {
  if (!root.defined() || root.val().numel() != 1)
    throw ConfigError("backward: root must be a defined scalar");
  if (!root.requires_grad()) return;

  // Post-order DFS over parent links; reversing it yields a topological
  // order where every consumer is processed before its producer.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// ---------------- elementwise ----------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor y(a.val().shape());
  const int64_t n = y.numel();
  const double *pa = a.val().data(), *pb = b.val().data();
  for (int64_t i = 0; i < n; ++i) y[i] = pa[i] + pb[i];
  return make_op(std::move(y), {a, b}, [](Node& self) {
    const Tensor& g = self.grad;
    for (size_t k = 0; k < 2; ++k) {
      if (!wants(self, k)) continue;
      Tensor& gp = pgrad(self, k);
      for (int64_t i = 0; i < g.numel(); ++i) gp[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] - b.val()[i];
  return make_op(std::move(y), {a, b}, [](Node& self) {
    const Tensor& g = self.grad;
    if (wants(self, 0)) {
      Tensor& gp = pgrad(self, 0);
      for (int64_t i = 0; i < g.numel(); ++i) gp[i] += g[i];
    }
    if (wants(self, 1)) {
      Tensor& gp = pgrad(self, 1);
      for (int64_t i = 0; i < g.numel(); ++i) gp[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] * b.val()[i];
  return make_op(std::move(y), {a, b}, [](Node& self) {
    const Tensor& g = self.grad;
    const Tensor& va = self.parents[0]->value;
    const Tensor& vb = self.parents[1]->value;
    if (wants(self, 0)) {
      Tensor& gp = pgrad(self, 0);
      for (int64_t i = 0; i < g.numel(); ++i) gp[i] += g[i] * vb[i];
    }
    if (wants(self, 1)) {
      Tensor& gp = pgrad(self, 1);
      for (int64_t i = 0; i < g.numel(); ++i) gp[i] += g[i] * va[i];
    }
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] + s;
  return make_op(std::move(y), {a}, [](Node& self) {
    Tensor& gp = pgrad(self, 0);
    for (int64_t i = 0; i < self.grad.numel(); ++i) gp[i] += self.grad[i];
  });
}

Var mul_scalar(const Var& a, double s) {
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] * s;
  return make_op(std::move(y), {a}, [s](Node& self) {
    Tensor& gp = pgrad(self, 0);
    for (int64_t i = 0; i < self.grad.numel(); ++i) gp[i] += s * self.grad[i];
  });
}

Var add_const(const Var& a, const Tensor& t) {
  if (!a.val().same_shape(t)) throw ConfigError("add_const: shape mismatch");
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] + t[i];
  return make_op(std::move(y), {a}, [](Node& self) {
    Tensor& gp = pgrad(self, 0);
    for (int64_t i = 0; i < self.grad.numel(); ++i) gp[i] += self.grad[i];
  });
}

Var sub_const(const Var& a, const Tensor& t) {
  if (!a.val().same_shape(t)) throw ConfigError("sub_const: shape mismatch");
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] - t[i];
  return make_op(std::move(y), {a}, [](Node& self) {
    Tensor& gp = pgrad(self, 0);
    for (int64_t i = 0; i < self.grad.numel(); ++i) gp[i] += self.grad[i];
  });
}

Var relu(const Var& a) {
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] > 0.0 ? a.val()[i] : 0.0;
  return make_op(std::move(y), {a}, [](Node& self) {
    Tensor& gp = pgrad(self, 0);
    const Tensor& x = self.parents[0]->value;
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      if (x[i] > 0.0) gp[i] += self.grad[i];
  });
}

Var abs(const Var& a) {
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::fabs(a.val()[i]);
  return make_op(std::move(y), {a}, [](Node& self) {
    Tensor& gp = pgrad(self, 0);
    const Tensor& x = self.parents[0]->value;
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      gp[i] += (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0)) * self.grad[i];
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::clamp(a.val()[i], lo, hi);
  return make_op(std::move(y), {a}, [lo, hi](Node& self) {
    Tensor& gp = pgrad(self, 0);
    const Tensor& x = self.parents[0]->value;
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      if (x[i] > lo && x[i] < hi) gp[i] += self.grad[i];
  });
}

// ---------------- reductions / shape ----------------

Var sum_all(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.val().numel(); ++i) s += a.val()[i];
  return make_op(Tensor::scalar(s), {a}, [](Node& self) {
    Tensor& gp = pgrad(self, 0);
    const double g = self.grad[0];
    for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += g;
  });
}

Var mean_all(const Var& a) {
  const int64_t n = a.val().numel();
  if (n == 0) throw ConfigError("mean_all: empty tensor");
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a.val()[i];
  return make_op(Tensor::scalar(s / (double)n), {a}, [n](Node& self) {
    Tensor& gp = pgrad(self, 0);
    const double g = self.grad[0] / (double)n;
    for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += g;
  });
}

Var reshape(const Var& a, std::vector<int> shape) {
  Tensor y = a.val().reshaped(std::move(shape));
  return make_op(std::move(y), {a}, [](Node& self) {
    Tensor& gp = pgrad(self, 0);
    for (int64_t i = 0; i < self.grad.numel(); ++i) gp[i] += self.grad[i];
  });
}

Var select_last(const Var& a, int index) {
  const auto& sh = a.val().shape();
  const int k = sh.back();
  if (index < 0 || index >= k) throw ConfigError("select_last: index out of range");
  std::vector<int> osh(sh.begin(), sh.end() - 1);
  Tensor y(osh);
  const int64_t rows = y.numel();
  for (int64_t r = 0; r < rows; ++r) y[r] = a.val()[r * k + index];
  return make_op(std::move(y), {a}, [k, index](Node& self) {
    Tensor& gp = pgrad(self, 0);
    for (int64_t r = 0; r < self.grad.numel(); ++r) gp[r * k + index] += self.grad[r];
  });
}

Var stack_last(const std::vector<Var>& parts) {
  if (parts.empty()) throw ConfigError("stack_last: no inputs");
  const int k = (int)parts.size();
  const auto& sh = parts[0].val().shape();
  for (const auto& p : parts)
    if (!(p.val().shape() == sh)) throw ConfigError("stack_last: shape mismatch");
  std::vector<int> osh = sh;
  osh.push_back(k);
  Tensor y(osh);
  const int64_t rows = parts[0].val().numel();
  for (int j = 0; j < k; ++j)
    for (int64_t r = 0; r < rows; ++r) y[r * k + j] = parts[j].val()[r];
  return make_op(std::move(y), parts, [k](Node& self) {
    for (int j = 0; j < k; ++j) {
      if (!wants(self, (size_t)j)) continue;
      Tensor& gp = pgrad(self, (size_t)j);
      for (int64_t r = 0; r < gp.numel(); ++r) gp[r] += self.grad[r * k + j];
    }
  });
}

Var sum_last_range(const Var& a, int c0, int c1) {
  const auto& sh = a.val().shape();
  const int k = sh.back();
  if (c0 < 0 || c1 > k || c0 >= c1) throw ConfigError("sum_last_range: bad range");
  std::vector<int> osh(sh.begin(), sh.end() - 1);
  Tensor y(osh);
  for (int64_t r = 0; r < y.numel(); ++r) {
    double s = 0.0;
    for (int j = c0; j < c1; ++j) s += a.val()[r * k + j];
    y[r] = s;
  }
  return make_op(std::move(y), {a}, [k, c0, c1](Node& self) {
    Tensor& gp = pgrad(self, 0);
    for (int64_t r = 0; r < self.grad.numel(); ++r)
      for (int j = c0; j < c1; ++j) gp[r * k + j] += self.grad[r];
  });
}

Var gather_rows(const Var& x, std::vector<int64_t> idx) {
  const auto& sh = x.val().shape();
  if (sh.size() != 2) throw ConfigError("gather_rows: expects [M,C]");
  const int c = sh[1];
  Tensor y({(int)idx.size(), c});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int j = 0; j < c; ++j) y[(int64_t)r * c + j] = x.val()[idx[r] * c + j];
  return make_op(std::move(y), {x}, [idx = std::move(idx), c](Node& self) {
    Tensor& gp = pgrad(self, 0);
    for (size_t r = 0; r < idx.size(); ++r)
      for (int j = 0; j < c; ++j) gp[idx[r] * c + j] += self.grad[(int64_t)r * c + j];
  });
}

Var scatter_rows(const Var& rows, std::vector<int64_t> idx, int64_t m) {
  const auto& sh = rows.val().shape();
  if (sh.size() != 2 || sh[0] != (int)idx.size())
    throw ConfigError("scatter_rows: rows/index mismatch");
  const int c = sh[1];
  Tensor y({(int)m, c});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int j = 0; j < c; ++j) y[idx[r] * c + j] += rows.val()[(int64_t)r * c + j];
  return make_op(std::move(y), {rows}, [idx = std::move(idx), c](Node& self) {
    Tensor& gp = pgrad(self, 0);
    for (size_t r = 0; r < idx.size(); ++r)
      for (int j = 0; j < c; ++j) gp[(int64_t)r * c + j] += self.grad[idx[r] * c + j];
  });
}

Var crop2d(const Var& x, int h, int w) {
  const auto& sh = x.val().shape();
  if (sh.size() != 3) throw ConfigError("crop2d: expects [H,W,C]");
  const int hh = sh[0], ww = sh[1], c = sh[2];
  if (h > hh || w > ww) throw ConfigError("crop2d: crop larger than input");
  Tensor y({h, w, c});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int ch = 0; ch < c; ++ch) y.at(i, j, ch) = x.val().at(i, j, ch);
  return make_op(std::move(y), {x}, [h, w, ww, c](Node& self) {
    Tensor& gp = pgrad(self, 0);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int ch = 0; ch < c; ++ch)
          gp[((int64_t)i * ww + j) * c + ch] += self.grad[((int64_t)i * w + j) * c + ch];
  });
}

Var upsample2x_2d(const Var& x) {
  const auto& sh = x.val().shape();
  if (sh.size() != 3) throw ConfigError("upsample2x_2d: expects [H,W,C]");
  const int h = sh[0], w = sh[1], c = sh[2];
  Tensor y({2 * h, 2 * w, c});
  for (int i = 0; i < 2 * h; ++i)
    for (int j = 0; j < 2 * w; ++j)
      for (int ch = 0; ch < c; ++ch) y.at(i, j, ch) = x.val().at(i / 2, j / 2, ch);
  return make_op(std::move(y), {x}, [h, w, c](Node& self) {
    Tensor& gp = pgrad(self, 0);
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j)
        for (int ch = 0; ch < c; ++ch)
          gp[((int64_t)(i / 2) * w + (j / 2)) * c + ch] +=
              self.grad[((int64_t)i * (2 * w) + j) * c + ch];
  });
}

Var upsample2x_3d(const Var& x) {
  const auto& sh = x.val().shape();
  if (sh.size() != 4) throw ConfigError("upsample2x_3d: expects [X,Y,Z,C]");
  const int nx = sh[0], ny = sh[1], nz = sh[2], c = sh[3];
  Tensor y({2 * nx, 2 * ny, 2 * nz, c});
  for (int i = 0; i < 2 * nx; ++i)
    for (int j = 0; j < 2 * ny; ++j)
      for (int k = 0; k < 2 * nz; ++k)
        for (int ch = 0; ch < c; ++ch) y.at(i, j, k, ch) = x.val().at(i / 2, j / 2, k / 2, ch);
  return make_op(std::move(y), {x}, [nx, ny, nz, c](Node& self) {
    Tensor& gp = pgrad(self, 0);
    for (int i = 0; i < 2 * nx; ++i)
      for (int j = 0; j < 2 * ny; ++j)
        for (int k = 0; k < 2 * nz; ++k)
          for (int ch = 0; ch < c; ++ch)
            gp[(((int64_t)(i / 2) * ny + (j / 2)) * nz + (k / 2)) * c + ch] +=
                self.grad[(((int64_t)i * (2 * ny) + j) * (2 * nz) + k) * c + ch];
  });
}

Var softmax(const Var& x, int axis) {
  const auto& sh = x.val().shape();
  if (axis < 0 || axis >= (int)sh.size()) throw ConfigError("softmax: bad axis");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[i];
  for (int i = axis + 1; i < (int)sh.size(); ++i) inner *= sh[i];
  const int len = sh[axis];

  Tensor y(sh);
  const double* px = x.val().data();
  double* py = y.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      double mx = px[base];
      for (int l = 1; l < len; ++l) mx = std::max(mx, px[base + l * inner]);
      double denom = 0.0;
      for (int l = 0; l < len; ++l) {
        const double e = std::exp(px[base + l * inner] - mx);
        py[base + l * inner] = e;
        denom += e;
      }
      for (int l = 0; l < len; ++l) py[base + l * inner] /= denom;
    }

  Tensor ycopy = y;
  return make_op(std::move(y), {x}, [outer, inner, len, ycopy = std::move(ycopy)](Node& self) {
    Tensor& gp = pgrad(self, 0);
    const Tensor& g = self.grad;
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * len * inner + in;
        double dot = 0.0;
        for (int l = 0; l < len; ++l) dot += g[base + l * inner] * ycopy[base + l * inner];
        for (int l = 0; l < len; ++l)
          gp[base + l * inner] += ycopy[base + l * inner] * (g[base + l * inner] - dot);
      }
  });
}

// ---------------- dense layers ----------------

Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& xs = x.val().shape();
  const auto& ws = w.val().shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0])
    throw ConfigError("linear: shape mismatch");
  const int m = xs[0], k = xs[1], n = ws[1];
  Tensor y({m, n});
  kernels::matmul_nn(x.val().data(), m, k, w.val().data(), n, y.data());
  if (b.defined()) {
    if (b.val().numel() != n) throw ConfigError("linear: bias size mismatch");
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) y.at(i, j) += b.val()[j];
  }
  std::vector<Var> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return make_op(std::move(y), std::move(parents), [m, k, n](Node& self) {
    const Tensor& g = self.grad;
    const Tensor& xv = self.parents[0]->value;
    const Tensor& wv = self.parents[1]->value;
    if (wants(self, 0)) {
      Tensor gx({m, k});
      kernels::matmul_nt(g.data(), m, n, wv.data(), k, gx.data());
      Tensor& gp = pgrad(self, 0);
      for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += gx[i];
    }
    if (wants(self, 1)) {
      Tensor gw({k, n});
      kernels::matmul_tn(xv.data(), m, k, g.data(), n, gw.data());
      Tensor& gp = pgrad(self, 1);
      for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += gw[i];
    }
    if (self.parents.size() > 2 && wants(self, 2)) {
      Tensor& gp = pgrad(self, 2);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gp[j] += g[(int64_t)i * n + j];
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const auto& xs = x.val().shape();
  const auto& ws = w.val().shape();
  if (xs.size() != 3 || ws.size() != 4 || xs[2] != ws[2])
    throw ConfigError("conv2d: shape mismatch");
  const int h = xs[0], wd = xs[1], ci = xs[2];
  const int kh = ws[0], kw = ws[1], co = ws[3];
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ConfigError("conv2d: output would be empty");
  Tensor y({ho, wo, co});
  kernels::conv2d_forward(x.val().data(), h, wd, ci, w.val().data(), kh, kw, co,
                          b.defined() ? b.val().data() : nullptr, stride, pad, y.data());
  std::vector<Var> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return make_op(std::move(y), std::move(parents),
                 [h, wd, ci, kh, kw, co, ho, wo, stride, pad](Node& self) {
                   const Tensor& g = self.grad;
                   const Tensor& xv = self.parents[0]->value;
                   const Tensor& wv = self.parents[1]->value;
                   if (wants(self, 0)) {
                     Tensor gx({h, wd, ci});
                     kernels::conv2d_backward_input(g.data(), ho, wo, co, wv.data(), kh, kw, ci,
                                                    stride, pad, h, wd, gx.data());
                     Tensor& gp = pgrad(self, 0);
                     for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += gx[i];
                   }
                   if (wants(self, 1)) {
                     Tensor gw({kh, kw, ci, co});
                     Tensor gb({co});
                     kernels::conv2d_backward_weight(xv.data(), h, wd, ci, g.data(), ho, wo, co,
                                                     kh, kw, stride, pad, gw.data(), gb.data());
                     Tensor& gp = pgrad(self, 1);
                     for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += gw[i];
                     if (self.parents.size() > 2 && wants(self, 2)) {
                       Tensor& gpb = pgrad(self, 2);
                       for (int i = 0; i < co; ++i) gpb[i] += gb[i];
                     }
                   }
                 });
}

Var conv3d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const auto& xs = x.val().shape();
  const auto& ws = w.val().shape();
  if (xs.size() != 4 || ws.size() != 5 || xs[3] != ws[3])
    throw ConfigError("conv3d: shape mismatch");
  const int nx = xs[0], ny = xs[1], nz = xs[2], ci = xs[3];
  const int k = ws[0], co = ws[4];
  const int ox = (nx + 2 * pad - k) / stride + 1;
  const int oy = (ny + 2 * pad - k) / stride + 1;
  const int oz = (nz + 2 * pad - k) / stride + 1;
  if (ox <= 0 || oy <= 0 || oz <= 0) throw ConfigError("conv3d: output would be empty");
  Tensor y({ox, oy, oz, co});
  kernels::conv3d_forward(x.val().data(), nx, ny, nz, ci, w.val().data(), k, co,
                          b.defined() ? b.val().data() : nullptr, stride, pad, y.data());
  std::vector<Var> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return make_op(std::move(y), std::move(parents),
                 [nx, ny, nz, ci, k, co, ox, oy, oz, stride, pad](Node& self) {
                   const Tensor& g = self.grad;
                   const Tensor& xv = self.parents[0]->value;
                   const Tensor& wv = self.parents[1]->value;
                   if (wants(self, 0)) {
                     Tensor gx({nx, ny, nz, ci});
                     kernels::conv3d_backward_input(g.data(), ox, oy, oz, co, wv.data(), k, ci,
                                                    stride, pad, nx, ny, nz, gx.data());
                     Tensor& gp = pgrad(self, 0);
                     for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += gx[i];
                   }
                   if (wants(self, 1)) {
                     Tensor gw({k, k, k, ci, co});
                     Tensor gb({co});
                     kernels::conv3d_backward_weight(xv.data(), nx, ny, nz, ci, g.data(), ox, oy,
                                                     oz, co, k, stride, pad, gw.data(), gb.data());
                     Tensor& gp = pgrad(self, 1);
                     for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += gw[i];
                     if (self.parents.size() > 2 && wants(self, 2)) {
                       Tensor& gpb = pgrad(self, 2);
                       for (int i = 0; i < co; ++i) gpb[i] += gb[i];
                     }
                   }
                 });
}

// ---------------- pipeline ops ----------------

Var outer_lift(const Var& depth, const Var& ctx) {
  const auto& ds = depth.val().shape();
  const auto& cs = ctx.val().shape();
  if (ds.size() != 3 || cs.size() != 3 || ds[0] != cs[0] || ds[1] != cs[1])
    throw ConfigError("outer_lift: shape mismatch");
  const int h = ds[0], w = ds[1], nb = ds[2], c = cs[2];
  Tensor y({h, w, nb, c});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int b = 0; b < nb; ++b)
        for (int ch = 0; ch < c; ++ch)
          y.at(i, j, b, ch) = depth.val().at(i, j, b) * ctx.val().at(i, j, ch);
  return make_op(std::move(y), {depth, ctx}, [h, w, nb, c](Node& self) {
    const Tensor& g = self.grad;
    const Tensor& dv = self.parents[0]->value;
    const Tensor& cv = self.parents[1]->value;
    auto gi = [&](int i, int j, int b, int ch) {
      return ((((int64_t)i * w + j) * nb + b) * c + ch);
    };
    if (wants(self, 0)) {
      Tensor& gp = pgrad(self, 0);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          for (int b = 0; b < nb; ++b) {
            double acc = 0.0;
            for (int ch = 0; ch < c; ++ch)
              acc += g[gi(i, j, b, ch)] * cv[((int64_t)i * w + j) * c + ch];
            gp[((int64_t)i * w + j) * nb + b] += acc;
          }
    }
    if (wants(self, 1)) {
      Tensor& gp = pgrad(self, 1);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          for (int ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (int b = 0; b < nb; ++b)
              acc += g[gi(i, j, b, ch)] * dv[((int64_t)i * w + j) * nb + b];
            gp[((int64_t)i * w + j) * c + ch] += acc;
          }
    }
  });
}

namespace {
// CSR over voxels from a per-item voxel id list (-1 = dropped item).
struct VoxelCsr {
  std::vector<int64_t> off, item, count;
};
VoxelCsr build_csr(const std::vector<int64_t>& ids, int64_t nvox) {
  VoxelCsr csr;
  csr.count.assign((size_t)nvox, 0);
  for (int64_t v : ids)
    if (v >= 0) ++csr.count[(size_t)v];
  csr.off.assign((size_t)nvox + 1, 0);
  for (int64_t v = 0; v < nvox; ++v) csr.off[(size_t)v + 1] = csr.off[(size_t)v] + csr.count[(size_t)v];
  csr.item.resize((size_t)csr.off[(size_t)nvox]);
  std::vector<int64_t> cur(csr.off.begin(), csr.off.end() - 1);
  for (size_t i = 0; i < ids.size(); ++i)
    if (ids[i] >= 0) csr.item[(size_t)cur[(size_t)ids[i]]++] = (int64_t)i;
  return csr;
}
}  // namespace

Var splat_mean(const Var& cells, std::vector<int64_t> cell_to_voxel, int64_t nvox) {
  const auto& sh = cells.val().shape();
  if (sh.size() != 2 || (int64_t)cell_to_voxel.size() != sh[0])
    throw ConfigError("splat_mean: cells/index mismatch");
  const int c = sh[1];
  auto csr = std::make_shared<VoxelCsr>(build_csr(cell_to_voxel, nvox));
  Tensor y({(int)nvox, c});
  kernels::splat_forward(cells.val().data(), sh[0], c, csr->off.data(), csr->item.data(), nvox,
                         y.data());
  return make_op(std::move(y), {cells},
                 [c, nvox, csr, ids = std::move(cell_to_voxel)](Node& self) {
                   Tensor& gp = pgrad(self, 0);
                   kernels::splat_backward(self.grad.data(), c, ids.data(), csr->count.data(),
                                           (int64_t)ids.size(), gp.data());
                 });
}

Var densify_max(const Var& feats, std::vector<int64_t> point_to_voxel, int64_t nvox) {
  const auto& sh = feats.val().shape();
  if (sh.size() != 2 || (int64_t)point_to_voxel.size() != sh[0])
    throw ConfigError("densify_max: feats/index mismatch");
  const int c = sh[1];
  auto csr = std::make_shared<VoxelCsr>(build_csr(point_to_voxel, nvox));
  Tensor y({(int)nvox, c});
  auto argmax = std::make_shared<std::vector<int64_t>>((size_t)(nvox * c));
  kernels::densify_forward(feats.val().data(), c, csr->off.data(), csr->item.data(), nvox,
                           y.data(), argmax->data());
  return make_op(std::move(y), {feats}, [c, nvox, argmax](Node& self) {
    Tensor& gp = pgrad(self, 0);
    kernels::densify_backward(self.grad.data(), c, argmax->data(), nvox, gp.data());
  });
}

namespace {
std::vector<int> plane_shape(const std::vector<int>& dims3, int c, int axis) {
  switch (axis) {
    case 0:
      return {dims3[1], dims3[2], c};
    case 1:
      return {dims3[0], dims3[2], c};
    case 2:
      return {dims3[0], dims3[1], c};
    default:
      throw ConfigError("pool: axis must be 0, 1 or 2");
  }
}
}  // namespace

Var wap_pool(const Var& f, const Var& w, int axis) {
  const auto& fs = f.val().shape();
  if (fs.size() != 4) throw ConfigError("wap_pool: expects [X,Y,Z,C] volume");
  const auto& ws = w.val().shape();
  if (ws.size() != 3 || ws[0] != fs[0] || ws[1] != fs[1] || ws[2] != fs[2])
    throw ConfigError("wap_pool: weight shape mismatch");
  const int nx = fs[0], ny = fs[1], nz = fs[2], c = fs[3];
  Tensor y(plane_shape({nx, ny, nz}, c, axis));
  kernels::wap_pool_forward(f.val().data(), nx, ny, nz, c, w.val().data(), axis, y.data());
  return make_op(std::move(y), {f, w}, [nx, ny, nz, c, axis](Node& self) {
    const Tensor& fv = self.parents[0]->value;
    const Tensor& wv = self.parents[1]->value;
    Tensor gf({nx, ny, nz, c});
    Tensor gw({nx, ny, nz});
    kernels::wap_pool_backward(fv.data(), nx, ny, nz, c, wv.data(), axis, self.grad.data(),
                               gf.data(), gw.data());
    if (wants(self, 0)) {
      Tensor& gp = pgrad(self, 0);
      for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += gf[i];
    }
    if (wants(self, 1)) {
      Tensor& gp = pgrad(self, 1);
      for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += gw[i];
    }
  });
}

Var gmp_pool(const Var& f, int axis) {
  const auto& fs = f.val().shape();
  if (fs.size() != 4) throw ConfigError("gmp_pool: expects [X,Y,Z,C] volume");
  const int nx = fs[0], ny = fs[1], nz = fs[2], c = fs[3];
  Tensor y(plane_shape({nx, ny, nz}, c, axis));
  auto argmax = std::make_shared<std::vector<int>>((size_t)y.numel());
  kernels::gmp_pool_forward(f.val().data(), nx, ny, nz, c, axis, y.data(), argmax->data());
  return make_op(std::move(y), {f}, [nx, ny, nz, c, axis, argmax](Node& self) {
    Tensor& gp = pgrad(self, 0);
    kernels::gmp_pool_backward(argmax->data(), nx, ny, nz, c, axis, self.grad.data(), gp.data());
  });
}

Var broadcast_plane(const Var& plane, int axis, std::vector<int> dims3) {
  if (dims3.size() != 3) throw ConfigError("broadcast_plane: dims3 must have 3 entries");
  const auto& ps = plane.val().shape();
  if (ps.size() != 3) throw ConfigError("broadcast_plane: expects [A,B,C] plane");
  const int c = ps[2];
  if (plane_shape(dims3, c, axis) != ps) throw ConfigError("broadcast_plane: plane/grid mismatch");
  const int nx = dims3[0], ny = dims3[1], nz = dims3[2];
  Tensor y({nx, ny, nz, c});
  kernels::broadcast_forward(plane.val().data(), nx, ny, nz, c, axis, y.data());
  return make_op(std::move(y), {plane}, [nx, ny, nz, c, axis](Node& self) {
    Tensor& gp = pgrad(self, 0);
    kernels::broadcast_backward(self.grad.data(), nx, ny, nz, c, axis, gp.data());
  });
}

Var aggregate4(const Var& f, const Var& bxy, const Var& byz, const Var& bzx, const Var& w4) {
  const auto& fs = f.val().shape();
  if (fs.size() != 4) throw ConfigError("aggregate4: expects [X,Y,Z,C] volumes");
  check_same_shape(f, bxy, "aggregate4");
  check_same_shape(f, byz, "aggregate4");
  check_same_shape(f, bzx, "aggregate4");
  const auto& ws = w4.val().shape();
  if (ws.size() != 4 || ws[0] != fs[0] || ws[1] != fs[1] || ws[2] != fs[2] || ws[3] != 4)
    throw ConfigError("aggregate4: weight shape mismatch");
  const int64_t nvox = (int64_t)fs[0] * fs[1] * fs[2];
  const int c = fs[3];
  Tensor y(fs);
  kernels::aggregate_forward(f.val().data(), bxy.val().data(), byz.val().data(),
                             bzx.val().data(), w4.val().data(), nvox, c, y.data());
  return make_op(std::move(y), {f, bxy, byz, bzx, w4}, [nvox, c, fs](Node& self) {
    Tensor gf(fs), gxy(fs), gyz(fs), gzx(fs);
    Tensor gw({fs[0], fs[1], fs[2], 4});
    kernels::aggregate_backward(self.parents[0]->value.data(), self.parents[1]->value.data(),
                                self.parents[2]->value.data(), self.parents[3]->value.data(),
                                self.parents[4]->value.data(), nvox, c, self.grad.data(),
                                gf.data(), gxy.data(), gyz.data(), gzx.data(), gw.data());
    const Tensor* gs[5] = {&gf, &gxy, &gyz, &gzx, &gw};
    for (size_t k = 0; k < 5; ++k) {
      if (!wants(self, k)) continue;
      Tensor& gp = pgrad(self, k);
      for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += (*gs[k])[i];
    }
  });
}

Var trilinear_sample(const Var& vol, const Var& coords) {
  const auto& vs = vol.val().shape();
  const auto& cs = coords.val().shape();
  if (vs.size() != 4 || cs.size() != 2 || cs[1] != 3)
    throw ConfigError("trilinear_sample: expects [X,Y,Z,C] and [Q,3]");
  const int nx = vs[0], ny = vs[1], nz = vs[2], c = vs[3];
  const int64_t q = cs[0];
  Tensor y({(int)q, c});
  kernels::trilinear_forward(vol.val().data(), nx, ny, nz, c, coords.val().data(), q, y.data());
  return make_op(std::move(y), {vol, coords}, [nx, ny, nz, c, q](Node& self) {
    const Tensor& vv = self.parents[0]->value;
    const Tensor& cv = self.parents[1]->value;
    const bool wv = wants(self, 0), wc = wants(self, 1);
    kernels::trilinear_backward(vv.data(), nx, ny, nz, c, cv.data(), q, self.grad.data(),
                                wv ? pgrad(self, 0).data() : nullptr,
                                wc ? pgrad(self, 1).data() : nullptr);
  });
}

Var attn_combine(const Var& attn, const Var& values) {
  const auto& as = attn.val().shape();
  const auto& vs = values.val().shape();
  if (as.size() != 3 || vs.size() != 4 || as[0] != vs[0] || as[1] != vs[1] || as[2] != vs[2])
    throw ConfigError("attn_combine: shape mismatch");
  const int q = as[0], h = as[1], k = as[2], c = vs[3];
  Tensor y({q, h * c});
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < h; ++j)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int s = 0; s < k; ++s) acc += attn.val().at(i, j, s) * values.val().at(i, j, s, ch);
        y.at(i, j * c + ch) = acc;
      }
  return make_op(std::move(y), {attn, values}, [q, h, k, c](Node& self) {
    const Tensor& g = self.grad;
    const Tensor& av = self.parents[0]->value;
    const Tensor& vv = self.parents[1]->value;
    if (wants(self, 0)) {
      Tensor& gp = pgrad(self, 0);
      for (int i = 0; i < q; ++i)
        for (int j = 0; j < h; ++j)
          for (int s = 0; s < k; ++s) {
            double acc = 0.0;
            for (int ch = 0; ch < c; ++ch)
              acc += g[((int64_t)i * h + j) * c + ch] *
                     vv[(((int64_t)i * h + j) * k + s) * c + ch];
            gp[((int64_t)i * h + j) * k + s] += acc;
          }
    }
    if (wants(self, 1)) {
      Tensor& gp = pgrad(self, 1);
      for (int i = 0; i < q; ++i)
        for (int j = 0; j < h; ++j)
          for (int s = 0; s < k; ++s) {
            const double a = av[((int64_t)i * h + j) * k + s];
            for (int ch = 0; ch < c; ++ch)
              gp[(((int64_t)i * h + j) * k + s) * c + ch] +=
                  a * g[((int64_t)i * h + j) * c + ch];
          }
    }
  });
}

Var affinity(const Var& feat) {
  const auto& fs = feat.val().shape();
  if (fs.size() != 2) throw ConfigError("affinity: expects [K,C]");
  const int64_t k = fs[0];
  const int c = fs[1];
  if (k < 1) throw ConfigError("affinity: needs at least one position");
  Tensor y({(int)k, (int)k});
  kernels::affinity_forward(feat.val().data(), k, c, y.data());
  return make_op(std::move(y), {feat}, [k, c](Node& self) {
    Tensor gf({(int)k, c});
    kernels::affinity_backward(self.parents[0]->value.data(), k, c, self.grad.data(), gf.data());
    Tensor& gp = pgrad(self, 0);
    for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += gf[i];
  });
}

// ---------------- fused losses ----------------

Var mean_cosine_rows(const Var& student, const Tensor& teacher) {
  const auto& ss = student.val().shape();
  if (ss.size() != 2 || !student.val().same_shape(teacher))
    throw ConfigError("mean_cosine_rows: shape mismatch");
  const int64_t m = ss[0];
  const int c = ss[1];
  if (m == 0) throw ConfigError("mean_cosine_rows: empty feature map");
  double total = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    double ns = 0.0, nt = 0.0, dot = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double s = student.val()[i * c + ch], t = teacher[i * c + ch];
      ns += s * s;
      nt += t * t;
      dot += s * t;
    }
    if (ns > 0.0 && nt > 0.0) total += dot / (std::sqrt(ns) * std::sqrt(nt));
  }
  Tensor tcopy = teacher;
  return make_op(Tensor::scalar(total / (double)m), {student},
                 [m, c, tcopy = std::move(tcopy)](Node& self) {
                   const double g = self.grad[0] / (double)m;
                   const Tensor& sv = self.parents[0]->value;
                   Tensor& gp = pgrad(self, 0);
                   for (int64_t i = 0; i < m; ++i) {
                     double ns = 0.0, nt = 0.0, dot = 0.0;
                     for (int ch = 0; ch < c; ++ch) {
                       const double s = sv[i * c + ch], t = tcopy[i * c + ch];
                       ns += s * s;
                       nt += t * t;
                       dot += s * t;
                     }
                     if (ns == 0.0 || nt == 0.0) continue;
                     const double inv = 1.0 / (std::sqrt(ns) * std::sqrt(nt));
                     const double cosv = dot * inv;
                     for (int ch = 0; ch < c; ++ch)
                       gp[i * c + ch] +=
                           g * (tcopy[i * c + ch] * inv - cosv * sv[i * c + ch] / ns);
                   }
                 });
}

Var kl_rows_mean(const Var& student, const Tensor& teacher, bool reverse) {
  const auto& ss = student.val().shape();
  if (ss.size() != 2 || !student.val().same_shape(teacher))
    throw ConfigError("kl_rows_mean: shape mismatch");
  const int64_t v = ss[0];
  const int k = ss[1];
  if (v == 0) throw ConfigError("kl_rows_mean: empty input");
  const double lo = kProbEps, hi = 1.0 - kProbEps;
  double total = 0.0;
  for (int64_t i = 0; i < v * k; ++i) {
    const double s = std::clamp(student.val()[i], lo, hi);
    const double t = std::clamp(teacher[i], lo, hi);
    total += reverse ? t * std::log(t / s) : s * std::log(s / t);
  }
  Tensor tcopy = teacher;
  return make_op(Tensor::scalar(total / (double)v), {student},
                 [v, k, lo, hi, reverse, tcopy = std::move(tcopy)](Node& self) {
                   const double g = self.grad[0] / (double)v;
                   const Tensor& sv = self.parents[0]->value;
                   Tensor& gp = pgrad(self, 0);
                   for (int64_t i = 0; i < v * k; ++i) {
                     const double raw = sv[i];
                     if (raw <= lo || raw >= hi) continue;
                     const double t = std::clamp(tcopy[i], lo, hi);
                     gp[i] += reverse ? -g * t / raw : g * (std::log(raw / t) + 1.0);
                   }
                 });
}

Var weighted_ce(const Var& probs, const std::vector<int>& labels,
                const std::vector<double>& weights) {
  const auto& ps = probs.val().shape();
  if (ps.size() != 2 || (int64_t)labels.size() != ps[0])
    throw ConfigError("weighted_ce: probs/labels mismatch");
  const int k = ps[1];
  if ((int)weights.size() != k) throw ConfigError("weighted_ce: weights size mismatch");
  const double lo = kProbEps, hi = 1.0 - kProbEps;
  double total = 0.0;
  int64_t n_valid = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y == 255) continue;
    if (y < 0 || y >= k) throw DataError("weighted_ce: label out of range");
    const double p = std::clamp(probs.val()[(int64_t)i * k + y], lo, hi);
    total += -weights[(size_t)y] * std::log(p);
    ++n_valid;
  }
  if (n_valid == 0) throw DataError("weighted_ce: no valid voxels (all labels are the 255 sentinel)");
  return make_op(Tensor::scalar(total / (double)n_valid), {probs},
                 [labels, weights, k, lo, hi, n_valid](Node& self) {
                   const double g = self.grad[0] / (double)n_valid;
                   const Tensor& pv = self.parents[0]->value;
                   Tensor& gp = pgrad(self, 0);
                   for (size_t i = 0; i < labels.size(); ++i) {
                     const int y = labels[i];
                     if (y == 255) continue;
                     const double p = pv[(int64_t)i * k + y];
                     if (p <= lo || p >= hi) continue;
                     gp[(int64_t)i * k + y] += -g * weights[(size_t)y] / p;
                   }
                 });
}

Var scal_loss_op(const Var& probs, const std::vector<int>& labels) {
  const auto& ps = probs.val().shape();
  if (ps.size() != 2 || (int64_t)labels.size() != ps[0])
    throw ConfigError("scal_loss: probs/labels mismatch");
  const int k = ps[1];
  const double lo = kProbEps;

  // Per-class soft precision / recall / specificity over valid voxels.
  std::vector<double> a(k, 0.0), b(k, 0.0), s_num(k, 0.0);
  std::vector<int64_t> n(k, 0);
  int64_t n_valid = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y == 255) continue;
    if (y < 0 || y >= k) throw DataError("scal_loss: label out of range");
    ++n_valid;
    ++n[(size_t)y];
    for (int c = 0; c < k; ++c) {
      const double p = probs.val()[(int64_t)i * k + c];
      b[(size_t)c] += p;
      if (y == c)
        a[(size_t)c] += p;
      else
        s_num[(size_t)c] += 1.0 - p;
    }
  }
  if (n_valid == 0) throw DataError("scal_loss: no class present (all labels invalid)");

  int present = 0;
  double total = 0.0;
  auto clamped_log = [&](double x) { return std::log(std::clamp(x, lo, 1.0)); };
  for (int c = 0; c < k; ++c) {
    if (n[(size_t)c] == 0) continue;
    ++present;
    double term = clamped_log(a[(size_t)c] / b[(size_t)c]) +
                  clamped_log(a[(size_t)c] / (double)n[(size_t)c]);
    const int64_t m = n_valid - n[(size_t)c];
    if (m > 0) term += clamped_log(s_num[(size_t)c] / (double)m);
    total += term;
  }
  const double loss = -total / (double)present;

  return make_op(
      Tensor::scalar(loss), {probs},
      [labels, k, lo, a, b, s_num, n, n_valid, present](Node& self) {
        const double g = -self.grad[0] / (double)present;
        const Tensor& pv = self.parents[0]->value;
        Tensor& gp = pgrad(self, 0);
        for (int c = 0; c < k; ++c) {
          if (n[(size_t)c] == 0) continue;
          const double ac = a[(size_t)c], bc = b[(size_t)c];
          const int64_t m = n_valid - n[(size_t)c];
          const bool prec_live = (ac / bc) > lo && ac > 0.0;
          const bool rec_live = (ac / (double)n[(size_t)c]) > lo && ac > 0.0;
          const bool spec_live = m > 0 && (s_num[(size_t)c] / (double)m) > lo;
          for (size_t i = 0; i < labels.size(); ++i) {
            const int y = labels[i];
            if (y == 255) continue;
            double d = 0.0;
            if (y == c) {
              if (prec_live) d += 1.0 / ac - 1.0 / bc;
              if (rec_live) d += 1.0 / ac;
            } else {
              if (prec_live) d += -1.0 / bc;
              if (spec_live) d += -1.0 / s_num[(size_t)c];
            }
            if (d != 0.0) gp[(int64_t)i * k + c] += g * d;
          }
        }
      });
}

}  // namespace tpvocc::ad
