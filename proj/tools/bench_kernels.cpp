// Benchmark of the OpenMP kernels against the serial reference, on shapes the
// training pipeline actually runs. Also asserts forward outputs agree.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "tpvocc/kernels.hpp"
#include "tpvocc/tensor.hpp"

using namespace tpvocc;

namespace {

double time_ms(const std::function<void()>& fn, int repeat) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < repeat; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeat;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

struct Row {
  std::string name;
  double ref_ms, par_ms, diff;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serial-vs-OpenMP kernel benchmark"};
  int repeat = 5;
  int grid = 32, gz = 8, channels = 8, kplane = 1024;
  app.add_option("--repeat", repeat, "iterations per timing");
  app.add_option("--grid", grid, "grid X=Y dimension");
  app.add_option("--gz", gz, "grid Z dimension");
  app.add_option("--channels", channels, "feature channels");
  app.add_option("--kplane", kplane, "positions for the affinity kernel");
  CLI11_PARSE(app, argc, argv);

  Rng rng(7);
  std::vector<Row> rows;
  auto bench = [&](const std::string& name, Tensor& out_ref, Tensor& out_par,
                   const std::function<void()>& ref_fn, const std::function<void()>& par_fn) {
    const double r = time_ms(ref_fn, repeat);
    const double p = time_ms(par_fn, repeat);
    rows.push_back({name, r, p, max_abs_diff(out_ref, out_par)});
  };

  const int x = grid, y = grid, z = gz, c = channels;
  const int64_t nvox = (int64_t)x * y * z;

  {  // conv3d forward, k3 s1
    Tensor in = randn({x, y, z, c}, rng), w = randn({3, 3, 3, c, c}, rng), b = randn({c}, rng);
    Tensor o1({x, y, z, c}), o2({x, y, z, c});
    bench("conv3d_forward", o1, o2,
          [&] { kernels::ref::conv3d_forward(in.data(), x, y, z, c, w.data(), 3, c, b.data(), 1, 1, o1.data()); },
          [&] { kernels::par::conv3d_forward(in.data(), x, y, z, c, w.data(), 3, c, b.data(), 1, 1, o2.data()); });
  }
  {  // conv3d backward input
    Tensor gy = randn({x, y, z, c}, rng), w = randn({3, 3, 3, c, c}, rng);
    Tensor o1({x, y, z, c}), o2({x, y, z, c});
    bench("conv3d_bwd_input", o1, o2,
          [&] { kernels::ref::conv3d_backward_input(gy.data(), x, y, z, c, w.data(), 3, c, 1, 1, x, y, z, o1.data()); },
          [&] { kernels::par::conv3d_backward_input(gy.data(), x, y, z, c, w.data(), 3, c, 1, 1, x, y, z, o2.data()); });
  }
  {  // conv3d backward weight
    Tensor in = randn({x, y, z, c}, rng), gy = randn({x, y, z, c}, rng);
    Tensor w1({3, 3, 3, c, c}), w2({3, 3, 3, c, c}), b1({c}), b2({c});
    bench("conv3d_bwd_weight", w1, w2,
          [&] { kernels::ref::conv3d_backward_weight(in.data(), x, y, z, c, gy.data(), x, y, z, c, 3, 1, 1, w1.data(), b1.data()); },
          [&] { kernels::par::conv3d_backward_weight(in.data(), x, y, z, c, gy.data(), x, y, z, c, 3, 1, 1, w2.data(), b2.data()); });
  }
  {  // conv2d on the image trunk shape
    const int h = 48, wdt = 64, ci = 16, co = 16;
    Tensor in = randn({h, wdt, ci}, rng), w = randn({3, 3, ci, co}, rng), b = randn({co}, rng);
    Tensor o1({h, wdt, co}), o2({h, wdt, co});
    bench("conv2d_forward", o1, o2,
          [&] { kernels::ref::conv2d_forward(in.data(), h, wdt, ci, w.data(), 3, 3, co, b.data(), 1, 1, o1.data()); },
          [&] { kernels::par::conv2d_forward(in.data(), h, wdt, ci, w.data(), 3, 3, co, b.data(), 1, 1, o2.data()); });
  }
  {  // matmul on EVT-sized blocks
    const int m = 2048, k = 8, n = 48;
    Tensor a = randn({m, k}, rng), b = randn({k, n}, rng);
    Tensor o1({m, n}), o2({m, n});
    bench("matmul_nn", o1, o2,
          [&] { kernels::ref::matmul_nn(a.data(), m, k, b.data(), n, o1.data()); },
          [&] { kernels::par::matmul_nn(a.data(), m, k, b.data(), n, o2.data()); });
  }
  {  // weighted average pooling
    Tensor f = randn({x, y, z, c}, rng), w = rand_uniform({x, y, z}, rng);
    Tensor o1({x, y, c}), o2({x, y, c});
    bench("wap_pool(axis=z)", o1, o2,
          [&] { kernels::ref::wap_pool_forward(f.data(), x, y, z, c, w.data(), 2, o1.data()); },
          [&] { kernels::par::wap_pool_forward(f.data(), x, y, z, c, w.data(), 2, o2.data()); });
  }
  {  // aggregation
    Tensor f = randn({x, y, z, c}, rng), bxy = randn({x, y, z, c}, rng),
           byz = randn({x, y, z, c}, rng), bzx = randn({x, y, z, c}, rng);
    Tensor w = rand_uniform({x, y, z, 4}, rng);
    Tensor o1({x, y, z, c}), o2({x, y, z, c});
    bench("aggregate", o1, o2,
          [&] { kernels::ref::aggregate_forward(f.data(), bxy.data(), byz.data(), bzx.data(), w.data(), nvox, c, o1.data()); },
          [&] { kernels::par::aggregate_forward(f.data(), bxy.data(), byz.data(), bzx.data(), w.data(), nvox, c, o2.data()); });
  }
  {  // trilinear sampling at EVT scale
    const int64_t q = 16384;
    Tensor vol = randn({x, y, z, c}, rng);
    Tensor coords({(int)q, 3});
    for (int64_t i = 0; i < q; ++i) {
      coords[i * 3 + 0] = rng.uniform(0, x - 1);
      coords[i * 3 + 1] = rng.uniform(0, y - 1);
      coords[i * 3 + 2] = rng.uniform(0, z - 1);
    }
    Tensor o1({(int)q, c}), o2({(int)q, c});
    bench("trilinear", o1, o2,
          [&] { kernels::ref::trilinear_forward(vol.data(), x, y, z, c, coords.data(), q, o1.data()); },
          [&] { kernels::par::trilinear_forward(vol.data(), x, y, z, c, coords.data(), q, o2.data()); });
  }
  {  // affinity matrix (TRD hot spot)
    Tensor f = randn({kplane, c}, rng);
    Tensor o1({kplane, kplane}), o2({kplane, kplane});
    bench("affinity", o1, o2,
          [&] { kernels::ref::affinity_forward(f.data(), kplane, c, o1.data()); },
          [&] { kernels::par::affinity_forward(f.data(), kplane, c, o2.data()); });
  }

#ifdef _OPENMP
  printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
  printf("OpenMP: not available (parallel == reference)\n");
#endif
  printf("%-20s %12s %12s %9s %12s\n", "kernel", "ref ms", "omp ms", "speedup", "max |diff|");
  bool ok = true;
  for (const auto& r : rows) {
    printf("%-20s %12.3f %12.3f %8.2fx %12.3e\n", r.name.c_str(), r.ref_ms, r.par_ms,
           r.ref_ms / std::max(1e-9, r.par_ms), r.diff);
    if (r.diff != 0.0) ok = false;
  }
  if (!ok) {
    printf("FAIL: parallel kernels diverge from the serial reference\n");
    return 1;
  }
  return 0;
}
