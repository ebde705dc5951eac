#include <algorithm>
#include <cmath>
#include <vector>

#include "tpvocc/kernels.hpp"

// OpenMP kernels. Parallelism is always over independent outputs with serial
// inner accumulation, so results are bit-identical to the reference kernels
// and independent of the thread count. Inner loops are restructured for
// contiguous access (accumulator array over the trailing channel), which
// keeps each output's accumulation order identical to the reference.

namespace tpvocc::kernels::par {

void matmul_nn(const double* a, int m, int k, const double* b, int n, double* c) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* crow = c + (int64_t)i * n;
    for (int j = 0; j < n; ++j) crow[j] = 0.0;
    const double* arow = a + (int64_t)i * k;
    for (int t = 0; t < k; ++t) {
      const double av = arow[t];
      const double* brow = b + (int64_t)t * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt(const double* a, int m, int k, const double* b, int n, double* c) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += a[(int64_t)i * k + t] * b[(int64_t)j * k + t];
      c[(int64_t)i * n + j] = acc;
    }
  }
}

void matmul_tn(const double* a, int m, int k, const double* b, int n, double* c) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < m; ++t) acc += a[(int64_t)t * k + i] * b[(int64_t)t * n + j];
      c[(int64_t)i * n + j] = acc;
    }
  }
}

void conv2d_forward(const double* x, int h, int w, int ci, const double* wgt, int kh, int kw,
                    int co, const double* bias, int stride, int pad, double* y) {
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (w + 2 * pad - kw) / stride + 1;
#pragma omp parallel for collapse(2) schedule(static)
  for (int oi = 0; oi < ho; ++oi) {
    for (int oj = 0; oj < wo; ++oj) {
      double* acc = y + ((int64_t)oi * wo + oj) * co;
      for (int oc = 0; oc < co; ++oc) acc[oc] = bias ? bias[oc] : 0.0;
      for (int ki = 0; ki < kh; ++ki) {
        const int ii = oi * stride + ki - pad;
        if (ii < 0 || ii >= h) continue;
        for (int kj = 0; kj < kw; ++kj) {
          const int jj = oj * stride + kj - pad;
          if (jj < 0 || jj >= w) continue;
          const double* xp = x + ((int64_t)ii * w + jj) * ci;
          const double* wp = wgt + (((int64_t)ki * kw + kj) * ci) * co;
          for (int ic = 0; ic < ci; ++ic) {
            const double xv = xp[ic];
            const double* wrow = wp + (int64_t)ic * co;
            for (int oc = 0; oc < co; ++oc) acc[oc] += xv * wrow[oc];
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const double* gy, int ho, int wo, int co, const double* wgt, int kh,
                           int kw, int ci, int stride, int pad, int h, int w, double* gx) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int ii = 0; ii < h; ++ii) {
    for (int jj = 0; jj < w; ++jj) {
      double* acc = gx + ((int64_t)ii * w + jj) * ci;
      for (int ic = 0; ic < ci; ++ic) acc[ic] = 0.0;
      for (int ki = 0; ki < kh; ++ki) {
        const int num_i = ii + pad - ki;
        if (num_i < 0 || num_i % stride != 0) continue;
        const int oi = num_i / stride;
        if (oi >= ho) continue;
        for (int kj = 0; kj < kw; ++kj) {
          const int num_j = jj + pad - kj;
          if (num_j < 0 || num_j % stride != 0) continue;
          const int oj = num_j / stride;
          if (oj >= wo) continue;
          const double* gp = gy + ((int64_t)oi * wo + oj) * co;
          const double* wp = wgt + (((int64_t)ki * kw + kj) * ci) * co;
          for (int ic = 0; ic < ci; ++ic) {
            const double* wrow = wp + (int64_t)ic * co;
            double a = acc[ic];
            for (int oc = 0; oc < co; ++oc) a += gp[oc] * wrow[oc];
            acc[ic] = a;
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const double* x, int h, int w, int ci, const double* gy, int ho,
                            int wo, int co, int kh, int kw, int stride, int pad, double* gw,
                            double* gb) {
  const int64_t nslices = (int64_t)kh * kw * ci;
#pragma omp parallel for schedule(static)
  for (int64_t idx = 0; idx < nslices; ++idx) {
    const int ic = (int)(idx % ci);
    const int kj = (int)((idx / ci) % kw);
    const int ki = (int)(idx / ((int64_t)ci * kw));
    double* acc = gw + idx * co;
    for (int oc = 0; oc < co; ++oc) acc[oc] = 0.0;
    for (int oi = 0; oi < ho; ++oi) {
      const int ii = oi * stride + ki - pad;
      if (ii < 0 || ii >= h) continue;
      for (int oj = 0; oj < wo; ++oj) {
        const int jj = oj * stride + kj - pad;
        if (jj < 0 || jj >= w) continue;
        const double xv = x[((int64_t)ii * w + jj) * ci + ic];
        const double* gp = gy + ((int64_t)oi * wo + oj) * co;
        for (int oc = 0; oc < co; ++oc) acc[oc] += xv * gp[oc];
      }
    }
  }
  if (gb) {
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < co; ++oc) {
      double acc = 0.0;
      for (int64_t i = 0; i < (int64_t)ho * wo; ++i) acc += gy[i * co + oc];
      gb[oc] = acc;
    }
  }
}

void conv3d_forward(const double* x, int nx, int ny, int nz, int ci, const double* wgt, int k,
                    int co, const double* bias, int stride, int pad, double* y) {
  const int ox = (nx + 2 * pad - k) / stride + 1;
  const int oy = (ny + 2 * pad - k) / stride + 1;
  const int oz = (nz + 2 * pad - k) / stride + 1;
#pragma omp parallel for collapse(2) schedule(static)
  for (int a = 0; a < ox; ++a) {
    for (int b = 0; b < oy; ++b) {
      for (int d = 0; d < oz; ++d) {
        double* acc = y + (((int64_t)a * oy + b) * oz + d) * co;
        for (int oc = 0; oc < co; ++oc) acc[oc] = bias ? bias[oc] : 0.0;
        for (int ka = 0; ka < k; ++ka) {
          const int ia = a * stride + ka - pad;
          if (ia < 0 || ia >= nx) continue;
          for (int kb = 0; kb < k; ++kb) {
            const int ib = b * stride + kb - pad;
            if (ib < 0 || ib >= ny) continue;
            for (int kd = 0; kd < k; ++kd) {
              const int id = d * stride + kd - pad;
              if (id < 0 || id >= nz) continue;
              const double* xp = x + (((int64_t)ia * ny + ib) * nz + id) * ci;
              const double* wp = wgt + ((((int64_t)ka * k + kb) * k + kd) * ci) * co;
              for (int ic = 0; ic < ci; ++ic) {
                const double xv = xp[ic];
                const double* wrow = wp + (int64_t)ic * co;
                for (int oc = 0; oc < co; ++oc) acc[oc] += xv * wrow[oc];
              }
            }
          }
        }
      }
    }
  }
}

void conv3d_backward_input(const double* gy, int ox, int oy, int oz, int co, const double* wgt,
                           int k, int ci, int stride, int pad, int nx, int ny, int nz,
                           double* gx) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int ia = 0; ia < nx; ++ia) {
    for (int ib = 0; ib < ny; ++ib) {
      for (int id = 0; id < nz; ++id) {
        double* acc = gx + (((int64_t)ia * ny + ib) * nz + id) * ci;
        for (int ic = 0; ic < ci; ++ic) acc[ic] = 0.0;
        for (int ka = 0; ka < k; ++ka) {
          const int na = ia + pad - ka;
          if (na < 0 || na % stride != 0) continue;
          const int a = na / stride;
          if (a >= ox) continue;
          for (int kb = 0; kb < k; ++kb) {
            const int nb = ib + pad - kb;
            if (nb < 0 || nb % stride != 0) continue;
            const int b = nb / stride;
            if (b >= oy) continue;
            for (int kd = 0; kd < k; ++kd) {
              const int nd = id + pad - kd;
              if (nd < 0 || nd % stride != 0) continue;
              const int d = nd / stride;
              if (d >= oz) continue;
              const double* gp = gy + (((int64_t)a * oy + b) * oz + d) * co;
              const double* wp = wgt + ((((int64_t)ka * k + kb) * k + kd) * ci) * co;
              for (int ic = 0; ic < ci; ++ic) {
                const double* wrow = wp + (int64_t)ic * co;
                double av = acc[ic];
                for (int oc = 0; oc < co; ++oc) av += gp[oc] * wrow[oc];
                acc[ic] = av;
              }
            }
          }
        }
      }
    }
  }
}

void conv3d_backward_weight(const double* x, int nx, int ny, int nz, int ci, const double* gy,
                            int ox, int oy, int oz, int co, int k, int stride, int pad, double* gw,
                            double* gb) {
  const int64_t nslices = (int64_t)k * k * k * ci;
#pragma omp parallel for schedule(static)
  for (int64_t idx = 0; idx < nslices; ++idx) {
    const int ic = (int)(idx % ci);
    const int kd = (int)((idx / ci) % k);
    const int kb = (int)((idx / ((int64_t)ci * k)) % k);
    const int ka = (int)(idx / ((int64_t)ci * k * k));
    double* acc = gw + idx * co;
    for (int oc = 0; oc < co; ++oc) acc[oc] = 0.0;
    for (int a = 0; a < ox; ++a) {
      const int ia = a * stride + ka - pad;
      if (ia < 0 || ia >= nx) continue;
      for (int b = 0; b < oy; ++b) {
        const int ib = b * stride + kb - pad;
        if (ib < 0 || ib >= ny) continue;
        for (int d = 0; d < oz; ++d) {
          const int id = d * stride + kd - pad;
          if (id < 0 || id >= nz) continue;
          const double xv = x[(((int64_t)ia * ny + ib) * nz + id) * ci + ic];
          const double* gp = gy + (((int64_t)a * oy + b) * oz + d) * co;
          for (int oc = 0; oc < co; ++oc) acc[oc] += xv * gp[oc];
        }
      }
    }
  }
  if (gb) {
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < co; ++oc) {
      double acc = 0.0;
      for (int64_t i = 0; i < (int64_t)ox * oy * oz; ++i) acc += gy[i * co + oc];
      gb[oc] = acc;
    }
  }
}

void wap_pool_forward(const double* f, int nx, int ny, int nz, int c, const double* w, int axis,
                      double* plane) {
  if (axis == 2) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y)
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (int z = 0; z < nz; ++z)
            acc += w[((int64_t)x * ny + y) * nz + z] *
                   f[(((int64_t)x * ny + y) * nz + z) * c + ch];
          plane[((int64_t)x * ny + y) * c + ch] = acc;
        }
  } else if (axis == 0) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z)
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (int x = 0; x < nx; ++x)
            acc += w[((int64_t)x * ny + y) * nz + z] *
                   f[(((int64_t)x * ny + y) * nz + z) * c + ch];
          plane[((int64_t)y * nz + z) * c + ch] = acc;
        }
  } else {
#pragma omp parallel for collapse(2) schedule(static)
    for (int x = 0; x < nx; ++x)
      for (int z = 0; z < nz; ++z)
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (int y = 0; y < ny; ++y)
            acc += w[((int64_t)x * ny + y) * nz + z] *
                   f[(((int64_t)x * ny + y) * nz + z) * c + ch];
          plane[((int64_t)x * nz + z) * c + ch] = acc;
        }
  }
}

void gmp_pool_forward(const double* f, int nx, int ny, int nz, int c, int axis, double* plane,
                      int* argmax) {
  auto fidx = [&](int x, int y, int z, int ch) {
    return (((int64_t)x * ny + y) * nz + z) * c + ch;
  };
  if (axis == 2) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y)
        for (int ch = 0; ch < c; ++ch) {
          double best = f[fidx(x, y, 0, ch)];
          int bi = 0;
          for (int z = 1; z < nz; ++z)
            if (f[fidx(x, y, z, ch)] > best) best = f[fidx(x, y, z, ch)], bi = z;
          plane[((int64_t)x * ny + y) * c + ch] = best;
          argmax[((int64_t)x * ny + y) * c + ch] = bi;
        }
  } else if (axis == 0) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z)
        for (int ch = 0; ch < c; ++ch) {
          double best = f[fidx(0, y, z, ch)];
          int bi = 0;
          for (int x = 1; x < nx; ++x)
            if (f[fidx(x, y, z, ch)] > best) best = f[fidx(x, y, z, ch)], bi = x;
          plane[((int64_t)y * nz + z) * c + ch] = best;
          argmax[((int64_t)y * nz + z) * c + ch] = bi;
        }
  } else {
#pragma omp parallel for collapse(2) schedule(static)
    for (int x = 0; x < nx; ++x)
      for (int z = 0; z < nz; ++z)
        for (int ch = 0; ch < c; ++ch) {
          double best = f[fidx(x, 0, z, ch)];
          int bi = 0;
          for (int y = 1; y < ny; ++y)
            if (f[fidx(x, y, z, ch)] > best) best = f[fidx(x, y, z, ch)], bi = y;
          plane[((int64_t)x * nz + z) * c + ch] = best;
          argmax[((int64_t)x * nz + z) * c + ch] = bi;
        }
  }
}

void broadcast_forward(const double* plane, int nx, int ny, int nz, int c, int axis, double* vol) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z) {
        const double* src;
        if (axis == 2)
          src = plane + ((int64_t)x * ny + y) * c;
        else if (axis == 0)
          src = plane + ((int64_t)y * nz + z) * c;
        else
          src = plane + ((int64_t)x * nz + z) * c;
        double* dst = vol + (((int64_t)x * ny + y) * nz + z) * c;
        for (int ch = 0; ch < c; ++ch) dst[ch] = src[ch];
      }
}

void aggregate_forward(const double* f, const double* bxy, const double* byz, const double* bzx,
                       const double* w, int64_t nvox, int c, double* out) {
#pragma omp parallel for schedule(static)
  for (int64_t v = 0; v < nvox; ++v) {
    const double w0 = w[v * 4 + 0], w1 = w[v * 4 + 1], w2 = w[v * 4 + 2], w3 = w[v * 4 + 3];
    for (int ch = 0; ch < c; ++ch) {
      const int64_t i = v * c + ch;
      out[i] = w0 * f[i] + w1 * bxy[i] + w2 * byz[i] + w3 * bzx[i];
    }
  }
}

void splat_forward(const double* cells, int64_t /*p*/, int c, const int64_t* csr_off,
                   const int64_t* csr_cell, int64_t nvox, double* out) {
#pragma omp parallel for schedule(static)
  for (int64_t v = 0; v < nvox; ++v) {
    const int64_t lo = csr_off[v], hi = csr_off[v + 1];
    double* dst = out + v * c;
    for (int ch = 0; ch < c; ++ch) dst[ch] = 0.0;
    if (lo == hi) continue;
    for (int64_t i = lo; i < hi; ++i) {
      const double* src = cells + csr_cell[i] * c;
      for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
    }
    const double inv = 1.0 / (double)(hi - lo);
    for (int ch = 0; ch < c; ++ch) dst[ch] *= inv;
  }
}

void densify_forward(const double* feats, int c, const int64_t* csr_off, const int64_t* csr_row,
                     int64_t nvox, double* out, int64_t* argmax) {
#pragma omp parallel for schedule(static)
  for (int64_t v = 0; v < nvox; ++v) {
    const int64_t lo = csr_off[v], hi = csr_off[v + 1];
    double* dst = out + v * c;
    int64_t* am = argmax + v * c;
    for (int ch = 0; ch < c; ++ch) {
      dst[ch] = 0.0;
      am[ch] = -1;
    }
    if (lo == hi) continue;
    for (int ch = 0; ch < c; ++ch) {
      double best = feats[csr_row[lo] * c + ch];
      int64_t bi = csr_row[lo];
      for (int64_t i = lo + 1; i < hi; ++i) {
        const double x = feats[csr_row[i] * c + ch];
        if (x > best) best = x, bi = csr_row[i];
      }
      dst[ch] = best;
      am[ch] = bi;
    }
  }
}

void trilinear_forward(const double* vol, int nx, int ny, int nz, int c, const double* coords,
                       int64_t q, double* out) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < q; ++i) {
    double cx = coords[i * 3 + 0], cy = coords[i * 3 + 1], cz = coords[i * 3 + 2];
    cx = std::clamp(cx, 0.0, (double)(nx - 1));
    cy = std::clamp(cy, 0.0, (double)(ny - 1));
    cz = std::clamp(cz, 0.0, (double)(nz - 1));
    const int x0 = (int)cx, y0 = (int)cy, z0 = (int)cz;
    const int x1 = std::min(x0 + 1, nx - 1), y1 = std::min(y0 + 1, ny - 1),
              z1 = std::min(z0 + 1, nz - 1);
    const double tx = cx - x0, ty = cy - y0, tz = cz - z0;
    auto vp = [&](int x, int y, int z) { return vol + (((int64_t)x * ny + y) * nz + z) * c; };
    const double w000 = (1 - tx) * (1 - ty) * (1 - tz), w001 = (1 - tx) * (1 - ty) * tz,
                 w010 = (1 - tx) * ty * (1 - tz), w011 = (1 - tx) * ty * tz,
                 w100 = tx * (1 - ty) * (1 - tz), w101 = tx * (1 - ty) * tz,
                 w110 = tx * ty * (1 - tz), w111 = tx * ty * tz;
    const double *p000 = vp(x0, y0, z0), *p001 = vp(x0, y0, z1), *p010 = vp(x0, y1, z0),
                 *p011 = vp(x0, y1, z1), *p100 = vp(x1, y0, z0), *p101 = vp(x1, y0, z1),
                 *p110 = vp(x1, y1, z0), *p111 = vp(x1, y1, z1);
    for (int ch = 0; ch < c; ++ch) {
      out[i * c + ch] = w000 * p000[ch] + w001 * p001[ch] + w010 * p010[ch] + w011 * p011[ch] +
                        w100 * p100[ch] + w101 * p101[ch] + w110 * p110[ch] + w111 * p111[ch];
    }
  }
}

void affinity_forward(const double* feat, int64_t kpos, int c, double* out) {
#pragma omp parallel for schedule(static)
  for (int64_t u = 0; u < kpos; ++u) {
    double nu = 0.0;
    for (int ch = 0; ch < c; ++ch) nu += feat[u * c + ch] * feat[u * c + ch];
    nu = std::sqrt(nu);
    for (int64_t v = 0; v < kpos; ++v) {
      double nv = 0.0, dot = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        nv += feat[v * c + ch] * feat[v * c + ch];
        dot += feat[u * c + ch] * feat[v * c + ch];
      }
      nv = std::sqrt(nv);
      out[u * kpos + v] = (nu == 0.0 || nv == 0.0) ? 0.0 : dot / (nu * nv);
    }
  }
}

void affinity_backward(const double* feat, int64_t kpos, int c, const double* gout,
                       double* gfeat) {
#pragma omp parallel for schedule(static)
  for (int64_t u = 0; u < kpos; ++u) {
    double nu2 = 0.0;
    for (int ch = 0; ch < c; ++ch) nu2 += feat[u * c + ch] * feat[u * c + ch];
    const double nu = std::sqrt(nu2);
    for (int ch = 0; ch < c; ++ch) gfeat[u * c + ch] = 0.0;
    if (nu == 0.0) continue;
    for (int64_t v = 0; v < kpos; ++v) {
      double nv2 = 0.0, dot = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        nv2 += feat[v * c + ch] * feat[v * c + ch];
        dot += feat[u * c + ch] * feat[v * c + ch];
      }
      const double nv = std::sqrt(nv2);
      if (nv == 0.0) continue;
      const double g = gout[u * kpos + v] + gout[v * kpos + u];
      if (g == 0.0) continue;
      const double inv = 1.0 / (nu * nv);
      const double cuv = dot * inv;
      for (int ch = 0; ch < c; ++ch)
        gfeat[u * c + ch] += g * (feat[v * c + ch] * inv - cuv * feat[u * c + ch] / nu2);
    }
  }
}

}  // namespace tpvocc::kernels::par
