#include "tpvocc/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace tpvocc::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::kAuto};
}

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

bool parallel_available() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

namespace {
inline bool use_par() {
  switch (g_backend.load()) {
    case Backend::kReference:
      return false;
    case Backend::kParallel:
      return true;
    case Backend::kAuto:
    default:
      return parallel_available();
  }
}
}  // namespace

#define TPVOCC_DISPATCH(fn, ...)  \
  do {                            \
    if (use_par())                \
      par::fn(__VA_ARGS__);       \
    else                          \
      ref::fn(__VA_ARGS__);       \
  } while (0)

void matmul_nn(const double* a, int m, int k, const double* b, int n, double* c) {
  TPVOCC_DISPATCH(matmul_nn, a, m, k, b, n, c);
}
void matmul_nt(const double* a, int m, int k, const double* b, int n, double* c) {
  TPVOCC_DISPATCH(matmul_nt, a, m, k, b, n, c);
}
void matmul_tn(const double* a, int m, int k, const double* b, int n, double* c) {
  TPVOCC_DISPATCH(matmul_tn, a, m, k, b, n, c);
}
void conv2d_forward(const double* x, int h, int w, int ci, const double* wgt, int kh, int kw,
                    int co, const double* bias, int stride, int pad, double* y) {
  TPVOCC_DISPATCH(conv2d_forward, x, h, w, ci, wgt, kh, kw, co, bias, stride, pad, y);
}
void conv2d_backward_input(const double* gy, int ho, int wo, int co, const double* wgt, int kh,
                           int kw, int ci, int stride, int pad, int h, int w, double* gx) {
  TPVOCC_DISPATCH(conv2d_backward_input, gy, ho, wo, co, wgt, kh, kw, ci, stride, pad, h, w, gx);
}
void conv2d_backward_weight(const double* x, int h, int w, int ci, const double* gy, int ho,
                            int wo, int co, int kh, int kw, int stride, int pad, double* gw,
                            double* gb) {
  TPVOCC_DISPATCH(conv2d_backward_weight, x, h, w, ci, gy, ho, wo, co, kh, kw, stride, pad, gw,
                  gb);
}
void conv3d_forward(const double* x, int nx, int ny, int nz, int ci, const double* wgt, int k,
                    int co, const double* bias, int stride, int pad, double* y) {
  TPVOCC_DISPATCH(conv3d_forward, x, nx, ny, nz, ci, wgt, k, co, bias, stride, pad, y);
}
void conv3d_backward_input(const double* gy, int ox, int oy, int oz, int co, const double* wgt,
                           int k, int ci, int stride, int pad, int nx, int ny, int nz,
                           double* gx) {
  TPVOCC_DISPATCH(conv3d_backward_input, gy, ox, oy, oz, co, wgt, k, ci, stride, pad, nx, ny, nz,
                  gx);
}
void conv3d_backward_weight(const double* x, int nx, int ny, int nz, int ci, const double* gy,
                            int ox, int oy, int oz, int co, int k, int stride, int pad, double* gw,
                            double* gb) {
  TPVOCC_DISPATCH(conv3d_backward_weight, x, nx, ny, nz, ci, gy, ox, oy, oz, co, k, stride, pad,
                  gw, gb);
}
void wap_pool_forward(const double* f, int nx, int ny, int nz, int c, const double* w, int axis,
                      double* plane) {
  TPVOCC_DISPATCH(wap_pool_forward, f, nx, ny, nz, c, w, axis, plane);
}
void gmp_pool_forward(const double* f, int nx, int ny, int nz, int c, int axis, double* plane,
                      int* argmax) {
  TPVOCC_DISPATCH(gmp_pool_forward, f, nx, ny, nz, c, axis, plane, argmax);
}
void broadcast_forward(const double* plane, int nx, int ny, int nz, int c, int axis, double* vol) {
  TPVOCC_DISPATCH(broadcast_forward, plane, nx, ny, nz, c, axis, vol);
}
void aggregate_forward(const double* f, const double* bxy, const double* byz, const double* bzx,
                       const double* w, int64_t nvox, int c, double* out) {
  TPVOCC_DISPATCH(aggregate_forward, f, bxy, byz, bzx, w, nvox, c, out);
}
void splat_forward(const double* cells, int64_t p, int c, const int64_t* csr_off,
                   const int64_t* csr_cell, int64_t nvox, double* out) {
  TPVOCC_DISPATCH(splat_forward, cells, p, c, csr_off, csr_cell, nvox, out);
}
void densify_forward(const double* feats, int c, const int64_t* csr_off, const int64_t* csr_row,
                     int64_t nvox, double* out, int64_t* argmax) {
  TPVOCC_DISPATCH(densify_forward, feats, c, csr_off, csr_row, nvox, out, argmax);
}
void trilinear_forward(const double* vol, int nx, int ny, int nz, int c, const double* coords,
                       int64_t q, double* out) {
  TPVOCC_DISPATCH(trilinear_forward, vol, nx, ny, nz, c, coords, q, out);
}
void affinity_forward(const double* feat, int64_t kpos, int c, double* out) {
  TPVOCC_DISPATCH(affinity_forward, feat, kpos, c, out);
}
void affinity_backward(const double* feat, int64_t kpos, int c, const double* gout,
                       double* gfeat) {
  TPVOCC_DISPATCH(affinity_backward, feat, kpos, c, gout, gfeat);
}

#undef TPVOCC_DISPATCH

// ---- single-implementation backward kernels ----

void wap_pool_backward(const double* f, int nx, int ny, int nz, int c, const double* w, int axis,
                       const double* gplane, double* gf, double* gw) {
  auto widx = [&](int x, int y, int z) { return ((int64_t)x * ny + y) * nz + z; };
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z) {
        const double* gp;
        if (axis == 2)
          gp = gplane + ((int64_t)x * ny + y) * c;
        else if (axis == 0)
          gp = gplane + ((int64_t)y * nz + z) * c;
        else
          gp = gplane + ((int64_t)x * nz + z) * c;
        const int64_t vi = widx(x, y, z);
        const double wv = w[vi];
        double gwv = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          gf[vi * c + ch] += wv * gp[ch];
          gwv += f[vi * c + ch] * gp[ch];
        }
        gw[vi] += gwv;
      }
}

void gmp_pool_backward(const int* argmax, int nx, int ny, int nz, int c, int axis,
                       const double* gplane, double* gf) {
  auto add = [&](int x, int y, int z, int ch, double g) {
    gf[(((int64_t)x * ny + y) * nz + z) * c + ch] += g;
  };
  if (axis == 2) {
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y)
        for (int ch = 0; ch < c; ++ch) {
          const int64_t pi = ((int64_t)x * ny + y) * c + ch;
          add(x, y, argmax[pi], ch, gplane[pi]);
        }
  } else if (axis == 0) {
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z)
        for (int ch = 0; ch < c; ++ch) {
          const int64_t pi = ((int64_t)y * nz + z) * c + ch;
          add(argmax[pi], y, z, ch, gplane[pi]);
        }
  } else {
    for (int x = 0; x < nx; ++x)
      for (int z = 0; z < nz; ++z)
        for (int ch = 0; ch < c; ++ch) {
          const int64_t pi = ((int64_t)x * nz + z) * c + ch;
          add(x, argmax[pi], z, ch, gplane[pi]);
        }
  }
}

void broadcast_backward(const double* gvol, int nx, int ny, int nz, int c, int axis,
                        double* gplane) {
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z) {
        double* dst;
        if (axis == 2)
          dst = gplane + ((int64_t)x * ny + y) * c;
        else if (axis == 0)
          dst = gplane + ((int64_t)y * nz + z) * c;
        else
          dst = gplane + ((int64_t)x * nz + z) * c;
        const double* src = gvol + (((int64_t)x * ny + y) * nz + z) * c;
        for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
      }
}

void aggregate_backward(const double* f, const double* bxy, const double* byz, const double* bzx,
                        const double* w, int64_t nvox, int c, const double* gout, double* gf,
                        double* gbxy, double* gbyz, double* gbzx, double* gw) {
  for (int64_t v = 0; v < nvox; ++v) {
    const double w0 = w[v * 4 + 0], w1 = w[v * 4 + 1], w2 = w[v * 4 + 2], w3 = w[v * 4 + 3];
    double g0 = 0, g1 = 0, g2 = 0, g3 = 0;
    for (int ch = 0; ch < c; ++ch) {
      const int64_t i = v * c + ch;
      const double g = gout[i];
      gf[i] += w0 * g;
      gbxy[i] += w1 * g;
      gbyz[i] += w2 * g;
      gbzx[i] += w3 * g;
      g0 += f[i] * g;
      g1 += bxy[i] * g;
      g2 += byz[i] * g;
      g3 += bzx[i] * g;
    }
    gw[v * 4 + 0] += g0;
    gw[v * 4 + 1] += g1;
    gw[v * 4 + 2] += g2;
    gw[v * 4 + 3] += g3;
  }
}

void splat_backward(const double* gout, int c, const int64_t* cell_to_voxel,
                    const int64_t* voxel_count, int64_t p, double* gcells) {
  for (int64_t i = 0; i < p; ++i) {
    const int64_t v = cell_to_voxel[i];
    if (v < 0) continue;
    const double inv = 1.0 / (double)voxel_count[v];
    for (int ch = 0; ch < c; ++ch) gcells[i * c + ch] += inv * gout[v * c + ch];
  }
}

void densify_backward(const double* gout, int c, const int64_t* argmax, int64_t nvox,
                      double* gfeats) {
  for (int64_t v = 0; v < nvox; ++v)
    for (int ch = 0; ch < c; ++ch) {
      const int64_t r = argmax[v * c + ch];
      if (r >= 0) gfeats[r * c + ch] += gout[v * c + ch];
    }
}

void trilinear_backward(const double* vol, int nx, int ny, int nz, int c, const double* coords,
                        int64_t q, const double* gout, double* gvol, double* gcoords) {
  for (int64_t i = 0; i < q; ++i) {
    const double rx = coords[i * 3 + 0], ry = coords[i * 3 + 1], rz = coords[i * 3 + 2];
    const double cx = std::clamp(rx, 0.0, (double)(nx - 1));
    const double cy = std::clamp(ry, 0.0, (double)(ny - 1));
    const double cz = std::clamp(rz, 0.0, (double)(nz - 1));
    const bool inx = (rx > 0.0 && rx < nx - 1), iny = (ry > 0.0 && ry < ny - 1),
               inz = (rz > 0.0 && rz < nz - 1);
    const int x0 = (int)cx, y0 = (int)cy, z0 = (int)cz;
    const int x1 = std::min(x0 + 1, nx - 1), y1 = std::min(y0 + 1, ny - 1),
              z1 = std::min(z0 + 1, nz - 1);
    const double tx = cx - x0, ty = cy - y0, tz = cz - z0;
    auto off = [&](int x, int y, int z) { return (((int64_t)x * ny + y) * nz + z) * c; };
    const int64_t o000 = off(x0, y0, z0), o001 = off(x0, y0, z1), o010 = off(x0, y1, z0),
                  o011 = off(x0, y1, z1), o100 = off(x1, y0, z0), o101 = off(x1, y0, z1),
                  o110 = off(x1, y1, z0), o111 = off(x1, y1, z1);
    double gx = 0.0, gy = 0.0, gz = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double g = gout[i * c + ch];
      if (gvol) {
        gvol[o000 + ch] += g * (1 - tx) * (1 - ty) * (1 - tz);
        gvol[o001 + ch] += g * (1 - tx) * (1 - ty) * tz;
        gvol[o010 + ch] += g * (1 - tx) * ty * (1 - tz);
        gvol[o011 + ch] += g * (1 - tx) * ty * tz;
        gvol[o100 + ch] += g * tx * (1 - ty) * (1 - tz);
        gvol[o101 + ch] += g * tx * (1 - ty) * tz;
        gvol[o110 + ch] += g * tx * ty * (1 - tz);
        gvol[o111 + ch] += g * tx * ty * tz;
      }
      if (gcoords) {
        const double v000 = vol[o000 + ch], v001 = vol[o001 + ch], v010 = vol[o010 + ch],
                     v011 = vol[o011 + ch], v100 = vol[o100 + ch], v101 = vol[o101 + ch],
                     v110 = vol[o110 + ch], v111 = vol[o111 + ch];
        gx += g * ((1 - ty) * (1 - tz) * (v100 - v000) + (1 - ty) * tz * (v101 - v001) +
                   ty * (1 - tz) * (v110 - v010) + ty * tz * (v111 - v011));
        gy += g * ((1 - tx) * (1 - tz) * (v010 - v000) + (1 - tx) * tz * (v011 - v001) +
                   tx * (1 - tz) * (v110 - v100) + tx * tz * (v111 - v101));
        gz += g * ((1 - tx) * (1 - ty) * (v001 - v000) + (1 - tx) * ty * (v011 - v010) +
                   tx * (1 - ty) * (v101 - v100) + tx * ty * (v111 - v110));
      }
    }
    if (gcoords) {
      gcoords[i * 3 + 0] += inx ? gx : 0.0;
      gcoords[i * 3 + 1] += iny ? gy : 0.0;
      gcoords[i * 3 + 2] += inz ? gz : 0.0;
    }
  }
}

}  // namespace tpvocc::kernels
