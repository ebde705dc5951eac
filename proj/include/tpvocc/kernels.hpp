#pragma once

#include <cstdint>

namespace tpvocc::kernels {

// Compute backend. `kAuto` picks the OpenMP kernels when compiled with
// OpenMP, the serial reference otherwise. The reference kernels are plain
// scalar loops and stay the testing baseline for the parallel ones.
enum class Backend { kAuto, kReference, kParallel };

void set_backend(Backend b);
Backend backend();
bool parallel_available();

// Layout conventions shared by every kernel:
//   images   [H, W, C]       row-major
//   volumes  [X, Y, Z, C]    row-major, linear voxel id = x*(Y*Z) + y*Z + z
//   planes   axis 0 -> [Y,Z,C], axis 1 -> [X,Z,C], axis 2 -> [X,Y,C]
//   weights  conv2d [kh, kw, Cin, Cout], conv3d [k, k, k, Cin, Cout]

#define TPVOCC_KERNEL_DECLS                                                                        \
  void matmul_nn(const double* a, int m, int k, const double* b, int n, double* c);                \
  void matmul_nt(const double* a, int m, int k, const double* b, int n, double* c);                \
  void matmul_tn(const double* a, int m, int k, const double* b, int n, double* c);                \
                                                                                                   \
  void conv2d_forward(const double* x, int h, int w, int ci, const double* wgt, int kh, int kw,    \
                      int co, const double* bias, int stride, int pad, double* y);                 \
  void conv2d_backward_input(const double* gy, int ho, int wo, int co, const double* wgt, int kh,  \
                             int kw, int ci, int stride, int pad, int h, int w, double* gx);       \
  void conv2d_backward_weight(const double* x, int h, int w, int ci, const double* gy, int ho,     \
                              int wo, int co, int kh, int kw, int stride, int pad, double* gw,     \
                              double* gb);                                                         \
                                                                                                   \
  void conv3d_forward(const double* x, int nx, int ny, int nz, int ci, const double* wgt, int k,   \
                      int co, const double* bias, int stride, int pad, double* y);                 \
  void conv3d_backward_input(const double* gy, int ox, int oy, int oz, int co, const double* wgt, \
                             int k, int ci, int stride, int pad, int nx, int ny, int nz,           \
                             double* gx);                                                          \
  void conv3d_backward_weight(const double* x, int nx, int ny, int nz, int ci, const double* gy,   \
                              int ox, int oy, int oz, int co, int k, int stride, int pad,          \
                              double* gw, double* gb);                                             \
                                                                                                   \
  void wap_pool_forward(const double* f, int nx, int ny, int nz, int c, const double* w, int axis, \
                        double* plane);                                                            \
  void gmp_pool_forward(const double* f, int nx, int ny, int nz, int c, int axis, double* plane,   \
                        int* argmax);                                                              \
  void broadcast_forward(const double* plane, int nx, int ny, int nz, int c, int axis,             \
                         double* vol);                                                             \
  void aggregate_forward(const double* f, const double* bxy, const double* byz,                    \
                         const double* bzx, const double* w, int64_t nvox, int c, double* out);    \
  void splat_forward(const double* cells, int64_t p, int c, const int64_t* csr_off,                \
                     const int64_t* csr_cell, int64_t nvox, double* out);                          \
  void densify_forward(const double* feats, int c, const int64_t* csr_off,                         \
                       const int64_t* csr_row, int64_t nvox, double* out, int64_t* argmax);        \
  void trilinear_forward(const double* vol, int nx, int ny, int nz, int c, const double* coords,   \
                         int64_t q, double* out);                                                  \
  void affinity_forward(const double* feat, int64_t kpos, int c, double* out);                     \
  void affinity_backward(const double* feat, int64_t kpos, int c, const double* gout,              \
                         double* gfeat);

namespace ref {
TPVOCC_KERNEL_DECLS
}
namespace par {
TPVOCC_KERNEL_DECLS
}
// Dispatching entry points (honor set_backend()).
TPVOCC_KERNEL_DECLS

#undef TPVOCC_KERNEL_DECLS

// Single-implementation backward kernels. Cheap scatter-style loops where a
// parallel variant would not pay off; validated by finite differences.
void wap_pool_backward(const double* f, int nx, int ny, int nz, int c, const double* w, int axis,
                       const double* gplane, double* gf, double* gw);
void gmp_pool_backward(const int* argmax, int nx, int ny, int nz, int c, int axis,
                       const double* gplane, double* gf);
void broadcast_backward(const double* gvol, int nx, int ny, int nz, int c, int axis,
                        double* gplane);
void aggregate_backward(const double* f, const double* bxy, const double* byz, const double* bzx,
                        const double* w, int64_t nvox, int c, const double* gout, double* gf,
                        double* gbxy, double* gbyz, double* gbzx, double* gw);
void splat_backward(const double* gout, int c, const int64_t* cell_to_voxel,
                    const int64_t* voxel_count, int64_t p, double* gcells);
void densify_backward(const double* gout, int c, const int64_t* argmax, int64_t nvox,
                      double* gfeats);
void trilinear_backward(const double* vol, int nx, int ny, int nz, int c, const double* coords,
                        int64_t q, const double* gout, double* gvol, double* gcoords);

}  // namespace tpvocc::kernels
