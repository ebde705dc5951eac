#pragma once

#include <string>
#include <vector>

#include "tpvocc/data.hpp"
#include "tpvocc/model.hpp"
#include "tpvocc/tensor.hpp"

namespace tpvocc::report {

// Cyclic Jacobi eigendecomposition of a small symmetric matrix.
// Returns eigenvalues descending; eigenvectors are the COLUMNS of `evecs`.
void symmetric_eigen(const Tensor& a, Tensor& evals, Tensor& evecs);

// Orthonormal [C,ncomp] projection onto the top principal components of a
// centered [K,C] feature map.
Tensor pca_projection(const Tensor& feats, int ncomp);

// [K,C] features -> [h,w,3] image: PCA to 3 components, each normalized to
// [0,1] over the map.
Tensor pca_plane_image(const Tensor& plane_feats, int h, int w);

// Mean of W^Agg over one spatial axis; TPV channels (xy,yz,zx) -> R,G,B,
// jointly renormalized to [0,1].
Tensor wagg_axis_map(const Tensor& wagg, int axis);

// Z-slice mosaic of a label grid, palette-colored, 255 drawn white.
Tensor label_slice_mosaic(const std::vector<uint8_t>& labels, const GridSpec& grid);

// Binary PPM (P6). Values are clamped to [0,1]; pixels are replicated
// `upscale` times for viewability.
void write_ppm(const std::string& path, const Tensor& rgb, int upscale = 8);

// Emits the full per-scene report: PCA images of the encoded TPV planes,
// aggregation weight maps, and predicted-vs-gt slice mosaics.
std::vector<std::string> emit_scene_report(SscModel& model, const data::SceneSample& sample,
                                           const std::string& out_dir);

}  // namespace tpvocc::report
