#include "tpvocc/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace tpvocc::report {

namespace fs = std::filesystem;

void symmetric_eigen(const Tensor& a, Tensor& evals, Tensor& evecs) {
  if (a.dim() != 2 || a.size(0) != a.size(1)) throw ConfigError("symmetric_eigen: square matrix expected");
  const int n = a.size(0);
  Tensor m = a;
  evecs = Tensor({n, n});
  for (int i = 0; i < n; ++i) evecs.at(i, i) = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += m.at(p, q) * m.at(p, q);
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::fabs(m.at(p, q)) < 1e-300) continue;
        const double theta = (m.at(q, q) - m.at(p, p)) / (2.0 * m.at(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double mkp = m.at(k, p), mkq = m.at(k, q);
          m.at(k, p) = c * mkp - s * mkq;
          m.at(k, q) = s * mkp + c * mkq;
        }
        for (int k = 0; k < n; ++k) {
          const double mpk = m.at(p, k), mqk = m.at(q, k);
          m.at(p, k) = c * mpk - s * mqk;
          m.at(q, k) = s * mpk + c * mqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = evecs.at(k, p), vkq = evecs.at(k, q);
          evecs.at(k, p) = c * vkp - s * vkq;
          evecs.at(k, q) = s * vkp + c * vkq;
        }
      }
  }

  // Sort descending by eigenvalue, permuting columns.
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[(size_t)i] = i;
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return m.at(i, i) > m.at(j, j); });
  evals = Tensor({n});
  Tensor sorted({n, n});
  for (int j = 0; j < n; ++j) {
    evals[j] = m.at(order[(size_t)j], order[(size_t)j]);
    for (int i = 0; i < n; ++i) sorted.at(i, j) = evecs.at(i, order[(size_t)j]);
  }
  evecs = std::move(sorted);
}

Tensor pca_projection(const Tensor& feats, int ncomp) {
  if (feats.dim() != 2) throw ConfigError("pca_projection: expects [K,C]");
  const int k = feats.size(0), c = feats.size(1);
  if (ncomp > c) throw ConfigError("pca_projection: more components than channels");
  // Covariance of centered features.
  std::vector<double> mean((size_t)c, 0.0);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < c; ++j) mean[(size_t)j] += feats.at(i, j);
  for (double& v : mean) v /= std::max(1, k);
  Tensor cov({c, c});
  for (int i = 0; i < k; ++i)
    for (int p = 0; p < c; ++p)
      for (int q = 0; q < c; ++q)
        cov.at(p, q) += (feats.at(i, p) - mean[(size_t)p]) * (feats.at(i, q) - mean[(size_t)q]);
  for (int64_t i = 0; i < cov.numel(); ++i) cov[i] /= std::max(1, k);

  Tensor evals, evecs;
  symmetric_eigen(cov, evals, evecs);
  Tensor proj({c, ncomp});
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < ncomp; ++j) proj.at(i, j) = evecs.at(i, j);
  return proj;
}

Tensor pca_plane_image(const Tensor& plane_feats, int h, int w) {
  const int k = plane_feats.size(0), c = plane_feats.size(1);
  if (k != h * w) throw ConfigError("pca_plane_image: K != h*w");
  const int ncomp = std::min(3, c);
  Tensor proj = pca_projection(plane_feats, ncomp);
  std::vector<double> mean((size_t)c, 0.0);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < c; ++j) mean[(size_t)j] += plane_feats.at(i, j);
  for (double& v : mean) v /= std::max(1, k);

  Tensor scores({k, 3});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < ncomp; ++j) {
      double s = 0.0;
      for (int ch = 0; ch < c; ++ch)
        s += (plane_feats.at(i, ch) - mean[(size_t)ch]) * proj.at(ch, j);
      scores.at(i, j) = s;
    }
  // Normalize each component to [0,1].
  for (int j = 0; j < 3; ++j) {
    double lo = scores.at(0, j), hi = scores.at(0, j);
    for (int i = 0; i < k; ++i) {
      lo = std::min(lo, scores.at(i, j));
      hi = std::max(hi, scores.at(i, j));
    }
    const double range = hi - lo;
    for (int i = 0; i < k; ++i)
      scores.at(i, j) = range > 0.0 ? (scores.at(i, j) - lo) / range : 0.0;
  }
  return scores.reshaped({h, w, 3});
}

Tensor wagg_axis_map(const Tensor& wagg, int axis) {
  if (wagg.dim() != 4 || wagg.size(3) != 4) throw ConfigError("wagg_axis_map: expects [X,Y,Z,4]");
  const int nx = wagg.size(0), ny = wagg.size(1), nz = wagg.size(2);
  int h, w;
  if (axis == 2) {
    h = nx;
    w = ny;
  } else if (axis == 0) {
    h = ny;
    w = nz;
  } else {
    h = nx;
    w = nz;
  }
  Tensor img({h, w, 3});
  const int reduce = wagg.size(axis);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int r = 0; r < reduce; ++r) {
          int x, y, z;
          if (axis == 2) {
            x = i; y = j; z = r;
          } else if (axis == 0) {
            x = r; y = i; z = j;
          } else {
            x = i; y = r; z = j;
          }
          acc += wagg.at(x, y, z, c + 1);  // channels 1..3 = xy, yz, zx weights
        }
        img.at(i, j, c) = acc / reduce;
      }
  // Joint renormalization to [0,1].
  double lo = img[0], hi = img[0];
  for (int64_t i = 0; i < img.numel(); ++i) {
    lo = std::min(lo, img[i]);
    hi = std::max(hi, img[i]);
  }
  const double range = hi - lo;
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = range > 0.0 ? (img[i] - lo) / range : 0.0;
  return img;
}

Tensor label_slice_mosaic(const std::vector<uint8_t>& labels, const GridSpec& grid) {
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  const int gap = 1;
  Tensor img({nx, nz * (ny + gap) - gap, 3});
  const auto& palette = data::class_palette();
  for (int z = 0; z < nz; ++z) {
    const int x_off = 0, y_off = z * (ny + gap);
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y) {
        const uint8_t l = labels[(size_t)grid.linear_index(x, y, z)];
        std::array<double, 3> col{1.0, 1.0, 1.0};  // invalid -> white
        if (l != 255) col = palette[(size_t)std::min<int>(l, (int)palette.size() - 1)];
        for (int c = 0; c < 3; ++c) img.at(x_off + x, y_off + y, c) = col[(size_t)c];
      }
  }
  return img;
}

void write_ppm(const std::string& path, const Tensor& rgb, int upscale) {
  if (rgb.dim() != 3 || rgb.size(2) != 3) throw ConfigError("write_ppm: expects [H,W,3]");
  const int h = rgb.size(0), w = rgb.size(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_ppm: cannot open '" + path + "'");
  out << "P6\n" << w * upscale << " " << h * upscale << "\n255\n";
  std::vector<unsigned char> row((size_t)w * upscale * 3);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(rgb.at(i, j, c), 0.0, 1.0);
        const unsigned char byte = (unsigned char)std::lround(v * 255.0);
        for (int r = 0; r < upscale; ++r) row[((size_t)j * upscale + r) * 3 + c] = byte;
      }
    for (int r = 0; r < upscale; ++r)
      out.write(reinterpret_cast<const char*>(row.data()), (std::streamsize)row.size());
  }
}

std::vector<std::string> emit_scene_report(SscModel& model, const data::SceneSample& sample,
                                           const std::string& out_dir) {
  fs::create_directories(out_dir);
  ModelOutputs out;
  {
    ad::NoGradGuard ng;
    out = model.forward(sample);
  }
  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const Tensor& img, int upscale) {
    const std::string path = out_dir + "/" + name;
    write_ppm(path, img, upscale);
    files.push_back(path);
  };

  const auto plane_img = [&](const ad::Var& plane) {
    const auto& sh = plane.shape();
    return pca_plane_image(plane.val().reshaped({sh[0] * sh[1], sh[2]}), sh[0], sh[1]);
  };
  emit("tpv_xy_pca.ppm", plane_img(out.tpv.encoded.xy), 8);
  emit("tpv_yz_pca.ppm", plane_img(out.tpv.encoded.yz), 8);
  emit("tpv_zx_pca.ppm", plane_img(out.tpv.encoded.zx), 8);

  emit("agg_weights_xy.ppm", wagg_axis_map(out.tpv.agg_weights.val(), 2), 8);
  emit("agg_weights_yz.ppm", wagg_axis_map(out.tpv.agg_weights.val(), 0), 8);
  emit("agg_weights_zx.ppm", wagg_axis_map(out.tpv.agg_weights.val(), 1), 8);

  emit("pred_slices.ppm", label_slice_mosaic(out.predicted_labels(), sample.scene.grid), 6);
  emit("gt_slices.ppm", label_slice_mosaic(sample.scene.labels, sample.scene.grid), 6);
  return files;
}

}  // namespace tpvocc::report
