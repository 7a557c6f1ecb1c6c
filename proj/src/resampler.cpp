#include "dpp/resampler.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <string>

#include "dpp/parallel.hpp"

namespace dpp {

namespace {

std::atomic<std::uint64_t> g_resampler_calls{0};

void count_call() { g_resampler_calls.fetch_add(1, std::memory_order_relaxed); }

struct BilinearTaps {
  int u0, u1, v0, v1;
  double fu, fv;
};

inline BilinearTaps taps(double u, double v, int w, int h) {
  BilinearTaps t;
  t.u0 = static_cast<int>(std::floor(u));
  t.fu = u - t.u0;
  t.u1 = t.u0 + 1 == w ? 0 : t.u0 + 1;  // longitude wraps
  t.v0 = static_cast<int>(std::floor(v));
  t.fv = v - t.v0;
  t.v1 = t.v0 + 1 >= h ? h - 1 : t.v0 + 1;  // latitude clamps
  return t;
}

void check_grid_dims(const ProjectionGrid& grid, const Tensor& erp, int channels_rank) {
  if (erp.rank() != channels_rank) {
    throw DimensionError("resampler: expected rank-" + std::to_string(channels_rank) +
                         " input, got " + erp.shape_str());
  }
  if (erp.dim(0) != grid.erp_height || erp.dim(1) != grid.erp_width) {
    throw DimensionError("resampler: input " + erp.shape_str() + " does not match grid " +
                         std::to_string(grid.erp_height) + "x" +
                         std::to_string(grid.erp_width));
  }
}

}  // namespace

std::uint64_t resampler_call_count() { return g_resampler_calls.load(std::memory_order_relaxed); }

ProjectionGrid build_grid(const TangentLayout& layout, int erp_height, int erp_width) {
  count_call();
  if (erp_height < 4 || erp_width < 4) {
    throw DimensionError("build_grid: ERP dimensions below 4x4");
  }
  if (layout.planes.empty()) {
    throw DimensionError("build_grid: empty layout");
  }
  if (erp_width != 2 * erp_height) {
    std::fprintf(stderr, "# warning: ERP %dx%d is not 2:1\n", erp_height, erp_width);
  }
  const int res = layout.planes.front().resolution;
  for (const auto& p : layout.planes) {
    if (p.resolution != res) {
      throw DimensionError("build_grid: mixed patch resolutions in layout");
    }
  }

  ProjectionGrid grid;
  grid.layout = layout;
  grid.erp_height = erp_height;
  grid.erp_width = erp_width;
  grid.patch_res = res;
  const std::size_t n = layout.planes.size() * static_cast<std::size_t>(res) * res;
  grid.u.resize(n);
  grid.v.resize(n);
  grid.valid.resize(n);

  const double w = static_cast<double>(erp_width);
  const double hm1 = static_cast<double>(erp_height - 1);
  for (int p = 0; p < grid.num_planes(); ++p) {
    const TangentPlane& plane = layout.planes[static_cast<std::size_t>(p)];
    const double half = std::tan(plane.fov / 2.0);
    for (int i = 0; i < res; ++i) {
      // Row 0 is the top of the patch (+y side, toward the sphere's north).
      const double y = (1.0 - 2.0 * i / (res - 1)) * half;
      for (int j = 0; j < res; ++j) {
        const double x = (2.0 * j / (res - 1) - 1.0) * half;
        const SphericalPoint sp = gnomonic_inverse(x, y, plane);
        double u = (sp.lon + M_PI) / (2.0 * M_PI) * w;
        if (u >= w) u -= w;
        if (u < 0.0) u = 0.0;
        const double v = (M_PI / 2 - sp.lat) / M_PI * hm1;
        const std::size_t idx = grid.at(p, i, j);
        grid.u[idx] = u;
        grid.v[idx] = v;
        grid.valid[idx] = std::isfinite(u) && std::isfinite(v) ? 1 : 0;
      }
    }
  }
  return grid;
}

Tensor sample_erp(const Tensor& erp, const ProjectionGrid& grid) {
  count_call();
  check_grid_dims(grid, erp, 3);
  const int c = erp.dim(2);
  const int r = grid.patch_res;
  const int w = grid.erp_width;
  const int h = grid.erp_height;
  Tensor out({grid.num_planes(), r, r, c});
  const double* src = erp.data();
  double* dst = out.data();

  parallel_for(0, grid.num_planes(), [&](int p) {
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < r; ++j) {
        const std::size_t gi = grid.at(p, i, j);
        double* o = dst + gi * c;
        if (!grid.valid[gi]) continue;  // left as zeros
        const BilinearTaps t = taps(grid.u[gi], grid.v[gi], w, h);
        const double* s00 = src + (static_cast<std::size_t>(t.v0) * w + t.u0) * c;
        const double* s10 = src + (static_cast<std::size_t>(t.v0) * w + t.u1) * c;
        const double* s01 = src + (static_cast<std::size_t>(t.v1) * w + t.u0) * c;
        const double* s11 = src + (static_cast<std::size_t>(t.v1) * w + t.u1) * c;
        for (int k = 0; k < c; ++k) {
          // Nested lerp rather than a four-weight sum: preserves constants
          // exactly (the weights need not sum to 1 in floating point).
          const double a = s00[k] + t.fu * (s10[k] - s00[k]);
          const double b = s01[k] + t.fu * (s11[k] - s01[k]);
          o[k] = a + t.fv * (b - a);
        }
      }
    }
  });
  return out;
}

Tensor sample_erp_nearest(const Tensor& labels, const ProjectionGrid& grid) {
  count_call();
  check_grid_dims(grid, labels, 2);
  const int r = grid.patch_res;
  const int w = grid.erp_width;
  const int h = grid.erp_height;
  Tensor out({grid.num_planes(), r, r});
  for (int p = 0; p < grid.num_planes(); ++p) {
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < r; ++j) {
        const std::size_t gi = grid.at(p, i, j);
        if (!grid.valid[gi]) continue;
        int un = static_cast<int>(std::lround(grid.u[gi]));
        int vn = static_cast<int>(std::lround(grid.v[gi]));
        if (un >= w) un -= w;
        if (vn > h - 1) vn = h - 1;
        out(p, i, j) = labels(vn, un);
      }
    }
  }
  return out;
}

Tensor sample_erp_backward(const Tensor& dpatches, const ProjectionGrid& grid) {
  count_call();
  if (dpatches.rank() != 4 || dpatches.dim(0) != grid.num_planes() ||
      dpatches.dim(1) != grid.patch_res || dpatches.dim(2) != grid.patch_res) {
    throw DimensionError("sample_erp_backward: patches " + dpatches.shape_str() +
                         " do not match grid");
  }
  const int c = dpatches.dim(3);
  const int r = grid.patch_res;
  const int w = grid.erp_width;
  const int h = grid.erp_height;
  Tensor derp({h, w, c});
  double* dst = derp.data();
  const double* src = dpatches.data();
  // Fixed plane/row/col order keeps the accumulation deterministic.
  for (int p = 0; p < grid.num_planes(); ++p) {
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < r; ++j) {
        const std::size_t gi = grid.at(p, i, j);
        if (!grid.valid[gi]) continue;
        const BilinearTaps t = taps(grid.u[gi], grid.v[gi], w, h);
        const double w00 = (1 - t.fu) * (1 - t.fv), w10 = t.fu * (1 - t.fv);
        const double w01 = (1 - t.fu) * t.fv, w11 = t.fu * t.fv;
        const double* g = src + gi * c;
        double* d00 = dst + (static_cast<std::size_t>(t.v0) * w + t.u0) * c;
        double* d10 = dst + (static_cast<std::size_t>(t.v0) * w + t.u1) * c;
        double* d01 = dst + (static_cast<std::size_t>(t.v1) * w + t.u0) * c;
        double* d11 = dst + (static_cast<std::size_t>(t.v1) * w + t.u1) * c;
        for (int k = 0; k < c; ++k) {
          d00[k] += w00 * g[k];
          d10[k] += w10 * g[k];
          d01[k] += w01 * g[k];
          d11[k] += w11 * g[k];
        }
      }
    }
  }
  return derp;
}

int strided_patch_res(const ProjectionGrid& grid, int stride) {
  const int r = static_cast<int>(std::llround(static_cast<double>(grid.patch_res) / stride));
  return r < 1 ? 1 : r;
}

Tensor sample_features(const Tensor& features, const ProjectionGrid& grid, int stride) {
  count_call();
  if (stride < 1) throw StrideMismatch("sample_features: stride below 1");
  const int fh = (grid.erp_height + stride - 1) / stride;
  const int fw = (grid.erp_width + stride - 1) / stride;
  if (features.rank() != 3 || features.dim(0) != fh || features.dim(1) != fw) {
    throw StrideMismatch("sample_features: features " + features.shape_str() +
                         " do not match ceil(" + std::to_string(grid.erp_height) + "/" +
                         std::to_string(stride) + ") x ceil(" +
                         std::to_string(grid.erp_width) + "/" + std::to_string(stride) + ")");
  }
  const int c = features.dim(2);
  const int r = strided_patch_res(grid, stride);
  Tensor out({grid.num_planes(), r, r, c});
  const double* src = features.data();
  double* dst = out.data();

  parallel_for(0, grid.num_planes(), [&](int p) {
    for (int a = 0; a < r; ++a) {
      const int i = std::min(a * stride, grid.patch_res - 1);
      for (int b = 0; b < r; ++b) {
        const int j = std::min(b * stride, grid.patch_res - 1);
        const std::size_t gi = grid.at(p, i, j);
        double* o = dst + ((static_cast<std::size_t>(p) * r + a) * r + b) * c;
        if (!grid.valid[gi]) continue;
        const double u = grid.u[gi] / stride;
        double v = grid.v[gi] / stride;
        if (v > fh - 1) v = fh - 1;
        const BilinearTaps t = taps(u, v, fw, fh);
        const double* s00 = src + (static_cast<std::size_t>(t.v0) * fw + t.u0) * c;
        const double* s10 = src + (static_cast<std::size_t>(t.v0) * fw + t.u1) * c;
        const double* s01 = src + (static_cast<std::size_t>(t.v1) * fw + t.u0) * c;
        const double* s11 = src + (static_cast<std::size_t>(t.v1) * fw + t.u1) * c;
        for (int k = 0; k < c; ++k) {
          // Same nested-lerp form as sample_erp (constants preserved exactly;
          // stride 1 stays bitwise identical to sample_erp).
          const double la = s00[k] + t.fu * (s10[k] - s00[k]);
          const double lb = s01[k] + t.fu * (s11[k] - s01[k]);
          o[k] = la + t.fv * (lb - la);
        }
      }
    }
  });
  return out;
}

Tensor sample_features_backward(const Tensor& dpatches, const ProjectionGrid& grid,
                                int stride, int feat_height, int feat_width) {
  count_call();
  const int r = strided_patch_res(grid, stride);
  if (dpatches.rank() != 4 || dpatches.dim(0) != grid.num_planes() ||
      dpatches.dim(1) != r || dpatches.dim(2) != r) {
    throw StrideMismatch("sample_features_backward: patches " + dpatches.shape_str() +
                         " do not match strided grid");
  }
  const int c = dpatches.dim(3);
  Tensor dfeat({feat_height, feat_width, c});
  double* dst = dfeat.data();
  const double* src = dpatches.data();
  for (int p = 0; p < grid.num_planes(); ++p) {
    for (int a = 0; a < r; ++a) {
      const int i = std::min(a * stride, grid.patch_res - 1);
      for (int b = 0; b < r; ++b) {
        const int j = std::min(b * stride, grid.patch_res - 1);
        const std::size_t gi = grid.at(p, i, j);
        if (!grid.valid[gi]) continue;
        const double u = grid.u[gi] / stride;
        double v = grid.v[gi] / stride;
        if (v > feat_height - 1) v = feat_height - 1;
        const BilinearTaps t = taps(u, v, feat_width, feat_height);
        const double w00 = (1 - t.fu) * (1 - t.fv), w10 = t.fu * (1 - t.fv);
        const double w01 = (1 - t.fu) * t.fv, w11 = t.fu * t.fv;
        const double* g = src + ((static_cast<std::size_t>(p) * r + a) * r + b) * c;
        double* d00 = dst + (static_cast<std::size_t>(t.v0) * feat_width + t.u0) * c;
        double* d10 = dst + (static_cast<std::size_t>(t.v0) * feat_width + t.u1) * c;
        double* d01 = dst + (static_cast<std::size_t>(t.v1) * feat_width + t.u0) * c;
        double* d11 = dst + (static_cast<std::size_t>(t.v1) * feat_width + t.u1) * c;
        for (int k = 0; k < c; ++k) {
          d00[k] += w00 * g[k];
          d10[k] += w10 * g[k];
          d01[k] += w01 * g[k];
          d11[k] += w11 * g[k];
        }
      }
    }
  }
  return dfeat;
}

std::pair<Tensor, Tensor> assemble_t2e(const Tensor& patches, const ProjectionGrid& grid) {
  count_call();
  if (patches.rank() != 4 || patches.dim(0) != grid.num_planes() ||
      patches.dim(1) != grid.patch_res || patches.dim(2) != grid.patch_res) {
    throw DimensionError("assemble_t2e: patches " + patches.shape_str() +
                         " do not match grid");
  }
  const int c = patches.dim(3);
  const int r = grid.patch_res;
  const int w = grid.erp_width;
  const int h = grid.erp_height;
  Tensor acc({h, w, c});
  Tensor weight({h, w});
  double* accp = acc.data();
  double* wp = weight.data();
  const double* src = patches.data();

  for (int p = 0; p < grid.num_planes(); ++p) {
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < r; ++j) {
        const std::size_t gi = grid.at(p, i, j);
        if (!grid.valid[gi]) continue;
        const BilinearTaps t = taps(grid.u[gi], grid.v[gi], w, h);
        const double ws[4] = {(1 - t.fu) * (1 - t.fv), t.fu * (1 - t.fv),
                              (1 - t.fu) * t.fv, t.fu * t.fv};
        const std::size_t px[4] = {static_cast<std::size_t>(t.v0) * w + t.u0,
                                   static_cast<std::size_t>(t.v0) * w + t.u1,
                                   static_cast<std::size_t>(t.v1) * w + t.u0,
                                   static_cast<std::size_t>(t.v1) * w + t.u1};
        const double* g = src + gi * c;
        for (int n = 0; n < 4; ++n) {
          if (ws[n] <= 0.0) continue;
          wp[px[n]] += ws[n];
          double* d = accp + px[n] * c;
          for (int k = 0; k < c; ++k) d[k] += ws[n] * g[k];
        }
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double ww = wp[static_cast<std::size_t>(y) * w + x];
      if (ww > 0.0) {
        double* d = accp + (static_cast<std::size_t>(y) * w + x) * c;
        for (int k = 0; k < c; ++k) d[k] /= ww;
      }
    }
  }
  return {std::move(acc), std::move(weight)};
}

Tensor assemble_t2e_nearest(const Tensor& patches, const ProjectionGrid& grid, double fill) {
  count_call();
  if (patches.rank() != 3 || patches.dim(0) != grid.num_planes() ||
      patches.dim(1) != grid.patch_res || patches.dim(2) != grid.patch_res) {
    throw DimensionError("assemble_t2e_nearest: patches " + patches.shape_str() +
                         " do not match grid");
  }
  const int r = grid.patch_res;
  const int w = grid.erp_width;
  const int h = grid.erp_height;
  Tensor out({h, w}, fill);
  for (int p = 0; p < grid.num_planes(); ++p) {
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < r; ++j) {
        const std::size_t gi = grid.at(p, i, j);
        if (!grid.valid[gi]) continue;
        int un = static_cast<int>(std::lround(grid.u[gi]));
        int vn = static_cast<int>(std::lround(grid.v[gi]));
        if (un >= w) un -= w;
        if (vn > h - 1) vn = h - 1;
        out(vn, un) = patches(p, i, j);
      }
    }
  }
  return out;
}

}  // namespace dpp
