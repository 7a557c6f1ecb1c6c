#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dpp/sphere_geometry.hpp"
#include "dpp/tensor.hpp"

namespace dpp {

// Precomputed sampling coordinates realizing the ERP-to-tangent projection.
// For every tangent pixel of every plane, stores the continuous ERP pixel
// coordinate (u along longitude with wrap-around, v along latitude) that the
// pixel center maps to. Grids depend only on geometry and are built once per
// run.
struct ProjectionGrid {
  TangentLayout layout;
  int erp_height = 0;
  int erp_width = 0;
  int patch_res = 0;                // pixels per tangent patch side
  std::vector<double> u;            // [plane][row][col]
  std::vector<double> v;
  std::vector<std::uint8_t> valid;  // 1 where coords are finite and on-hemisphere

  int num_planes() const { return static_cast<int>(layout.planes.size()); }
  std::size_t at(int plane, int row, int col) const {
    return (static_cast<std::size_t>(plane) * patch_res + row) * patch_res + col;
  }
};

ProjectionGrid build_grid(const TangentLayout& layout, int erp_height, int erp_width);

// Bilinear resampling of an H x W x C ERP tensor into P x r x r x C tangent
// patches. Wraps in u, clamps in v. Exactly linear in the input.
Tensor sample_erp(const Tensor& erp, const ProjectionGrid& grid);

// Nearest-neighbor variant for label maps (H x W -> P x r x r).
Tensor sample_erp_nearest(const Tensor& labels, const ProjectionGrid& grid);

// Adjoint of sample_erp: splats per-patch cogradients back onto the ERP
// raster with the same bilinear weights, no normalization. This is the exact
// transpose of the sampling operator, used to backpropagate through it.
Tensor sample_erp_backward(const Tensor& dpatches, const ProjectionGrid& grid);

// Resampling for stride-reduced feature maps: grid coordinates and patch
// resolution are divided by `stride` so that output patches align spatially
// with feature maps produced at that stride.
Tensor sample_features(const Tensor& features, const ProjectionGrid& grid, int stride);

Tensor sample_features_backward(const Tensor& dpatches, const ProjectionGrid& grid,
                                int stride, int feat_height, int feat_width);

// Side resolution of the patches produced by sample_features.
int strided_patch_res(const ProjectionGrid& grid, int stride);

// Back-projection: splats P x r x r x C tangent patches onto the ERP raster,
// accumulating value*weight and weight, then normalizes. Returns the
// assembled H x W x C tensor and the H x W coverage (accumulated weight,
// exactly zero where no tangent pixel reaches).
std::pair<Tensor, Tensor> assemble_t2e(const Tensor& patches, const ProjectionGrid& grid);

// Nearest-neighbor back-projection for label maps; uncovered pixels get
// `fill`. Used for label round-trip checks.
Tensor assemble_t2e_nearest(const Tensor& patches, const ProjectionGrid& grid,
                            double fill = -1.0);

// Number of resampling/assembly entry points executed so far in this process.
// Instrumentation for structural tests (e.g. that ERP-only evaluation never
// touches the resampler).
std::uint64_t resampler_call_count();

}  // namespace dpp
