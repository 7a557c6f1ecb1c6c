#pragma once

#include <cstdint>
#include <vector>

#include "dpp/rng.hpp"
#include "dpp/sphere_geometry.hpp"
#include "dpp/tensor.hpp"

namespace dpp {

// Photometric shift applied to source-domain images. All-identity means the
// image is left untouched (target domain).
struct StyleParams {
  double brightness = 0.0;    // additive offset
  double contrast = 1.0;      // gain about mid-gray
  double hue_rotation = 0.0;  // radians, rotation about the RGB gray axis
  double noise_sigma = 0.0;   // additive Gaussian noise stddev

  bool identity() const {
    return brightness == 0.0 && contrast == 1.0 && hue_rotation == 0.0 &&
           noise_sigma == 0.0;
  }
};

// Classes: 0 background, 1 disk, 2 stripe, 3 polygon, 4 ring.
struct SceneSpec {
  std::uint64_t seed = 0;
  int num_objects = 7;
  int num_classes = 5;
  StyleParams style;
  bool polar_bias = false;  // bias placements toward the poles (target domain)
};

// One object, defined in angular coordinates on the sphere and only later
// rasterized to ERP — the panoramic distortion is geometric by construction.
struct SceneObject {
  int cls = 0;
  SphericalPoint center{0.0, 0.0};
  double radius = 0.0;   // angular radius
  double param_a = 0.0;  // stripe half-width / polygon sides / ring inner fraction
  double param_b = 0.0;  // stripe orientation / polygon phase
  double color[3] = {0.0, 0.0, 0.0};
};

struct SynthImage {
  Tensor image;   // H x W x 3 in [0,1]
  Tensor labels;  // H x W class ids
};

// Deterministic scene draw for one image; independent of the style transform.
std::vector<SceneObject> sample_scene_objects(const SceneSpec& spec,
                                              std::uint64_t image_index);

// Rasterize objects to an ERP image + exact label map (painter's order).
SynthImage render_scene(const SceneSpec& spec, const std::vector<SceneObject>& objects,
                        std::uint64_t image_index, int erp_h, int erp_w);

// Contrast -> brightness -> hue rotation -> noise, then clamp to [0,1].
void apply_style(Tensor& image, const StyleParams& style, Rng& rng);

std::vector<SynthImage> generate(const SceneSpec& spec, int erp_h, int erp_w, int count);

}  // namespace dpp
