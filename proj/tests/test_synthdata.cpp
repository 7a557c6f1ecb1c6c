#include <cmath>
#include <vector>

#include "doctest.h"
#include "dpp/resampler.hpp"
#include "dpp/synthdata.hpp"
#include "test_util.hpp"

using namespace dpp;
using dpptest::bit_equal;

namespace {
constexpr double kPi = 3.14159265358979323846;

SceneSpec target_spec(std::uint64_t seed = 99) {
  SceneSpec spec;
  spec.seed = seed;
  spec.polar_bias = true;
  return spec;
}

SceneSpec source_spec(std::uint64_t seed = 99) {
  SceneSpec spec;
  spec.seed = seed;
  spec.style = StyleParams{0.12, 1.25, 35.0 * kPi / 180.0, 0.06};
  return spec;
}
}  // namespace

TEST_CASE("generation is bit-identical for the same spec") {
  auto a = generate(target_spec(), 64, 128, 6);
  auto b = generate(target_spec(), 64, 128, 6);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(bit_equal(a[i].image, b[i].image));
    CHECK(bit_equal(a[i].labels, b[i].labels));
  }
  auto c = generate(target_spec(100), 64, 128, 1);
  CHECK_FALSE(bit_equal(a[0].image, c[0].image));
}

TEST_CASE("images are valid: values in [0,1], labels in class range") {
  auto imgs = generate(source_spec(), 64, 128, 4);
  for (const auto& im : imgs) {
    REQUIRE(im.image.shape() == std::vector<int>{64, 128, 3});
    REQUIRE(im.labels.shape() == std::vector<int>{64, 128});
    for (std::size_t i = 0; i < im.image.size(); ++i) {
      CHECK(im.image[i] >= 0.0);
      CHECK(im.image[i] <= 1.0);
    }
    for (std::size_t i = 0; i < im.labels.size(); ++i) {
      CHECK(im.labels[i] >= 0.0);
      CHECK(im.labels[i] <= 4.0);
      CHECK(im.labels[i] == std::floor(im.labels[i]));
    }
  }
}

TEST_CASE("every class appears in at least 90 percent of generated images") {
  const int count = 50;
  auto imgs = generate(target_spec(7), 64, 128, count);
  int present[5] = {0, 0, 0, 0, 0};
  for (const auto& im : imgs) {
    bool seen[5] = {false, false, false, false, false};
    for (std::size_t i = 0; i < im.labels.size(); ++i)
      seen[static_cast<int>(im.labels[i])] = true;
    for (int c = 0; c < 5; ++c) present[c] += seen[c] ? 1 : 0;
  }
  for (int c = 0; c < 5; ++c) CHECK(present[c] >= 45);
}

TEST_CASE("the first four objects cover every foreground class") {
  SceneSpec spec = target_spec(3);
  for (std::uint64_t idx = 0; idx < 10; ++idx) {
    auto objects = sample_scene_objects(spec, idx);
    REQUIRE(objects.size() == 7);
    bool covered[5] = {false, false, false, false, false};
    for (int i = 0; i < 4; ++i) covered[objects[static_cast<std::size_t>(i)].cls] = true;
    CHECK(covered[1]);
    CHECK(covered[2]);
    CHECK(covered[3]);
    CHECK(covered[4]);
  }
}

TEST_CASE("scene sampling is deterministic and independent of style") {
  SceneSpec plain = target_spec(21);
  SceneSpec styled = source_spec(21);
  styled.polar_bias = true;  // isolate the style knob
  auto a = sample_scene_objects(plain, 4);
  auto b = sample_scene_objects(styled, 4);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].cls == b[i].cls);
    CHECK(a[i].center.lat == b[i].center.lat);
    CHECK(a[i].center.lon == b[i].center.lon);
    CHECK(a[i].radius == b[i].radius);
  }
}

TEST_CASE("style changes pixels but never labels") {
  SceneSpec plain = target_spec(5);
  SceneSpec styled = source_spec(5);
  styled.polar_bias = true;  // same placement distribution as `plain`
  auto a = generate(plain, 64, 128, 3);
  auto b = generate(styled, 64, 128, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(bit_equal(a[i].labels, b[i].labels));
    CHECK_FALSE(bit_equal(a[i].image, b[i].image));
  }
}

TEST_CASE("polar bias changes the placement distribution") {
  SceneSpec biased = target_spec(6);
  SceneSpec flat = target_spec(6);
  flat.polar_bias = false;
  auto a = generate(biased, 64, 128, 2);
  auto b = generate(flat, 64, 128, 2);
  CHECK_FALSE(bit_equal(a[0].labels, b[0].labels));
}

TEST_CASE("identity style with no bias is the plain rendering") {
  SceneSpec spec;
  spec.seed = 8;
  auto once = generate(spec, 64, 128, 2);
  auto objects = sample_scene_objects(spec, 0);
  SynthImage direct = render_scene(spec, objects, 0, 64, 128);
  CHECK(bit_equal(once[0].image, direct.image));
  CHECK(bit_equal(once[0].labels, direct.labels));
}

TEST_CASE("a polar disk covers at least 3x the ERP area of an equatorial one") {
  SceneSpec spec;
  spec.seed = 1;
  SceneObject polar;
  polar.cls = 1;
  polar.center = SphericalPoint(80.0 * kPi / 180.0, 0.3);
  polar.radius = 0.15;
  polar.color[0] = 0.8;
  SceneObject equatorial = polar;
  equatorial.center = SphericalPoint(0.0, 0.3);

  SynthImage top = render_scene(spec, {polar}, 0, 128, 256);
  SynthImage mid = render_scene(spec, {equatorial}, 0, 128, 256);
  auto area = [](const SynthImage& im) {
    int n = 0;
    for (std::size_t i = 0; i < im.labels.size(); ++i)
      if (im.labels[i] == 1.0) ++n;
    return n;
  };
  const int polar_area = area(top);
  const int equator_area = area(mid);
  CHECK(equator_area > 0);
  CHECK(polar_area >= 3 * equator_area);
}

TEST_CASE("tangent label patches agree with the ERP labels they sample") {
  auto imgs = generate(target_spec(12), 64, 128, 1);
  ProjectionGrid grid =
      build_grid(default_layout_18(80.0 * kPi / 180.0, 32), 64, 128);
  Tensor patches = sample_erp_nearest(imgs[0].labels, grid);
  int checked = 0;
  for (int p = 0; p < grid.num_planes(); ++p)
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j) {
        const std::size_t gi = grid.at(p, i, j);
        if (!grid.valid[gi]) continue;
        int un = static_cast<int>(std::lround(grid.u[gi]));
        int vn = static_cast<int>(std::lround(grid.v[gi]));
        if (un >= 128) un -= 128;
        if (vn > 63) vn = 63;
        CHECK(patches(p, i, j) == imgs[0].labels(vn, un));
        ++checked;
      }
  CHECK(checked > 0);
}
