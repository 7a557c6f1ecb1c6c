#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "dpp/resampler.hpp"
#include "dpp/rng.hpp"
#include "test_util.hpp"

using namespace dpp;
using dpptest::bit_equal;
using dpptest::random_tensor;

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg = kPi / 180.0;

ProjectionGrid default_grid(int res = 64, int h = 128, int w = 256) {
  return build_grid(default_layout_18(80 * kDeg, res), h, w);
}
}  // namespace

TEST_CASE("build_grid covers 18 planes with finite, valid coordinates") {
  ProjectionGrid grid = default_grid();
  REQUIRE(grid.num_planes() == 18);
  REQUIRE(grid.patch_res == 64);
  REQUIRE(grid.u.size() == 18u * 64 * 64);
  for (std::size_t i = 0; i < grid.u.size(); ++i) {
    CHECK(grid.valid[i] == 1);
    CHECK(std::isfinite(grid.u[i]));
    CHECK(std::isfinite(grid.v[i]));
    CHECK(grid.u[i] >= 0.0);
    CHECK(grid.u[i] < 256.0);
    CHECK(grid.v[i] >= 0.0);
    CHECK(grid.v[i] <= 127.0);
  }
}

TEST_CASE("patch center of the (0,0)-centered plane maps to the ERP midpoint") {
  // Odd resolution so a pixel sits exactly on the tangent point.
  ProjectionGrid grid = build_grid(default_layout_18(80 * kDeg, 65), 128, 256);
  // Plane 6 is the first equator plane (lat 0, lon 0); middle pixel is (32, 32).
  const std::size_t gi = grid.at(6, 32, 32);
  CHECK(std::abs(grid.u[gi] - 128.0) < 1e-9);
  CHECK(std::abs(grid.v[gi] - 127.0 / 2.0) < 1e-9);
}

TEST_CASE("plane centered at longitude 180 straddles the wrap seam") {
  ProjectionGrid grid = default_grid();
  // Plane 9 = equator ring, longitude 180 degrees.
  double umin = 1e9, umax = -1e9;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      const double u = grid.u[grid.at(9, i, j)];
      umin = std::min(umin, u);
      umax = std::max(umax, u);
    }
  CHECK(umin < 64.0);   // west of the seam (u near 0)
  CHECK(umax > 192.0);  // east of the seam (u near W)
}

TEST_CASE("build_grid rejects bad dimensions") {
  TangentLayout layout = default_layout_18(80 * kDeg, 8);
  CHECK_THROWS_AS(build_grid(layout, 2, 4), DimensionError);
  CHECK_THROWS_AS(build_grid(TangentLayout{}, 64, 128), DimensionError);
}

TEST_CASE("sampling a constant ERP yields the constant everywhere") {
  ProjectionGrid grid = default_grid(32, 64, 128);
  Tensor erp({64, 128, 2}, 3.5);
  Tensor patches = sample_erp(erp, grid);
  REQUIRE(patches.shape() == std::vector<int>{18, 32, 32, 2});
  for (std::size_t i = 0; i < patches.size(); ++i) CHECK(patches[i] == 3.5);
}

TEST_CASE("sampling reproduces a function linear in pixel coordinates") {
  // Bilinear interpolation is exact on per-cell linear data. The comparison
  // skips seam cells (u interpolating between column W-1 and column 0), where
  // a globally linear-in-u image is discontinuous.
  const int h = 64, w = 128;
  ProjectionGrid grid = default_grid(32, h, w);
  Tensor erp({h, w, 1});
  const double a = 0.37, b = -0.11;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) erp(v, u, 0) = a * u + b * v;
  Tensor patches = sample_erp(erp, grid);
  double worst = 0.0;
  for (int p = 0; p < 18; ++p)
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j) {
        const std::size_t gi = grid.at(p, i, j);
        if (std::floor(grid.u[gi]) >= w - 1) continue;  // seam cell
        const double want = a * grid.u[gi] + b * grid.v[gi];
        worst = std::max(worst, std::abs(patches(p, i, j, 0) - want));
      }
  CHECK(worst < 1e-12);
}

TEST_CASE("sampling is exactly linear: sample(2X) = 2 sample(X)") {
  ProjectionGrid grid = default_grid(16, 32, 64);
  Rng rng(7);
  Tensor x = random_tensor({32, 64, 3}, rng);
  Tensor x2 = x;
  for (std::size_t i = 0; i < x2.size(); ++i) x2[i] *= 2.0;
  Tensor s1 = sample_erp(x, grid);
  Tensor s2 = sample_erp(x2, grid);
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s2[i] == 2.0 * s1[i]);
}

TEST_CASE("sampling respects general linear combinations") {
  ProjectionGrid grid = default_grid(16, 32, 64);
  Rng rng(8);
  Tensor x = random_tensor({32, 64, 2}, rng);
  Tensor y = random_tensor({32, 64, 2}, rng);
  const double a = 1.7, b = -0.4;
  Tensor mix({32, 64, 2});
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
  Tensor sm = sample_erp(mix, grid);
  Tensor sx = sample_erp(x, grid);
  Tensor sy = sample_erp(y, grid);
  for (std::size_t i = 0; i < sm.size(); ++i)
    CHECK(std::abs(sm[i] - (a * sx[i] + b * sy[i])) < 1e-12);
}

TEST_CASE("samples stay within the bounds of their four source neighbors") {
  const int h = 32, w = 64;
  ProjectionGrid grid = default_grid(16, h, w);
  Rng rng(9);
  Tensor x = random_tensor({h, w, 1}, rng);
  Tensor s = sample_erp(x, grid);
  for (int p = 0; p < 18; ++p)
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 16; ++j) {
        const std::size_t gi = grid.at(p, i, j);
        const int u0 = static_cast<int>(std::floor(grid.u[gi]));
        const int u1 = u0 + 1 == w ? 0 : u0 + 1;
        const int v0 = static_cast<int>(std::floor(grid.v[gi]));
        const int v1 = v0 + 1 >= h ? h - 1 : v0 + 1;
        double lo = 1e9, hi = -1e9;
        for (int vv : {v0, v1})
          for (int uu : {u0, u1}) {
            lo = std::min(lo, x(vv, uu, 0));
            hi = std::max(hi, x(vv, uu, 0));
          }
        CHECK(s(p, i, j, 0) >= lo - 1e-12);
        CHECK(s(p, i, j, 0) <= hi + 1e-12);
      }
}

TEST_CASE("circularly shifting the ERP and rotating the layout commute") {
  const int h = 32, w = 64, k = 13;
  TangentLayout base = default_layout_18(80 * kDeg, 16);
  TangentLayout shifted;
  for (const auto& p : base.planes) {
    shifted.planes.emplace_back(
        SphericalPoint(p.center.lat, p.center.lon + k * (2 * kPi / w)), p.fov,
        p.resolution);
  }
  ProjectionGrid g1 = build_grid(base, h, w);
  ProjectionGrid g2 = build_grid(shifted, h, w);
  Rng rng(10);
  Tensor x = random_tensor({h, w, 1}, rng);
  Tensor xs({h, w, 1});
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) xs(v, (u + k) % w, 0) = x(v, u, 0);
  Tensor s1 = sample_erp(x, g1);
  Tensor s2 = sample_erp(xs, g2);
  CHECK(dpptest::max_abs_diff(s1, s2) < 1e-9);
}

TEST_CASE("sample_erp rejects mismatched input dimensions") {
  ProjectionGrid grid = default_grid(16, 32, 64);
  CHECK_THROWS_AS(sample_erp(Tensor({16, 64, 1}), grid), DimensionError);
  CHECK_THROWS_AS(sample_erp(Tensor({32, 64}), grid), DimensionError);
}

TEST_CASE("nearest-neighbor label sampling matches rounded grid coordinates") {
  const int h = 32, w = 64;
  ProjectionGrid grid = default_grid(16, h, w);
  Rng rng(11);
  Tensor labels({h, w});
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels[i] = static_cast<double>(rng.uniform_int(5));
  Tensor patches = sample_erp_nearest(labels, grid);
  for (int p = 0; p < 18; ++p)
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 16; ++j) {
        const std::size_t gi = grid.at(p, i, j);
        int un = static_cast<int>(std::lround(grid.u[gi]));
        int vn = static_cast<int>(std::lround(grid.v[gi]));
        if (un >= w) un -= w;
        if (vn > h - 1) vn = h - 1;
        CHECK(patches(p, i, j) == labels(vn, un));
      }
}

TEST_CASE("sample_erp_backward is the exact adjoint of sample_erp") {
  ProjectionGrid grid = default_grid(16, 32, 64);
  Rng rng(12);
  Tensor x = random_tensor({32, 64, 2}, rng);
  Tensor y = random_tensor({18, 16, 16, 2}, rng);
  Tensor sx = sample_erp(x, grid);
  Tensor sty = sample_erp_backward(y, grid);
  double fwd = 0.0, adj = 0.0;
  for (std::size_t i = 0; i < sx.size(); ++i) fwd += sx[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) adj += x[i] * sty[i];
  CHECK(std::abs(fwd - adj) < 1e-10 * std::max(1.0, std::abs(fwd)));
}

TEST_CASE("strided feature sampling") {
  ProjectionGrid grid = default_grid(64, 128, 256);

  SUBCASE("stride 1 equals sample_erp bitwise") {
    Rng rng(13);
    Tensor x = random_tensor({128, 256, 2}, rng);
    CHECK(bit_equal(sample_features(x, grid, 1), sample_erp(x, grid)));
  }

  SUBCASE("stride 4 yields 16x16 patches and preserves constants") {
    CHECK(strided_patch_res(grid, 4) == 16);
    Tensor f({32, 64, 3}, 1.25);
    Tensor patches = sample_features(f, grid, 4);
    REQUIRE(patches.shape() == std::vector<int>{18, 16, 16, 3});
    for (std::size_t i = 0; i < patches.size(); ++i) CHECK(patches[i] == 1.25);
  }

  SUBCASE("mismatched feature dims raise StrideMismatch") {
    CHECK_THROWS_AS(sample_features(Tensor({31, 64, 3}), grid, 4), StrideMismatch);
    CHECK_THROWS_AS(sample_features(Tensor({32, 64, 3}), grid, 0), StrideMismatch);
  }

  SUBCASE("strided backward is the adjoint of strided sampling") {
    Rng rng(14);
    Tensor x = random_tensor({32, 64, 2}, rng);
    Tensor y = random_tensor({18, 16, 16, 2}, rng);
    Tensor sx = sample_features(x, grid, 4);
    Tensor sty = sample_features_backward(y, grid, 4, 32, 64);
    double fwd = 0.0, adj = 0.0;
    for (std::size_t i = 0; i < sx.size(); ++i) fwd += sx[i] * y[i];
    for (std::size_t i = 0; i < x.size(); ++i) adj += x[i] * sty[i];
    CHECK(std::abs(fwd - adj) < 1e-10 * std::max(1.0, std::abs(fwd)));
  }
}

TEST_CASE("assembly returns the constant on covered pixels and flags coverage") {
  const int h = 64, w = 128;
  ProjectionGrid grid = default_grid(32, h, w);
  Tensor erp({h, w, 1}, 2.25);
  auto [assembled, coverage] = assemble_t2e(sample_erp(erp, grid), grid);
  REQUIRE(assembled.shape() == std::vector<int>{h, w, 1});
  REQUIRE(coverage.shape() == std::vector<int>{h, w});
  int covered = 0;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      if (coverage(v, u) > 0.0) {
        ++covered;
        CHECK(std::abs(assembled(v, u, 0) - 2.25) < 1e-12);
      } else {
        CHECK(assembled(v, u, 0) == 0.0);
      }
    }
  CHECK(covered > static_cast<int>(0.85 * h * w));
}

TEST_CASE("coverage is exactly zero on rows no tangent pixel reaches") {
  const int h = 64, w = 128;
  ProjectionGrid grid = default_grid(32, h, w);
  double vmin = 1e9, vmax = -1e9;
  for (std::size_t i = 0; i < grid.v.size(); ++i) {
    vmin = std::min(vmin, grid.v[i]);
    vmax = std::max(vmax, grid.v[i]);
  }
  // Splatting touches floor(v) and floor(v)+1 only; rows strictly above
  // floor(vmin) (resp. below) are unreachable by construction.
  const int first_touchable = static_cast<int>(std::floor(vmin));
  const int last_touchable = std::min(h - 1, static_cast<int>(std::floor(vmax)) + 1);
  Tensor erp({h, w, 1}, 1.0);
  auto [assembled, coverage] = assemble_t2e(sample_erp(erp, grid), grid);
  (void)assembled;
  for (int v = 0; v < first_touchable; ++v)
    for (int u = 0; u < w; ++u) CHECK(coverage(v, u) == 0.0);
  for (int v = last_touchable + 1; v < h; ++v)
    for (int u = 0; u < w; ++u) CHECK(coverage(v, u) == 0.0);
  double row_sum = 0.0;
  for (int u = 0; u < w; ++u) row_sum += coverage(first_touchable, u);
  CHECK(row_sum > 0.0);
}

TEST_CASE("sample/assemble round trip reconstructs a smooth image to under 2%") {
  const int h = 128, w = 256;
  ProjectionGrid grid = default_grid(64, h, w);
  Tensor erp({h, w, 1});
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u)
      erp(v, u, 0) = 0.5 + 0.45 * std::sin(2 * kPi * u / w);
  auto [assembled, coverage] = assemble_t2e(sample_erp(erp, grid), grid);
  double mae = 0.0;
  int covered = 0;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u)
      if (coverage(v, u) > 0.0) {
        mae += std::abs(assembled(v, u, 0) - erp(v, u, 0));
        ++covered;
      }
  mae /= covered;
  CHECK(mae < 0.02 * 0.9);  // dynamic range is 0.9
}

TEST_CASE("assembly is deterministic across repeated calls") {
  ProjectionGrid grid = default_grid(32, 64, 128);
  Rng rng(15);
  Tensor patches = random_tensor({18, 32, 32, 2}, rng);
  auto [a1, c1] = assemble_t2e(patches, grid);
  auto [a2, c2] = assemble_t2e(patches, grid);
  CHECK(bit_equal(a1, a2));
  CHECK(bit_equal(c1, c2));
}

TEST_CASE("resampler entry points bump the call counter") {
  ProjectionGrid grid = default_grid(16, 32, 64);
  Tensor erp({32, 64, 1}, 1.0);
  const std::uint64_t before = resampler_call_count();
  sample_erp(erp, grid);
  CHECK(resampler_call_count() == before + 1);
  assemble_t2e(Tensor({18, 16, 16, 1}), grid);
  CHECK(resampler_call_count() == before + 2);
}
