#pragma once

#include <vector>

#include "dpp/errors.hpp"

namespace dpp {

// Point on the unit sphere. Latitude in [-pi/2, pi/2], longitude normalized
// into [-pi, pi) by every constructor.
struct SphericalPoint {
  double lat = 0.0;
  double lon = 0.0;

  SphericalPoint() = default;
  SphericalPoint(double lat_rad, double lon_rad);
};

// Normalizes a longitude into [-pi, pi).
double wrap_longitude(double lon);

// Great-circle angle between two points, in radians.
double angular_distance(const SphericalPoint& a, const SphericalPoint& b);

struct PlanarCoord {
  double x = 0.0;
  double y = 0.0;
};

// Gnomonic plane tangent to the sphere at `center`. The square patch spans
// `fov` radians edge to edge and is rasterized at `resolution` pixels per
// side. fov must lie strictly inside (0, pi): the projection diverges 90
// degrees away from the tangent point.
struct TangentPlane {
  SphericalPoint center;
  double fov = 0.0;
  int resolution = 0;

  TangentPlane(SphericalPoint center, double fov_rad, int resolution_px);
};

// Ordered set of tangent planes. Plane order is part of the contract:
// downstream feature pairing matches patches by index.
struct TangentLayout {
  std::vector<TangentPlane> planes;
};

// Projects a point onto the plane. Units are tangent-plane units (distance 1
// equals 45 degrees from the center along a great circle). Throws
// HemisphereViolation when the point is 90 degrees or more from the center.
PlanarCoord gnomonic_forward(const SphericalPoint& p, const TangentPlane& plane);

// Inverse projection; total on finite (x, y). (0, 0) maps to the center.
SphericalPoint gnomonic_inverse(double x, double y, const TangentPlane& plane);

// The default 18-plane layout: 3 latitude rings at {+45, 0, -45} degrees,
// 6 planes per ring at longitudes {0, 60, ..., 300} degrees. Ring-major
// north-to-south, longitude ascending within a ring.
TangentLayout default_layout_18(double fov_rad, int resolution_px);

}  // namespace dpp
