#include "dpp/sphere_geometry.hpp"

#include <cmath>
#include <string>

namespace dpp {

double wrap_longitude(double lon) {
  double l = std::fmod(lon + M_PI, 2.0 * M_PI);
  if (l < 0.0) l += 2.0 * M_PI;
  return l - M_PI;
}

SphericalPoint::SphericalPoint(double lat_rad, double lon_rad) {
  if (!(lat_rad >= -M_PI / 2 && lat_rad <= M_PI / 2)) {
    throw ValidationError("SphericalPoint: latitude " + std::to_string(lat_rad) +
                          " outside [-pi/2, pi/2]");
  }
  lat = lat_rad;
  lon = wrap_longitude(lon_rad);
}

double angular_distance(const SphericalPoint& a, const SphericalPoint& b) {
  // atan2 form: well conditioned for both tiny and near-pi separations,
  // unlike acos of the dot product which loses half the mantissa near 0.
  const double dl = b.lon - a.lon;
  const double y = std::hypot(std::cos(b.lat) * std::sin(dl),
                              std::cos(a.lat) * std::sin(b.lat) -
                                  std::sin(a.lat) * std::cos(b.lat) * std::cos(dl));
  const double x = std::sin(a.lat) * std::sin(b.lat) +
                   std::cos(a.lat) * std::cos(b.lat) * std::cos(dl);
  return std::atan2(y, x);
}

TangentPlane::TangentPlane(SphericalPoint c, double fov_rad, int resolution_px)
    : center(c), fov(fov_rad), resolution(resolution_px) {
  if (!(fov > 0.0 && fov < M_PI)) {
    throw InvalidFov("TangentPlane: fov " + std::to_string(fov_rad) +
                     " rad outside (0, pi)");
  }
  if (resolution < 2) {
    throw InvalidResolution("TangentPlane: resolution " + std::to_string(resolution_px) +
                            " below 2");
  }
}

PlanarCoord gnomonic_forward(const SphericalPoint& p, const TangentPlane& plane) {
  const double lat0 = plane.center.lat;
  const double lon0 = plane.center.lon;
  const double dlon = p.lon - lon0;
  const double cos_c = std::sin(lat0) * std::sin(p.lat) +
                       std::cos(lat0) * std::cos(p.lat) * std::cos(dlon);
  if (cos_c <= 0.0) {
    throw HemisphereViolation("gnomonic_forward: point not on the visible hemisphere");
  }
  PlanarCoord out;
  out.x = std::cos(p.lat) * std::sin(dlon) / cos_c;
  out.y = (std::cos(lat0) * std::sin(p.lat) -
           std::sin(lat0) * std::cos(p.lat) * std::cos(dlon)) /
          cos_c;
  return out;
}

SphericalPoint gnomonic_inverse(double x, double y, const TangentPlane& plane) {
  const double rho = std::hypot(x, y);
  if (rho == 0.0) return plane.center;
  const double c = std::atan(rho);
  const double sin_c = std::sin(c);
  const double cos_c = std::cos(c);
  const double lat0 = plane.center.lat;
  const double lat = std::asin(std::fmin(
      1.0, std::fmax(-1.0, cos_c * std::sin(lat0) + y * sin_c * std::cos(lat0) / rho)));
  const double lon = plane.center.lon +
                     std::atan2(x * sin_c,
                                rho * std::cos(lat0) * cos_c - y * std::sin(lat0) * sin_c);
  return SphericalPoint(lat, lon);
}

TangentLayout default_layout_18(double fov_rad, int resolution_px) {
  if (!(fov_rad > 0.0 && fov_rad < M_PI)) {
    throw InvalidFov("default_layout_18: fov " + std::to_string(fov_rad) +
                     " rad outside (0, pi)");
  }
  if (resolution_px < 2) {
    throw InvalidResolution("default_layout_18: resolution " +
                            std::to_string(resolution_px) + " below 2");
  }
  TangentLayout layout;
  layout.planes.reserve(18);
  const double ring_lats[3] = {M_PI / 4, 0.0, -M_PI / 4};
  for (double lat : ring_lats) {
    for (int k = 0; k < 6; ++k) {
      const double lon = k * (M_PI / 3.0);
      layout.planes.emplace_back(SphericalPoint(lat, lon), fov_rad, resolution_px);
    }
  }
  return layout;
}

}  // namespace dpp
