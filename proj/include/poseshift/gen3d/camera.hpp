#pragma once
// One-degree-of-freedom camera: an orbit at fixed radius and elevation,
// parameterized by azimuth alone. Conditioning uses the unit (cos, sin) pair.
// Ray geometry lives here so the neural renderer and the analytic world
// renderer march exactly the same rays.
#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <vector>

namespace poseshift::g3 {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kRadius = 2.2;      // orbit radius
inline constexpr double kElevation = 0.25;  // radians above the equator
inline constexpr double kFovHalf = 0.44;    // half field of view, radians
inline constexpr double kNear = 1.2;
inline constexpr double kFar = 3.2;
inline constexpr double kSceneBound = 2.0;  // axis bound containing every ray sample

inline double wrap_angle(double a) {
  double r = std::fmod(a, 2.0 * kPi);
  if (r < 0) r += 2.0 * kPi;
  return r;
}

struct CameraPose {
  double azimuth = 0;  // radians, wrapped to [0, 2*pi)
  CameraPose() = default;
  explicit CameraPose(double az) : azimuth(wrap_angle(az)) {}
};

inline std::array<double, 2> encode(const CameraPose& c) {
  return {std::cos(c.azimuth), std::sin(c.azimuth)};
}

struct RayBundle {
  Eigen::Vector3d origin;
  std::vector<Eigen::Vector3d> dirs;  // unit length, pixel-major (row y, then x)
};

// pinhole rays through pixel centers; +z is world up, row 0 is the top
inline RayBundle make_rays(const CameraPose& c, int img) {
  RayBundle rb;
  const double az = c.azimuth, el = kElevation;
  rb.origin = Eigen::Vector3d(kRadius * std::cos(el) * std::cos(az),
                              kRadius * std::cos(el) * std::sin(az), kRadius * std::sin(el));
  const Eigen::Vector3d fwd = (-rb.origin).normalized();
  const Eigen::Vector3d right = fwd.cross(Eigen::Vector3d(0, 0, 1)).normalized();
  const Eigen::Vector3d up = right.cross(fwd);
  const double tf = std::tan(kFovHalf);
  rb.dirs.reserve(static_cast<size_t>(img) * img);
  for (int y = 0; y < img; ++y)
    for (int x = 0; x < img; ++x) {
      const double u = (2.0 * (x + 0.5) / img - 1.0) * tf;
      const double v = (1.0 - 2.0 * (y + 0.5) / img) * tf;
      rb.dirs.push_back((fwd + u * right + v * up).normalized());
    }
  return rb;
}

// renderer depth in scene units -> [0,1] with background at 1
inline double depth_to_unit(double t) {
  const double d = (t - kNear) / (kFar - kNear);
  return d < 0 ? 0 : (d > 1 ? 1 : d);
}

}  // namespace poseshift::g3
