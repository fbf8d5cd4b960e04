#pragma once
// Procedural shape universe: five families of signed-distance scenes with an
// orientation-breaking marker each, plus an analytic sphere-tracing renderer
// producing shaded images and exact normalized depth. Rendering depends on
// the camera only through (azimuth - yaw) and a camera-fixed light, so
// rotating the camera and counter-rotating the scene are the same render.
#include "poseshift/gen3d/camera.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace poseshift::world {

using g3::CameraPose;
using Vec3 = Eigen::Vector3d;
using ArrXd = Eigen::ArrayXd;

// global label vocabulary: family labels 0..4, family-C subclass labels 5..8
inline constexpr int kFamilyA = 0;   // bumpy superellipsoids (source)
inline constexpr int kFamilyB = 1;   // horned cubes (far target)
inline constexpr int kFamilyC = 2;   // torus creatures (debias target, 4 subclasses)
inline constexpr int kFamilyP1 = 3;  // ridged blobs (pose-guaranteed)
inline constexpr int kFamilyP2 = 4;  // dented blobs (pose-guaranteed)
inline constexpr int kFamilies = 5;
inline constexpr int kSubclasses = 4;
inline constexpr int kVocab = 9;  // class ids 0..8; the denoiser adds a null row

inline int subclass_label(int k) { return 5 + k; }

struct SceneParams {
  int family = kFamilyA;
  int subclass = -1;  // only family C uses subclasses
  double yaw = 0;     // object rotation about +z
  std::array<double, 6> dof{};
};

namespace detail {

inline double sd_sphere(const Vec3& p, const Vec3& c, double r) { return (p - c).norm() - r; }

inline double sd_round_box(const Vec3& p, const Vec3& h, double r) {
  const Vec3 q = p.cwiseAbs() - h;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0) - r;
}

inline double sd_ellipsoid(const Vec3& p, const Vec3& c, const Vec3& r) {
  const Vec3 q = (p - c).cwiseQuotient(r);
  const double k = q.norm();
  return (k - 1.0) * r.minCoeff();
}

// canonical-frame signed distance (conservative estimate, Lipschitz <= ~1.3)
inline double scene_sdf(const SceneParams& sp, const Vec3& p) {
  switch (sp.family) {
    case kFamilyA: {
      const double a = sp.dof[0], b = sp.dof[1], c = sp.dof[2], pw = sp.dof[3];
      const double amp = sp.dof[4], freq = sp.dof[5];
      const double q = std::pow(std::pow(std::abs(p.x() / a), pw) + std::pow(std::abs(p.y() / b), pw) +
                                    std::pow(std::abs(p.z() / c), pw),
                                1.0 / pw);
      double s = (q - 1.0) * std::min({a, b, c}) * 0.8;
      const double rad = p.norm();
      if (rad > 1e-9) {
        const double phi = std::atan2(p.y(), p.x());
        const double th = std::asin(std::clamp(p.z() / rad, -1.0, 1.0));
        s -= amp * std::cos(freq * phi) * std::cos(2.0 * th);
      }
      return std::min(s, sd_sphere(p, Vec3(a * 0.95, 0, 0.15), 0.13));
    }
    case kFamilyB: {
      const Vec3 h(sp.dof[0], sp.dof[1], sp.dof[2]);
      const double horn = sp.dof[3], tilt = sp.dof[4], rnd = sp.dof[5];
      double s = sd_round_box(p, h, rnd);
      const Vec3 horn_r(0.09, 0.09, horn);
      s = std::min(s, sd_ellipsoid(p, Vec3(h.x() * 0.55, tilt, h.z() + horn * 0.8), horn_r));
      s = std::min(s, sd_ellipsoid(p, Vec3(-h.x() * 0.55, -tilt, h.z() + horn * 0.8), horn_r));
      return std::min(s, sd_sphere(p, Vec3(h.x() + rnd + 0.04, -h.y() * 0.4, 0), 0.12));
    }
    case kFamilyC: {
      const double R = sp.dof[0], r = sp.dof[1], head = sp.dof[2];
      const double ring = std::sqrt(p.x() * p.x() + p.y() * p.y()) - R;
      double s = std::sqrt(ring * ring + p.z() * p.z()) - r;
      return std::min(s, sd_sphere(p, Vec3(R + r * 0.4 + 0.08, 0, 0.12), head));
    }
    case kFamilyP1: {
      const double r0 = sp.dof[0], amp = sp.dof[1], freq = sp.dof[2];
      double s = p.norm() - r0;
      const double rad = p.norm();
      if (rad > 1e-9) {
        const double phi = std::atan2(p.y(), p.x());
        const double th = std::asin(std::clamp(p.z() / rad, -1.0, 1.0));
        s -= amp * std::cos(freq * phi) * std::cos(th) * std::cos(3.0 * th);
      }
      return std::min(s, sd_sphere(p, Vec3(r0 * 0.97, 0, 0.18), 0.12));
    }
    case kFamilyP2: {
      const double r0 = sp.dof[0], dr = sp.dof[1], dd = sp.dof[2];
      double s = p.norm() - r0;
      // carved dents on two sides
      s = std::max(s, -(sd_sphere(p, Vec3(0, dd, dd * 0.4), dr)));
      s = std::max(s, -(sd_sphere(p, Vec3(-dd, -dd * 0.6, -dd * 0.3), dr * 0.85)));
      return std::min(s, sd_sphere(p, Vec3(r0 * 0.97, 0, 0.18), 0.12));
    }
    default:
      throw std::invalid_argument("scene_sdf: unknown family");
  }
}

inline Vec3 scene_normal(const SceneParams& sp, const Vec3& p) {
  const double h = 1e-4;
  const Vec3 n(scene_sdf(sp, p + Vec3(h, 0, 0)) - scene_sdf(sp, p - Vec3(h, 0, 0)),
               scene_sdf(sp, p + Vec3(0, h, 0)) - scene_sdf(sp, p - Vec3(0, h, 0)),
               scene_sdf(sp, p + Vec3(0, 0, h)) - scene_sdf(sp, p - Vec3(0, 0, h)));
  const double nn = n.norm();
  return nn > 1e-12 ? Vec3(n / nn) : Vec3(0, 0, 1);
}

// base albedo in [0,1] rgb
inline Vec3 albedo(const SceneParams& sp) {
  switch (sp.family) {
    case kFamilyA:
      return {0.85, 0.62, 0.30};
    case kFamilyB:
      return {0.35, 0.75, 0.38};
    case kFamilyC:
      // hue bin is the high subclass bit: warm vs cool creatures
      return (sp.subclass & 2) ? Vec3(0.30, 0.45, 0.88) : Vec3(0.88, 0.30, 0.28);
    case kFamilyP1:
      return {0.72, 0.35, 0.78};
    case kFamilyP2:
      return {0.46, 0.80, 0.80};
    default:
      return {0.5, 0.5, 0.5};
  }
}

}  // namespace detail

struct RenderedScene {
  ArrXd rgb;         // {3*img*img} planar chw, values in [-1,1]
  ArrXd depth_unit;  // {img*img}, [0,1] with background exactly 1
};

// Analytic sphere-traced render. Pure function of (params, pose): re-rendering
// reproduces both buffers bitwise.
inline RenderedScene render_scene(const SceneParams& sp, const CameraPose& cam, int img = 32) {
  // the camera orbit and the object yaw share one axis, so only their
  // difference matters; the light is pinned to the camera frame
  const CameraPose rel(cam.azimuth - sp.yaw);
  const g3::RayBundle rb = g3::make_rays(rel, img);
  const Vec3 fwd = (-rb.origin).normalized();
  const Vec3 right = fwd.cross(Vec3(0, 0, 1)).normalized();
  const Vec3 up = right.cross(fwd);
  const Vec3 light = (0.45 * right + 0.40 * up - 0.80 * fwd).normalized();

  RenderedScene out;
  const int hw = img * img;
  out.rgb = ArrXd::Constant(3 * hw, -1.0);
  out.depth_unit = ArrXd::Ones(hw);
  const Vec3 base = detail::albedo(sp);
  for (int pix = 0; pix < hw; ++pix) {
    const Vec3& dir = rb.dirs[static_cast<size_t>(pix)];
    double t = g3::kNear;
    bool hit = false;
    for (int it = 0; it < 160 && t < g3::kFar; ++it) {
      const double s = detail::scene_sdf(sp, rb.origin + t * dir);
      if (s < 1e-4) {
        hit = true;
        break;
      }
      t += std::max(s * 0.7, 2e-4);
    }
    if (!hit) continue;
    const Vec3 p = rb.origin + t * dir;
    const Vec3 n = detail::scene_normal(sp, p);
    const double shade = 0.25 + 0.75 * std::max(0.0, n.dot(light));
    for (int c = 0; c < 3; ++c) out.rgb[c * hw + pix] = 2.0 * base[c] * shade - 1.0;
    out.depth_unit[pix] = g3::depth_to_unit(t);
  }
  return out;
}

}  // namespace poseshift::world
