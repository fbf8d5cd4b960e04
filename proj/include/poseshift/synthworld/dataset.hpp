#pragma once
// Domain specifications and dataset sampling over the procedural families.
// Every sample draws a fresh scene, a uniform camera azimuth, and renders the
// exact analytic image/depth pair.
#include "poseshift/numcore/rng.hpp"
#include "poseshift/synthworld/shapes.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace poseshift::world {

using num::RngStream;

struct DomainSpec {
  int family = kFamilyA;
  std::vector<double> weights{1.0};  // subclass mixture; single entry = no subclasses

  void validate() const {
    if (family < 0 || family >= kFamilies) throw std::invalid_argument("DomainSpec: bad family");
    if (weights.empty()) throw std::invalid_argument("DomainSpec: empty mixture");
    double sum = 0;
    for (double w : weights) {
      if (w < 0) throw std::invalid_argument("DomainSpec: negative weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("DomainSpec: weights must sum to 1");
    if (family == kFamilyC && weights.size() != kSubclasses)
      throw std::invalid_argument("DomainSpec: family C takes exactly 4 subclass weights");
    if (family != kFamilyC && weights.size() != 1)
      throw std::invalid_argument("DomainSpec: only family C has subclasses");
  }
};

inline DomainSpec domain_a() { return {kFamilyA, {1.0}}; }
inline DomainSpec domain_b() { return {kFamilyB, {1.0}}; }
inline DomainSpec domain_p1() { return {kFamilyP1, {1.0}}; }
inline DomainSpec domain_p2() { return {kFamilyP2, {1.0}}; }
inline DomainSpec domain_c_balanced() { return {kFamilyC, {0.25, 0.25, 0.25, 0.25}}; }
// the deliberately imbalanced base corpus: one dominant subclass
inline DomainSpec domain_c_imbalanced() {
  return {kFamilyC, {0.9, 1.0 / 30.0, 1.0 / 30.0, 1.0 / 30.0}};
}
inline DomainSpec domain_c_single(int k) {
  DomainSpec d{kFamilyC, {0, 0, 0, 0}};
  d.weights.at(static_cast<size_t>(k)) = 1.0;
  return d;
}

template <class S>
struct SceneSample {
  SceneParams params;
  CameraPose pose;
  num::ArrX<S> image;  // {3*img*img} planar, [-1,1]
  num::ArrX<S> depth;  // {img*img} normalized, background exactly 1
  int label = 0;       // family label
  int subclass = -1;
};

inline SceneParams sample_scene(const DomainSpec& domain, RngStream& rng) {
  domain.validate();
  SceneParams sp;
  sp.family = domain.family;
  sp.yaw = rng.uniform(0.0, 2.0 * g3::kPi);
  if (domain.family == kFamilyC) {
    double u = rng.uniform(), acc = 0;
    sp.subclass = static_cast<int>(domain.weights.size()) - 1;
    for (size_t k = 0; k < domain.weights.size(); ++k) {
      acc += domain.weights[k];
      if (u < acc) {
        sp.subclass = static_cast<int>(k);
        break;
      }
    }
  }
  switch (domain.family) {
    case kFamilyA:
      sp.dof = {rng.uniform(0.55, 0.75), rng.uniform(0.45, 0.65), rng.uniform(0.45, 0.65),
                rng.uniform(2.5, 4.5), rng.uniform(0.03, 0.08), double(rng.uniform_int(3, 6))};
      break;
    case kFamilyB:
      sp.dof = {rng.uniform(0.40, 0.52), rng.uniform(0.40, 0.52), rng.uniform(0.36, 0.46),
                rng.uniform(0.16, 0.24), rng.uniform(-0.15, 0.15), rng.uniform(0.05, 0.09)};
      break;
    case kFamilyC: {
      const bool thick = (sp.subclass & 1) != 0;  // low bit: minor-radius bin
      sp.dof = {rng.uniform(0.45, 0.60),
                thick ? rng.uniform(0.20, 0.26) : rng.uniform(0.10, 0.14),
                rng.uniform(0.14, 0.19), 0, 0, 0};
      break;
    }
    case kFamilyP1:
      sp.dof = {rng.uniform(0.55, 0.70), rng.uniform(0.03, 0.07), double(rng.uniform_int(5, 8)),
                0, 0, 0};
      break;
    case kFamilyP2:
      sp.dof = {rng.uniform(0.55, 0.70), rng.uniform(0.22, 0.30), rng.uniform(0.50, 0.62), 0, 0, 0};
      break;
    default:
      throw std::invalid_argument("sample_scene: bad family");
  }
  return sp;
}

// N renders with uniformly random azimuth; each sample gets its own split
// stream so generation order never changes the content
template <class S>
std::vector<SceneSample<S>> make_dataset(const DomainSpec& domain, int n, RngStream rng,
                                         int img = 32) {
  if (n < 1) throw std::invalid_argument("make_dataset: need n >= 1");
  domain.validate();
  std::vector<SceneSample<S>> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    RngStream sr = rng.split(static_cast<std::uint64_t>(i));
    SceneSample<S> s;
    s.params = sample_scene(domain, sr);
    s.pose = CameraPose(sr.uniform(0.0, 2.0 * g3::kPi));
    auto r = render_scene(s.params, s.pose, img);
    s.image = r.rgb.cast<S>();
    s.depth = r.depth_unit.cast<S>();
    s.label = s.params.family;
    s.subclass = s.params.subclass;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace poseshift::world
