// Camera geometry, volume renderer, density queries, discriminator, and
// reconstruction fitting.
#include "doctest.h"

#include "poseshift/gen3d/discriminator.hpp"
#include "poseshift/gen3d/fit.hpp"
#include "poseshift/gen3d/generator.hpp"
#include "poseshift/numcore/gradcheck.hpp"

#include <cmath>
#include <vector>

using namespace poseshift;
using g3::CameraPose;
using num::ArrX;
using num::RngStream;
using num::Shape;
using num::Tensor;

namespace {

g3::GeneratorConfig tiny_cfg() {
  g3::GeneratorConfig c;
  c.rc.img = 8;
  c.rc.samples = 6;
  return c;
}

// analytic sphere at the origin: returns (hit, distance, shaded color)
struct SphereHit {
  bool hit = false;
  double t = 0;
  double shade = 0;
};

SphereHit sphere_trace(const Eigen::Vector3d& o, const Eigen::Vector3d& d, double radius) {
  const double b = o.dot(d);
  const double disc = b * b - (o.squaredNorm() - radius * radius);
  SphereHit h;
  if (disc <= 0) return h;
  const double t = -b - std::sqrt(disc);
  if (t <= 0) return h;
  h.hit = true;
  h.t = t;
  const Eigen::Vector3d n = (o + t * d).normalized();
  const Eigen::Vector3d light = Eigen::Vector3d(0.3, -0.5, 0.8).normalized();
  h.shade = 0.25 + 0.75 * std::max(0.0, n.dot(light));
  return h;
}

}  // namespace

TEST_CASE("camera wrapping, encoding, and ray geometry") {
  CHECK(g3::wrap_angle(-0.1) == doctest::Approx(2 * g3::kPi - 0.1));
  CHECK(g3::wrap_angle(7.0) == doctest::Approx(7.0 - 2 * g3::kPi));
  CameraPose c(9.0);
  CHECK(c.azimuth >= 0.0);
  CHECK(c.azimuth < 2 * g3::kPi);
  auto e = g3::encode(c);
  CHECK(e[0] * e[0] + e[1] * e[1] == doctest::Approx(1.0).epsilon(1e-12));

  auto rb = g3::make_rays(CameraPose(1.1), 16);
  CHECK(rb.origin.norm() == doctest::Approx(g3::kRadius).epsilon(1e-12));
  REQUIRE(rb.dirs.size() == 256);
  for (const auto& d : rb.dirs) CHECK(d.norm() == doctest::Approx(1.0).epsilon(1e-12));
  // center rays aim at the origin region: the midpoint of the frustum axis
  Eigen::Vector3d mid = rb.origin + g3::kRadius * ((rb.dirs[119] + rb.dirs[136]) * 0.5).normalized();
  CHECK(mid.norm() < 0.2);

  CHECK(g3::depth_to_unit(g3::kNear) == 0.0);
  CHECK(g3::depth_to_unit(g3::kFar) == 1.0);
  CHECK(g3::depth_to_unit(0.0) == 0.0);
  CHECK(g3::depth_to_unit(99.0) == 1.0);
}

TEST_CASE("rendering is deterministic and bounded") {
  g3::Generator3D<double> G(tiny_cfg(), RngStream::root(5));
  RngStream rng = RngStream::root(6);
  auto z = num::randn<double>(Shape{16}, rng);
  auto a = g3::generate(G, z, CameraPose(0.7));
  auto b = g3::generate(G, z, CameraPose(0.7));
  CHECK((a.image->value == b.image->value).all());
  CHECK((a.depth->value == b.depth->value).all());
  CHECK(a.image->shape == Shape{3, 8, 8});
  CHECK(a.depth->shape == Shape{8, 8});
  CHECK(a.coverage->shape == Shape{8, 8});
  CHECK(a.image->value.minCoeff() >= -1.0);
  CHECK(a.image->value.maxCoeff() <= 1.0);
  CHECK(a.coverage->value.minCoeff() >= 0.0);
  CHECK(a.coverage->value.maxCoeff() < 1.0);
  // depth expectation stays inside the marched interval wherever rays hit
  for (int i = 0; i < 64; ++i)
    if (a.coverage->value[i] > 0.5) {
      CHECK(a.depth->value[i] >= g3::kNear * (1.0 - 1e-5));
      CHECK(a.depth->value[i] <= g3::kFar);
    }
  auto c = g3::generate(G, z, CameraPose(2.9));
  CHECK((c.image->value != a.image->value).any());

  auto zbad = num::zeros<double>(Shape{7});
  CHECK_THROWS_AS(g3::generate(G, zbad, CameraPose(0.0)), std::invalid_argument);
}

TEST_CASE("constant zero density leaves only background") {
  g3::Generator3D<double> G(tiny_cfg(), RngStream::root(7));
  // force the density head to a large negative raw value: weights to zero,
  // sigma bias very low
  G.params.at("head.w")->value.setZero();
  G.params.at("head.b")->value.setZero();
  G.params.at("head.b")->value[0] = -40.0;
  RngStream rng = RngStream::root(8);
  auto z = num::randn<double>(Shape{16}, rng);
  auto out = g3::generate(G, z, CameraPose(0.3));
  CHECK(out.coverage->value.maxCoeff() < 1e-12);
  CHECK((out.image->value + 1.0).abs().maxCoeff() < 1e-11);
}

TEST_CASE("mean-pixel gradient passes the finite-difference check") {
  g3::Generator3D<double> G(tiny_cfg(), RngStream::root(9));
  RngStream zr = RngStream::root(10);
  auto z = num::randn<double>(Shape{16}, zr);
  auto loss_fn = [&](num::ParamSet<double>&) {
    auto out = g3::generate(G, z, CameraPose(0.9));
    return num::mean(out.image);
  };
  const double err = num::check_gradients(G.params, loss_fn, 60, RngStream::root(11));
  CHECK(err < 1e-4);
}

TEST_CASE("density query is nonnegative, consistent, and bounds-checked") {
  g3::Generator3D<double> G(tiny_cfg(), RngStream::root(12));
  RngStream rng = RngStream::root(13);
  auto z = num::randn<double>(Shape{16}, rng);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 40; ++i)
    pts.emplace_back(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
  auto sig = g3::density_query(G, z, pts);
  CHECK(sig->shape == Shape{40, 1});
  CHECK(sig->value.minCoeff() >= 0.0);

  // constant field: zero point pathway in the first layer
  g3::Generator3D<double> C(tiny_cfg(), RngStream::root(14));
  auto& f1w = C.params.at("f1.w")->value;
  for (int r = 0; r < g3::kPosDim; ++r)
    for (int c = 0; c < C.cfg.hidden; ++c) f1w[std::int64_t(r) * C.cfg.hidden + c] = 0.0;
  std::vector<Eigen::Vector3d> base{{0.1, 0.2, 0.3}, {-0.5, 0.4, 0.0}};
  std::vector<Eigen::Vector3d> shifted{{0.7, -0.2, -0.3}, {0.0, 0.0, 1.2}};
  auto s0 = g3::density_query(C, z, base);
  auto s1 = g3::density_query(C, z, shifted);
  CHECK((s0->value == s1->value).all());

  std::vector<Eigen::Vector3d> oob{{2.5, 0.0, 0.0}};
  CHECK_THROWS_AS(g3::density_query(G, z, oob), std::out_of_range);
}

TEST_CASE("density query reproduces the renderer's own samples") {
  g3::Generator3D<double> G(tiny_cfg(), RngStream::root(15));
  RngStream rng = RngStream::root(16);
  auto z = num::randn<double>(Shape{16}, rng);
  g3::RenderProbe<double> probe;
  auto out = g3::generate(G, z, CameraPose(1.7), &probe);
  REQUIRE(probe.positions.size() == size_t(8 * 8 * 6));
  auto sig = g3::density_query(G, z, probe.positions);
  CHECK((sig->value == probe.sigma).all());
}

TEST_CASE("discriminator scores are zero at init and deterministic") {
  g3::Discriminator<double> D(32, RngStream::root(17));
  RngStream rng = RngStream::root(18);
  auto imgs = num::randn<double>(Shape{3, 3, 32, 32}, rng);
  std::vector<CameraPose> poses{CameraPose(0.1), CameraPose(2.0), CameraPose(4.4)};
  auto s = g3::discriminate(D, imgs, poses);
  CHECK(s->shape == Shape{3, 1});
  CHECK((s->value == 0.0).all());

  g3::Discriminator<double> Dv(32, RngStream::root(17), true);
  auto s1 = g3::discriminate(Dv, imgs, poses);
  auto s2 = g3::discriminate(Dv, imgs, poses);
  CHECK((s1->value == s2->value).all());
  CHECK((s1->value != 0.0).any());
  // pose conditioning reaches the score
  std::vector<CameraPose> other{CameraPose(3.1), CameraPose(2.0), CameraPose(4.4)};
  auto s3 = g3::discriminate(Dv, imgs, other);
  CHECK(s3->value[0] != s1->value[0]);
  CHECK(s3->value[1] == s1->value[1]);

  auto single = g3::discriminate(Dv, num::reshape(num::slice_cols(num::reshape(imgs, Shape{1, 3 * 3 * 32 * 32}), 0, 3 * 32 * 32), Shape{3, 32, 32}), CameraPose(0.1));
  CHECK(single->shape == Shape{1, 1});
  // batch size changes matmul blocking, so agreement is to rounding only
  CHECK(single->value[0] == doctest::Approx(s1->value[0]).epsilon(1e-12));

  CHECK_THROWS_AS(g3::discriminate(D, imgs, std::vector<CameraPose>{CameraPose(0.0)}),
                  std::invalid_argument);
}

TEST_CASE("discriminator gradient passes the finite-difference check") {
  g3::Discriminator<double> D(8, RngStream::root(19), true);
  RngStream rng = RngStream::root(20);
  auto imgs = num::randn<double>(Shape{2, 3, 8, 8}, rng);
  std::vector<CameraPose> poses{CameraPose(0.4), CameraPose(5.1)};
  auto loss_fn = [&](num::ParamSet<double>&) {
    return num::mean(g3::discriminate(D, imgs, poses));
  };
  const double err = num::check_gradients(D.params, loss_fn, 60, RngStream::root(21));
  CHECK(err < 1e-4);
}

TEST_CASE("fitting a known sphere gives sane depth") {
  g3::GeneratorConfig gc;
  gc.rc.img = 16;
  gc.rc.samples = 16;
  g3::Generator3D<double> G(gc, RngStream::root(22));

  const double radius = 0.7;
  const int img = gc.rc.img;
  std::vector<g3::FitView<double>> views;
  for (int v = 0; v < 10; ++v) {
    g3::FitView<double> fv;
    fv.pose = CameraPose(2 * g3::kPi * v / 10.0);
    fv.scene_id = 0;
    fv.image.resize(3 * img * img);
    fv.depth_unit.resize(img * img);
    auto rb = g3::make_rays(fv.pose, img);
    for (int p = 0; p < img * img; ++p) {
      auto h = sphere_trace(rb.origin, rb.dirs[size_t(p)], radius);
      const double col = h.hit ? 2.0 * h.shade - 1.0 : -1.0;
      for (int c = 0; c < 3; ++c) fv.image[c * img * img + p] = col;
      fv.depth_unit[p] = h.hit ? g3::depth_to_unit(h.t) : 1.0;
    }
    views.push_back(std::move(fv));
  }

  g3::FitConfig fc;
  fc.steps = 700;
  fc.scenes_per_batch = 1;
  fc.rays_per_scene = 192;
  fc.depth_w = 1.0;
  fc.seed = 23;
  auto stats = g3::fit_generator(G, views, 1, fc);
  REQUIRE(stats.losses.size() == 700);
  CHECK(stats.final_loss < stats.losses.front());
  CHECK(G.prior_std.minCoeff() > 0.0);

  // held-out pose: compare rendered depth to the analytic sphere depth
  CameraPose test_pose(0.33);
  auto z = num::from_array<double>(Shape{1, 16}, ArrX<double>(G.prior_mean));
  auto out = g3::generate(G, num::reshape(z, Shape{16}), test_pose);
  auto rb = g3::make_rays(test_pose, img);
  double mae = 0;
  int covered = 0;
  for (int p = 0; p < img * img; ++p) {
    auto h = sphere_trace(rb.origin, rb.dirs[size_t(p)], radius);
    if (!h.hit || out.coverage->value[p] < 0.5) continue;
    mae += std::abs(out.depth->value[p] - h.t);
    ++covered;
  }
  REQUIRE(covered > 20);
  mae /= covered;
  CHECK(mae < 0.05 * (g3::kFar - g3::kNear));
}
