#pragma once
// Pose-conditioned 3D generator: a mapping net turns a latent into a style
// vector, a small MLP field gives (density, color) at a point, and stratified
// alpha compositing renders images, expected depth, and coverage. Density is
// a softplus so it is nonnegative everywhere, and the composited image is a
// convex combination of tanh colors and the constant background, so it stays
// inside [-1,1] by construction.
#include "poseshift/gen3d/camera.hpp"
#include "poseshift/nn/layers.hpp"
#include "poseshift/numcore/ops.hpp"
#include "poseshift/numcore/paramset.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace poseshift::g3 {

using num::ArrX;
using num::IdxPtr;
using num::ParamSet;
using num::RngStream;
using num::Shape;
using num::Tensor;

struct RenderConfig {
  int img = 32;
  int samples = 20;  // stratified samples per ray, taken at stratum centers
  double bg = -1.0;  // background color composited with residual transmittance
};

struct GeneratorConfig {
  int z_dim = 16;
  int w_dim = 24;
  int hidden = 48;
  RenderConfig rc;
};

inline constexpr int kPosFreqs = 3;  // frequencies 1, 2, 4
inline constexpr int kPosDim = 3 + 3 * 2 * kPosFreqs;

template <class S>
struct Generator3D {
  GeneratorConfig cfg;
  ParamSet<S> params;
  ArrX<S> prior_mean, prior_std;  // latent prior fitted after reconstruction

  explicit Generator3D(const GeneratorConfig& c, RngStream rng) : cfg(c) {
    nn::init_dense(params, "map1", cfg.z_dim, cfg.hidden, rng.split("map1"));
    nn::init_dense(params, "map2", cfg.hidden, cfg.w_dim, rng.split("map2"));
    nn::init_dense(params, "f1", kPosDim + cfg.w_dim, cfg.hidden, rng.split("f1"));
    nn::init_dense(params, "f2", cfg.hidden, cfg.hidden, rng.split("f2"));
    nn::init_dense(params, "head", cfg.hidden, 4, rng.split("head"), 0.5);
    prior_mean = ArrX<S>::Zero(cfg.z_dim);
    prior_std = ArrX<S>::Ones(cfg.z_dim);
  }

  // z rows {B, z_dim} -> style rows {B, w_dim}
  Tensor<S> map_latent(const Tensor<S>& z) const {
    if (z->shape.size() != 2 || z->shape[1] != cfg.z_dim)
      throw std::invalid_argument("Generator3D: latent must be {B, z_dim}");
    return nn::dense(params, "map2", num::silu(nn::dense(params, "map1", z)));
  }

  ArrX<S> draw_prior(RngStream& rng) const {
    ArrX<S> xi = num::randn_array<S>(cfg.z_dim, rng);
    return prior_mean + (prior_std * xi).eval();
  }
};

template <class S>
struct RenderOutput {
  Tensor<S> image;     // {3, img, img}, values in [-1,1]
  Tensor<S> depth;     // {img, img}, expected ray depth in scene units
  Tensor<S> coverage;  // {img, img}, accumulated alpha in [0,1)
};

// renderer internals exposed for shared-code-path assertions
template <class S>
struct RenderProbe {
  std::vector<Eigen::Vector3d> positions;  // every field sample, ray-major
  ArrX<S> sigma;                           // densities the renderer used
};

namespace detail {

template <class S>
ArrX<S> posenc_rows(const std::vector<Eigen::Vector3d>& pts) {
  ArrX<S> pe(static_cast<std::int64_t>(pts.size()) * kPosDim);
  std::int64_t at = 0;
  for (const auto& p : pts) {
    for (int a = 0; a < 3; ++a) pe[at++] = static_cast<S>(p[a]);
    for (int f = 0; f < kPosFreqs; ++f) {
      const double fr = double(1 << f);
      for (int a = 0; a < 3; ++a) pe[at++] = static_cast<S>(std::sin(fr * p[a]));
      for (int a = 0; a < 3; ++a) pe[at++] = static_cast<S>(std::cos(fr * p[a]));
    }
  }
  return pe;
}

// density and color at encoded points; the single code path behind both the
// renderer and density_query
template <class S>
std::pair<Tensor<S>, Tensor<S>> field_eval(const Generator3D<S>& G, const Tensor<S>& pe,
                                           const Tensor<S>& w_rows) {
  auto h = num::silu(nn::dense(G.params, "f1", num::concat_cols(pe, w_rows)));
  h = num::silu(nn::dense(G.params, "f2", h));
  auto out = nn::dense(G.params, "head", h);
  auto sigma = num::softplus(num::add_scalar(num::slice_cols(out, 0, 1), static_cast<S>(-1.5)));
  auto rgb = num::tanh(num::slice_cols(out, 1, 3));
  return {sigma, rgb};
}

// scatter map summing sample rows into their ray row, {R*K,C} -> {R,C}
inline IdxPtr ray_sum_idx(int R, int K, int C) {
  return nn::detail::cache_lookup("raysum:" + std::to_string(R) + ":" + std::to_string(K) + ":" +
                                      std::to_string(C),
                                  [=] {
                                    std::vector<std::int64_t> idx(std::int64_t(R) * K * C);
                                    std::int64_t at = 0;
                                    for (int r = 0; r < R; ++r)
                                      for (int k = 0; k < K; ++k)
                                        for (int c = 0; c < C; ++c)
                                          idx[at++] = std::int64_t(r) * C + c;
                                    return idx;
                                  });
}

template <class S>
struct RaysResult {
  Tensor<S> rgb;       // {R, 3}
  Tensor<S> depth;     // {R, 1} scene units
  Tensor<S> coverage;  // {R, 1}
};

// Core marcher over a batch of scenes: w rows {B, w_dim}, one pose per scene,
// a shared pixel subset (empty = all pixels). Rays are stratified with one
// sample at each stratum center, so rendering is deterministic.
template <class S>
RaysResult<S> render_rays(const Generator3D<S>& G, const Tensor<S>& w,
                          const std::vector<CameraPose>& poses, const std::vector<int>& ray_ids,
                          RenderProbe<S>* probe = nullptr) {
  const int B = static_cast<int>(poses.size());
  if (w->shape != Shape{B, G.cfg.w_dim})
    throw std::invalid_argument("render_rays: style rows must be {B, w_dim}");
  const int img = G.cfg.rc.img, K = G.cfg.rc.samples;
  const int rays_per_scene = ray_ids.empty() ? img * img : static_cast<int>(ray_ids.size());
  const int R = B * rays_per_scene;
  const double dlt = (kFar - kNear) / K;

  std::vector<Eigen::Vector3d> pts;
  pts.reserve(static_cast<size_t>(R) * K);
  for (int b = 0; b < B; ++b) {
    const RayBundle rb = make_rays(poses[static_cast<size_t>(b)], img);
    for (int r = 0; r < rays_per_scene; ++r) {
      const int pix = ray_ids.empty() ? r : ray_ids[static_cast<size_t>(r)];
      const auto& d = rb.dirs.at(static_cast<size_t>(pix));
      for (int k = 0; k < K; ++k) pts.push_back(rb.origin + (kNear + (k + 0.5) * dlt) * d);
    }
  }
  auto pe = num::from_array<S>(Shape{R * K, kPosDim}, posenc_rows<S>(pts));
  auto w_pts = nn::repeat_rows(w, rays_per_scene * K);
  auto [sigma, rgb] = field_eval(G, pe, w_pts);
  if (probe) {
    probe->positions = std::move(pts);
    probe->sigma = sigma->value;
  }

  auto sigd = num::reshape(num::mul_scalar(sigma, static_cast<S>(dlt)), Shape{R, K});
  auto alpha = num::sub(num::constant<S>(Shape{R, K}, 1), num::exp(num::neg(sigd)));
  auto trans = num::exp(num::neg(num::sub(num::cumsum_last(sigd), sigd)));
  auto wgt = num::mul(trans, alpha);
  RaysResult<S> out;
  out.coverage = num::rowsum(wgt);

  ArrX<S> tmid(static_cast<std::int64_t>(R) * K);
  for (int r = 0; r < R; ++r)
    for (int k = 0; k < K; ++k) tmid[std::int64_t(r) * K + k] = static_cast<S>(kNear + (k + 0.5) * dlt);
  out.depth = num::div(num::rowsum(num::mul(wgt, num::from_array<S>(Shape{R, K}, std::move(tmid)))),
                       num::add_scalar(out.coverage, static_cast<S>(1e-6)));

  auto wflat = num::broadcast_cols(num::reshape(wgt, Shape{R * K, 1}), 3);
  auto lit = num::scatter_add(num::mul(wflat, rgb), ray_sum_idx(R, K, 3), Shape{R, 3});
  auto bgw = num::mul_scalar(num::sub(num::constant<S>(Shape{R, 1}, 1), out.coverage),
                             static_cast<S>(G.cfg.rc.bg));
  out.rgb = num::add(lit, num::broadcast_cols(bgw, 3));
  return out;
}

}  // namespace detail

// Render a full image from one latent and camera. Deterministic and
// differentiable with respect to the generator parameters.
template <class S>
RenderOutput<S> generate(const Generator3D<S>& G, const Tensor<S>& z, const CameraPose& c,
                         RenderProbe<S>* probe = nullptr) {
  Tensor<S> zr = z;
  if (zr->shape.size() == 1) zr = num::reshape(zr, Shape{1, z->shape[0]});
  auto w = G.map_latent(zr);
  auto rr = detail::render_rays(G, w, {c}, {}, probe);
  const int img = G.cfg.rc.img;
  RenderOutput<S> out;
  out.image = num::reshape(nn::rows_to_chw(rr.rgb, 1, 3, img, img), Shape{3, img, img});
  out.depth = num::reshape(rr.depth, Shape{img, img});
  out.coverage = num::reshape(rr.coverage, Shape{img, img});
  return out;
}

// Field density at explicit points, differentiable w.r.t. generator
// parameters; shares field_eval with the renderer.
template <class S>
Tensor<S> density_query(const Generator3D<S>& G, const Tensor<S>& z,
                        const std::vector<Eigen::Vector3d>& pts) {
  for (const auto& p : pts)
    if (p.array().abs().maxCoeff() > kSceneBound)
      throw std::out_of_range("density_query: point outside scene bounds");
  Tensor<S> zr = z;
  if (zr->shape.size() == 1) zr = num::reshape(zr, Shape{1, z->shape[0]});
  auto w = G.map_latent(zr);
  auto pe = num::from_array<S>(Shape{static_cast<int>(pts.size()), kPosDim},
                               detail::posenc_rows<S>(pts));
  auto w_pts = nn::repeat_rows(w, static_cast<int>(pts.size()));
  return detail::field_eval(G, pe, w_pts).first;
}

}  // namespace poseshift::g3
