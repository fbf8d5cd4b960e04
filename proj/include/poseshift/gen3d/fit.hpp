#pragma once
// Multi-view reconstruction fitting for the generator: every training scene
// owns a latent row in an auxiliary table, and generator weights plus latents
// descend a joint photometric + depth + coverage loss on random ray subsets.
// Afterwards a diagonal Gaussian is fitted over the latent table so fresh
// scenes can be sampled from the learned prior.
#include "poseshift/gen3d/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace poseshift::g3 {

template <class S>
struct FitView {
  ArrX<S> image;       // flattened {3, img, img}, values in [-1,1]
  ArrX<S> depth_unit;  // flattened {img, img}, [0,1], background = 1
  CameraPose pose;
  int scene_id = 0;
};

struct FitConfig {
  int steps = 800;
  int scenes_per_batch = 4;
  int rays_per_scene = 256;
  double lr = 2e-3;
  double depth_w = 0.5;
  double cov_w = 0.25;
  double z_reg = 1e-3;
  std::uint64_t seed = 1;
};

struct FitStats {
  std::vector<double> losses;
  double final_loss = 0;
};

template <class S>
FitStats fit_generator(Generator3D<S>& G, const std::vector<FitView<S>>& views, int n_scenes,
                       const FitConfig& fc) {
  if (views.empty()) throw std::invalid_argument("fit_generator: no views");
  const int img = G.cfg.rc.img;
  const std::int64_t hw = std::int64_t(img) * img;
  std::vector<std::vector<int>> by_scene(static_cast<size_t>(n_scenes));
  for (size_t i = 0; i < views.size(); ++i) {
    const int sid = views[i].scene_id;
    if (sid < 0 || sid >= n_scenes) throw std::invalid_argument("fit_generator: scene_id out of range");
    if (views[i].image.size() != 3 * hw || views[i].depth_unit.size() != hw)
      throw std::invalid_argument("fit_generator: view buffer size mismatch");
    by_scene[static_cast<size_t>(sid)].push_back(static_cast<int>(i));
  }
  for (const auto& s : by_scene)
    if (s.empty()) throw std::invalid_argument("fit_generator: scene without views");

  RngStream rng = RngStream::root(fc.seed).split("fit");
  ParamSet<S> zset;
  zset.add("z", Shape{n_scenes, G.cfg.z_dim},
           num::randn_array<S>(std::int64_t(n_scenes) * G.cfg.z_dim, rng) * static_cast<S>(0.1));

  FitStats stats;
  const int Bs = std::min(fc.scenes_per_batch, n_scenes);
  const int Rs = std::min<std::int64_t>(fc.rays_per_scene, hw);
  for (int step = 0; step < fc.steps; ++step) {
    std::vector<int> scene_ids, view_ids, ray_ids;
    for (int b = 0; b < Bs; ++b) {
      const int sid = rng.uniform_int(0, n_scenes);
      scene_ids.push_back(sid);
      const auto& pool = by_scene[static_cast<size_t>(sid)];
      view_ids.push_back(pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size())))]);
    }
    for (int r = 0; r < Rs; ++r) ray_ids.push_back(rng.uniform_int(0, static_cast<int>(hw)));

    // constant targets for the sampled pixels
    const int R = Bs * Rs;
    ArrX<S> t_rgb(std::int64_t(R) * 3), t_dep(R), t_mask(R);
    std::vector<CameraPose> poses;
    for (int b = 0; b < Bs; ++b) {
      const auto& v = views[static_cast<size_t>(view_ids[static_cast<size_t>(b)])];
      poses.push_back(v.pose);
      for (int r = 0; r < Rs; ++r) {
        const int pix = ray_ids[static_cast<size_t>(r)];
        const std::int64_t row = std::int64_t(b) * Rs + r;
        for (int c = 0; c < 3; ++c) t_rgb[row * 3 + c] = v.image[c * hw + pix];
        const S du = v.depth_unit[pix];
        t_dep[row] = du;
        t_mask[row] = du < static_cast<S>(0.999) ? S(1) : S(0);
      }
    }
    const double mask_n = static_cast<double>(t_mask.template cast<double>().sum());

    double loss_val = 0;
    auto loss_fn = [&](ParamSet<S>&) {
      auto zb = num::take_rows(zset.at("z"), scene_ids);
      auto rr = detail::render_rays(G, G.map_latent(zb), poses, ray_ids);
      auto l_rgb = num::mse(rr.rgb, num::from_array<S>(Shape{R, 3}, t_rgb));
      auto mask = num::from_array<S>(Shape{R, 1}, t_mask);
      auto l_cov = num::mse(rr.coverage, mask);
      auto dunit = num::mul_scalar(num::add_scalar(rr.depth, static_cast<S>(-kNear)),
                                   static_cast<S>(1.0 / (kFar - kNear)));
      auto derr = num::mul(mask, num::square(num::sub(dunit, num::from_array<S>(Shape{R, 1}, t_dep))));
      auto l_dep = num::mul_scalar(num::sum_all(derr), static_cast<S>(1.0 / (mask_n + 1.0)));
      auto l_z = num::mean(num::square(zb));
      return num::add(num::add(l_rgb, num::mul_scalar(l_cov, static_cast<S>(fc.cov_w))),
                      num::add(num::mul_scalar(l_dep, static_cast<S>(fc.depth_w)),
                               num::mul_scalar(l_z, static_cast<S>(fc.z_reg))));
    };
    auto loss = loss_fn(G.params);
    loss_val = static_cast<double>(loss->value[0]);
    if (!std::isfinite(loss_val))
      throw num::NumericalError("fit_generator: non-finite loss at step " + std::to_string(step));
    auto table = num::backward(loss);
    num::GradMap<S> gG, gz;
    for (auto& [name, p] : G.params.items) gG[name] = table.array(p.value);
    for (auto& [name, p] : zset.items) gz[name] = table.array(p.value);
    num::adam_step(G.params, gG, static_cast<S>(fc.lr));
    num::adam_step(zset, gz, static_cast<S>(fc.lr * 5));  // latents move faster than weights
    stats.losses.push_back(loss_val);
  }
  if (!stats.losses.empty()) stats.final_loss = stats.losses.back();

  // diagonal Gaussian over the fitted latent table
  const auto& ztab = zset.at("z")->value;
  const int zd = G.cfg.z_dim;
  for (int d = 0; d < zd; ++d) {
    double m = 0, m2 = 0;
    for (int s = 0; s < n_scenes; ++s) {
      const double v = static_cast<double>(ztab[std::int64_t(s) * zd + d]);
      m += v;
      m2 += v * v;
    }
    m /= n_scenes;
    const double var = std::max(m2 / n_scenes - m * m, 1e-4);
    G.prior_mean[d] = static_cast<S>(m);
    G.prior_std[d] = static_cast<S>(std::sqrt(var));
  }
  return stats;
}

}  // namespace poseshift::g3
