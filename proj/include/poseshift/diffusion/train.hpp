#pragma once
// Denoiser training: uniformly sampled timesteps, label dropout for
// classifier-free guidance, Adam updates, and a fixed probe batch evaluated
// before and after so loss improvement is measured on identical inputs.
#include "poseshift/diffusion/denoiser.hpp"
#include "poseshift/diffusion/schedule.hpp"
#include "poseshift/numcore/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace poseshift::diff {

// where an item's depth map came from, tallied during training so pipeline
// tests can assert the pairing each stage is supposed to use
enum class DepthSource { none = 0, own_render = 1, source_render = 2 };

template <class S>
struct DiffusionItem {
  num::ArrX<S> image;  // flattened {channels, H, W}, values in [-1,1]
  int label = -1;
  num::ArrX<S> depth;  // flattened {1, H, W}; empty when unused
  DepthSource depth_source = DepthSource::none;
};

struct TrainStats {
  std::vector<double> losses;       // one entry per optimizer step
  double initial_loss = 0;          // probe loss before the first update
  double final_loss = 0;            // probe loss after the last update
  std::array<std::int64_t, 3> depth_counts{0, 0, 0};  // items consumed, by DepthSource
};

namespace detail {

template <class S>
struct Batch {
  Tensor<S> q0;
  Tensor<S> eps;
  Tensor<S> depth;  // null when the model is depth-free
  std::vector<int> labels;
  std::vector<int> ts;
};

template <class S>
Batch<S> assemble(const std::vector<DiffusionItem<S>>& data, const std::vector<int>& pick,
                  const Denoiser<S>& model, const NoiseSchedule& sched, double drop_prob,
                  RngStream& rng, bool fixed_probe) {
  const int B = static_cast<int>(pick.size());
  const int C = model.cfg.channels, H = model.cfg.img, W = model.cfg.img;
  const std::int64_t per = std::int64_t(C) * H * W;
  num::ArrX<S> img(B * per), dep;
  if (model.cfg.depth_input) dep.resize(std::int64_t(B) * H * W);
  Batch<S> b;
  for (int i = 0; i < B; ++i) {
    const auto& item = data[static_cast<size_t>(pick[static_cast<size_t>(i)])];
    if (item.image.size() != per) throw std::invalid_argument("train_denoiser: item size mismatch");
    img.segment(i * per, per) = item.image;
    if (model.cfg.depth_input) {
      if (item.depth.size() != std::int64_t(H) * W)
        throw std::invalid_argument("train_denoiser: model takes depth but item has none");
      dep.segment(std::int64_t(i) * H * W, std::int64_t(H) * W) = item.depth;
    }
    const bool drop = !fixed_probe && rng.uniform() < drop_prob;
    b.labels.push_back(drop ? -1 : item.label);
    b.ts.push_back(fixed_probe ? 1 + (i * (sched.T - 1)) / std::max(1, B - 1)
                               : rng.uniform_int(1, sched.T + 1));
  }
  b.q0 = num::from_array<S>(num::Shape{B, C, H, W}, std::move(img));
  b.eps = num::randn<S>(num::Shape{B, C, H, W}, rng);
  if (model.cfg.depth_input) b.depth = num::from_array<S>(num::Shape{B, 1, H, W}, std::move(dep));
  return b;
}

template <class S>
Tensor<S> batch_loss(const Denoiser<S>& model, const Batch<S>& b, const NoiseSchedule& sched) {
  auto q_t = forward_perturb_batch(b.q0, b.ts, b.eps, sched);
  auto pred = model.predict(q_t, b.labels, b.ts, b.depth ? &b.depth : nullptr);
  return num::mse(pred, b.eps);
}

}  // namespace detail

template <class S>
TrainStats train_denoiser(const std::vector<DiffusionItem<S>>& dataset, Denoiser<S>& model,
                          const NoiseSchedule& sched, int epochs, int batch, double lr,
                          double drop_prob, std::uint64_t seed = 0) {
  if (dataset.empty()) throw std::invalid_argument("train_denoiser: empty dataset");
  if (!(drop_prob >= 0.0 && drop_prob < 1.0))
    throw std::invalid_argument("train_denoiser: drop_prob outside [0,1)");
  if (batch < 1 || epochs < 0) throw std::invalid_argument("train_denoiser: bad epochs/batch");
  TrainStats stats;
  const int n = static_cast<int>(dataset.size());

  // deterministic probe batch reused for the before/after measurement
  RngStream probe_rng = RngStream::root(seed).split("probe");
  std::vector<int> probe_pick;
  for (int i = 0; i < std::min(n, 64); ++i) probe_pick.push_back(i);
  auto probe = detail::assemble(dataset, probe_pick, model, sched, 0.0, probe_rng, true);
  auto probe_loss = [&] {
    num::NoGradGuard ng;
    return static_cast<double>(detail::batch_loss(model, probe, sched)->value[0]);
  };
  stats.initial_loss = probe_loss();

  RngStream rng = RngStream::root(seed).split("train");
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::int64_t step = 0;
  for (int e = 0; e < epochs; ++e) {
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i + 1)]);
    for (int at = 0; at < n; at += batch) {
      std::vector<int> pick(order.begin() + at, order.begin() + std::min(at + batch, n));
      auto b = detail::assemble(dataset, pick, model, sched, drop_prob, rng, false);
      for (int id : pick)
        ++stats.depth_counts[static_cast<size_t>(dataset[static_cast<size_t>(id)].depth_source)];
      double loss = 0;
      auto grads = num::grad_of<S>(
          [&](num::ParamSet<S>&) { return detail::batch_loss(model, b, sched); }, model.params, &loss);
      ++step;
      if (!std::isfinite(loss))
        throw num::NumericalError("train_denoiser: non-finite loss at step " + std::to_string(step));
      stats.losses.push_back(loss);
      num::adam_step(model.params, grads, lr);
    }
  }
  stats.final_loss = probe_loss();
  return stats;
}

}  // namespace poseshift::diff
