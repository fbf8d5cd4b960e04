#pragma once
// Noise schedule bookkeeping and the forward perturbation q_t = sqrt(abar_t) q0
// + sqrt(1 - abar_t) eps shared by training, samplers, and score distillation.
#include "poseshift/numcore/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace poseshift::diff {

using num::ArrX;
using num::Shape;
using num::Tensor;

struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // beta[t] for t in 1..T; slot 0 unused
  std::vector<double> alpha_bar;  // alpha_bar[t] for t in 1..T; slot 0 holds the t=0 endpoint 1

  // abar(0) = 1 so that stepping to t_next=0 reduces to returning the clean estimate
  double abar(int t) const {
    if (t < 0 || t > T) throw std::out_of_range("NoiseSchedule::abar: t out of range");
    return alpha_bar[static_cast<size_t>(t)];
  }
};

inline NoiseSchedule make_schedule(const std::string& kind, int T, double beta_start, double beta_end) {
  if (kind != "linear") throw std::invalid_argument("make_schedule: unknown kind '" + kind + "'");
  if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta.assign(static_cast<size_t>(T) + 1, 0.0);
  s.alpha_bar.assign(static_cast<size_t>(T) + 1, 1.0);
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    s.beta[static_cast<size_t>(t)] =
        (T == 1) ? beta_start : beta_start + (beta_end - beta_start) * double(t - 1) / double(T - 1);
    prod *= 1.0 - s.beta[static_cast<size_t>(t)];
    s.alpha_bar[static_cast<size_t>(t)] = prod;
    if (!(s.alpha_bar[static_cast<size_t>(t)] < s.alpha_bar[static_cast<size_t>(t - 1)]))
      throw std::logic_error("make_schedule: alpha_bar not strictly decreasing");
  }
  return s;
}

// single shared timestep for the whole tensor
template <class S>
Tensor<S> forward_perturb(const Tensor<S>& q0, int t, const Tensor<S>& eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T) throw std::out_of_range("forward_perturb: t out of range");
  if (q0->shape != eps->shape) throw std::invalid_argument("forward_perturb: shape mismatch");
  const double ab = sched.abar(t);
  return num::add(num::mul_scalar(q0, static_cast<S>(std::sqrt(ab))),
                  num::mul_scalar(eps, static_cast<S>(std::sqrt(1.0 - ab))));
}

// per-sample timesteps over a batch whose samples are contiguous equal-sized blocks
template <class S>
Tensor<S> forward_perturb_batch(const Tensor<S>& q0, const std::vector<int>& ts, const Tensor<S>& eps,
                                const NoiseSchedule& sched) {
  if (q0->shape != eps->shape) throw std::invalid_argument("forward_perturb_batch: shape mismatch");
  const std::int64_t n = num::numel(q0->shape);
  const std::int64_t bsz = static_cast<std::int64_t>(ts.size());
  if (q0->shape.empty() || bsz != q0->shape[0])
    throw std::invalid_argument("forward_perturb_batch: ts size must match the leading axis");
  const std::int64_t per = n / bsz;
  ArrX<S> c0(n), c1(n);
  for (std::int64_t b = 0; b < bsz; ++b) {
    const int t = ts[static_cast<size_t>(b)];
    if (t < 1 || t > sched.T) throw std::out_of_range("forward_perturb_batch: t out of range");
    const double ab = sched.abar(t);
    c0.segment(b * per, per).setConstant(static_cast<S>(std::sqrt(ab)));
    c1.segment(b * per, per).setConstant(static_cast<S>(std::sqrt(1.0 - ab)));
  }
  return num::add(num::mul(q0, num::from_array<S>(q0->shape, std::move(c0))),
                  num::mul(eps, num::from_array<S>(q0->shape, std::move(c1))));
}

}  // namespace poseshift::diff
