#pragma once
// Guided samplers: classifier-free guidance mixing, single reverse steps
// (deterministic or ancestral), full image-to-image translation, and the
// two-model specialized-to-general loop that hands early steps to a
// depth-conditioned model and late steps to the plain one.
#include "poseshift/diffusion/predictor.hpp"
#include "poseshift/diffusion/schedule.hpp"
#include "poseshift/numcore/ops.hpp"
#include "poseshift/numcore/rng.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace poseshift::diff {

using num::RngStream;
using num::Tensor;

enum class SamplerKind { deterministic, ancestral };

struct SamplerConfig {
  int t_r = 990;       // return step the source is perturbed to
  int n_steps = 30;    // guided denoising steps
  double s = 10.0;     // guidance scale
  double eta = 0.4;    // fraction of the trajectory served by the depth model
  SamplerKind kind = SamplerKind::deterministic;
  std::uint64_t seed = 0;
};

// per-step record for instrumentation and tests
struct StepTrace {
  int t = 0;
  std::string model;
  double eps_rms = 0;
};

// Evenly spaced integer times from t_r down to 1 (duplicates merged), then a
// final step to 0. One model evaluation happens at every entry except the last.
inline std::vector<int> step_times(int t_r, int n_steps) {
  if (t_r < 1) throw std::invalid_argument("step_times: t_r must be >= 1");
  if (n_steps < 1) throw std::invalid_argument("step_times: n_steps must be >= 1");
  std::vector<int> times;
  for (int i = 0; i < n_steps; ++i) {
    const double t = (n_steps == 1) ? t_r : t_r - double(i) * (t_r - 1) / double(n_steps - 1);
    const int ti = static_cast<int>(std::lround(t));
    if (times.empty() || ti < times.back()) times.push_back(ti);
  }
  times.push_back(0);
  return times;
}

template <class S>
Tensor<S> cfg_noise(const NoisePredictor<S>& model, const Tensor<S>& q_t, Condition y, int t,
                    double s, const Tensor<S>* depth = nullptr) {
  if (y.is_null()) throw std::invalid_argument("cfg_noise: conditional label required");
  if (model.wants_depth() != (depth != nullptr))
    throw std::invalid_argument("cfg_noise: depth argument incompatible with model");
  const int B = q_t->shape.at(0);
  const std::vector<int> ts(static_cast<size_t>(B), t);
  const std::vector<int> cond(static_cast<size_t>(B), y.label);
  const std::vector<int> uncond(static_cast<size_t>(B), -1);
  // exact single-branch paths so s in {0,1} is equality, not arithmetic
  if (s == 1.0) return model.predict(q_t, cond, ts, depth);
  if (s == 0.0) return model.predict(q_t, uncond, ts, depth);
  auto ec = model.predict(q_t, cond, ts, depth);
  auto eu = model.predict(q_t, uncond, ts, depth);
  return num::add(num::mul_scalar(ec, static_cast<S>(s)), num::mul_scalar(eu, static_cast<S>(1.0 - s)));
}

template <class S>
Tensor<S> sample_step(const Tensor<S>& q_t, const Tensor<S>& eps, int t, int t_next,
                      const NoiseSchedule& sched, SamplerKind kind, RngStream& rng) {
  if (t <= t_next || t_next < 0) throw std::invalid_argument("sample_step: need t > t_next >= 0");
  if (q_t->shape != eps->shape) throw std::invalid_argument("sample_step: shape mismatch");
  const double at = sched.abar(t);
  const double an = sched.abar(t_next);
  auto q0 = num::clamp(
      num::mul_scalar(num::sub(q_t, num::mul_scalar(eps, static_cast<S>(std::sqrt(1.0 - at)))),
                      static_cast<S>(1.0 / std::sqrt(at))),
      static_cast<S>(-1), static_cast<S>(1));
  if (kind == SamplerKind::deterministic) {
    if (t_next == 0) return q0;
    return num::add(num::mul_scalar(q0, static_cast<S>(std::sqrt(an))),
                    num::mul_scalar(eps, static_cast<S>(std::sqrt(1.0 - an))));
  }
  // ancestral: posterior mean over q0/q_t plus schedule-scaled noise
  const double beta_eff = 1.0 - at / an;
  const double c0 = std::sqrt(an) * beta_eff / (1.0 - at);
  const double ct = std::sqrt(at / an) * (1.0 - an) / (1.0 - at);
  const double var = beta_eff * (1.0 - an) / (1.0 - at);
  auto mean = num::add(num::mul_scalar(q0, static_cast<S>(c0)), num::mul_scalar(q_t, static_cast<S>(ct)));
  if (var <= 0.0) return mean;
  auto xi = num::randn<S>(q_t->shape, rng);
  return num::add(mean, num::mul_scalar(xi, static_cast<S>(std::sqrt(var))));
}

namespace detail {

// shared scaffolding: perturb to t_r, walk the step list, decode
template <class S>
Tensor<S> guided_denoise(const Tensor<S>& x_src, Condition y,
                         const std::function<const NoisePredictor<S>*(int)>& pick,
                         const Tensor<S>* depth, const LatentCodec<S>& codec,
                         const NoiseSchedule& sched, const SamplerConfig& cfg,
                         std::vector<StepTrace>* trace) {
  if (cfg.t_r < 0 || cfg.t_r > sched.T) throw std::invalid_argument("guided_denoise: t_r out of range");
  if (y.is_null()) throw std::invalid_argument("guided_denoise: conditional label required");
  num::NoGradGuard ng;
  auto q = codec.encode(x_src);
  if (cfg.t_r == 0) return codec.decode(q);
  RngStream rng = RngStream::root(cfg.seed).split("guided");
  auto eps0 = num::randn<S>(q->shape, rng);
  q = forward_perturb(q, cfg.t_r, eps0, sched);
  const auto times = step_times(cfg.t_r, cfg.n_steps);
  for (size_t i = 0; i + 1 < times.size(); ++i) {
    const int t = times[i];
    const NoisePredictor<S>* model = pick(t);
    const Tensor<S>* d = model->wants_depth() ? depth : nullptr;
    auto eps = cfg_noise(*model, q, y, t, cfg.s, d);
    if (trace) {
      const double rms = std::sqrt(double(eps->value.template cast<double>().square().mean()));
      trace->push_back(StepTrace{t, model->id(), rms});
    }
    q = sample_step(q, eps, t, times[i + 1], sched, cfg.kind, rng);
  }
  return codec.decode(q);
}

}  // namespace detail

template <class S>
Tensor<S> t_i2i(const Tensor<S>& x_src, Condition y, const NoisePredictor<S>& model,
                const LatentCodec<S>& codec, const NoiseSchedule& sched, const SamplerConfig& cfg,
                std::type_identity_t<const Tensor<S>*> depth = nullptr,
                std::vector<StepTrace>* trace = nullptr) {
  if (model.wants_depth() != (depth != nullptr))
    throw std::invalid_argument("t_i2i: depth argument incompatible with model");
  return detail::guided_denoise<S>(
      x_src, y, [&](int) { return &model; }, depth, codec, sched, cfg, trace);
}

template <class S>
Tensor<S> s_to_g(const Tensor<S>& x_src, Condition y, const NoisePredictor<S>& ppd,
                 const NoisePredictor<S>& sd, const Tensor<S>& depth, const LatentCodec<S>& codec,
                 const NoiseSchedule& sched, const SamplerConfig& cfg,
                 std::vector<StepTrace>* trace = nullptr) {
  if (!ppd.wants_depth()) throw std::invalid_argument("s_to_g: early-phase model must take depth");
  if (sd.wants_depth()) throw std::invalid_argument("s_to_g: late-phase model must not take depth");
  if (cfg.eta < 0.0 || cfg.eta > 1.0) throw std::invalid_argument("s_to_g: eta outside [0,1]");
  const double cut = (1.0 - cfg.eta) * sched.T;
  return detail::guided_denoise<S>(
      x_src, y, [&](int t) -> const NoisePredictor<S>* { return t > cut ? &ppd : &sd; }, &depth,
      codec, sched, cfg, trace);
}

}  // namespace poseshift::diff
