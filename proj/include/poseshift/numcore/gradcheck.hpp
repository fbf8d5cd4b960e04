#pragma once
// Central finite-difference verification of reverse-mode gradients. Only
// meaningful in 64-bit mode; loss_fn must be deterministic (freeze any batch
// or noise draws in the closure before calling).
#include "poseshift/numcore/paramset.hpp"
#include "poseshift/numcore/rng.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace poseshift::num {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double worst_ad = 0.0;
  double worst_fd = 0.0;
};

// Probes `probes` randomly chosen parameter entries and returns the max of
// |autodiff - finite_difference| / (|finite_difference| + 1e-12).
inline GradCheckResult check_gradients_detail(ParamSet<double>& params,
                                              const std::function<Tensor<double>(ParamSet<double>&)>& loss_fn,
                                              int probes, RngStream rng, double h = 1e-5) {
  GradMap<double> analytic = grad_of<double>(loss_fn, params);

  std::vector<std::string> names;
  for (auto& [k, p] : params.items) names.push_back(k);
  std::int64_t total = params.total_size();
  if (total == 0) return {};

  GradCheckResult res;
  for (int probe = 0; probe < probes; ++probe) {
    std::int64_t flat = static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(total));
    std::string name;
    std::int64_t idx = flat;
    for (const auto& k : names) {
      std::int64_t n = params.items[k].value->value.size();
      if (idx < n) {
        name = k;
        break;
      }
      idx -= n;
    }
    auto& slot = params.items[name].value->value[idx];
    const double old = slot;
    slot = old + h;
    double lp = loss_fn(params)->value[0];
    slot = old - h;
    double lm = loss_fn(params)->value[0];
    slot = old;
    const double fd = (lp - lm) / (2.0 * h);
    const double ad = analytic[name][idx];
    const double rel = std::abs(ad - fd) / (std::abs(fd) + 1e-12);
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_param = name;
      res.worst_index = idx;
      res.worst_ad = ad;
      res.worst_fd = fd;
    }
  }
  return res;
}

inline double check_gradients(ParamSet<double>& params,
                              const std::function<Tensor<double>(ParamSet<double>&)>& loss_fn, int probes,
                              RngStream rng = RngStream::root(0x9d5c)) {
  return check_gradients_detail(params, loss_fn, probes, rng).max_rel_err;
}

}  // namespace poseshift::num
