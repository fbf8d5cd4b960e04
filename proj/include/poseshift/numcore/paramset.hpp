#pragma once
// Named parameter collections with per-parameter Adam state. std::map keeps
// iteration order deterministic, which the seeded A/B experiments rely on.
#include "poseshift/numcore/ops.hpp"
#include "poseshift/numcore/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>

namespace poseshift::num {

template <class S>
struct Param {
  Tensor<S> value;
  ArrX<S> m;
  ArrX<S> v;
  std::int64_t step = 0;
};

template <class S>
using GradMap = std::map<std::string, ArrX<S>>;

template <class S>
struct ParamSet {
  std::map<std::string, Param<S>> items;

  Tensor<S>& add(const std::string& name, Shape shape, ArrX<S> init) {
    if (items.count(name)) throw std::invalid_argument("ParamSet: duplicate parameter '" + name + "'");
    auto t = from_array<S>(std::move(shape), std::move(init), /*requires_grad=*/true);
    auto& p = items[name];
    p.value = t;
    p.m = ArrX<S>::Zero(t->value.size());
    p.v = ArrX<S>::Zero(t->value.size());
    return p.value;
  }

  Tensor<S>& at(const std::string& name) {
    auto it = items.find(name);
    if (it == items.end()) throw std::out_of_range("ParamSet: no parameter '" + name + "'");
    return it->second.value;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = items.find(name);
    if (it == items.end()) throw std::out_of_range("ParamSet: no parameter '" + name + "'");
    return it->second.value;
  }

  bool has(const std::string& name) const { return items.count(name) != 0; }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& [k, p] : items) n += p.value->value.size();
    return n;
  }

  void reset_optimizer() {
    for (auto& [k, p] : items) {
      p.m.setZero();
      p.v.setZero();
      p.step = 0;
    }
  }

  // Deep copy: fresh leaves, optimizer state cloned.
  ParamSet<S> clone() const {
    ParamSet<S> out;
    for (const auto& [k, p] : items) {
      auto& q = out.items[k];
      q.value = from_array<S>(p.value->shape, p.value->value, /*requires_grad=*/true);
      q.m = p.m;
      q.v = p.v;
      q.step = p.step;
    }
    return out;
  }
};

// Evaluates loss_fn and returns d(loss)/d(p) for every parameter; parameters
// that do not influence the loss get zeros.
template <class S>
GradMap<S> grad_of(const std::function<Tensor<S>(ParamSet<S>&)>& loss_fn, ParamSet<S>& params,
                   double* loss_out = nullptr) {
  Tensor<S> loss = loss_fn(params);
  if (numel(loss->shape) != 1) throw std::invalid_argument("grad_of: loss_fn must return a scalar");
  if (loss_out) *loss_out = static_cast<double>(loss->value[0]);
  auto table = backward(loss);
  GradMap<S> grads;
  for (auto& [name, p] : params.items) grads[name] = table.array(p.value);
  return grads;
}

// Standard bias-corrected Adam, applied in place. Parameter values are leaf
// tensors, so mutating them is safe between graph constructions.
template <class S>
void adam_step(ParamSet<S>& params, const GradMap<S>& grads, S lr, S beta1 = S(0.9), S beta2 = S(0.999),
               S eps = S(1e-8)) {
  for (const auto& [name, g] : grads) {
    auto it = params.items.find(name);
    if (it == params.items.end()) throw std::invalid_argument("adam_step: gradient for unknown parameter '" + name + "'");
    Param<S>& p = it->second;
    if (g.size() != p.value->value.size())
      throw std::invalid_argument("adam_step: gradient shape mismatch for '" + name + "'");
    p.step += 1;
    p.m = beta1 * p.m + (S(1) - beta1) * g;
    p.v = beta2 * p.v + (S(1) - beta2) * g.square();
    const S c1 = S(1) - std::pow(beta1, S(p.step));
    const S c2 = S(1) - std::pow(beta2, S(p.step));
    p.value->value -= lr * (p.m / c1) / ((p.v / c2).sqrt() + eps);
  }
}

}  // namespace poseshift::num
