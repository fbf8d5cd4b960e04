#pragma once
// Reverse-mode tape over flat Eigen arrays. A Tensor is a shared node in an
// immutable expression graph; backward() walks the graph once and accumulates
// vector-Jacobian products. The VJPs themselves are built from registered
// primitives, so gradients are ordinary tensors and can be differentiated
// again (needed for the R1 gradient penalty).
#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace poseshift::num {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '{';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << '}';
  return os.str();
}

// Raised when verification mode sees a non-finite value, or a training loop
// detects divergence. The CLI maps this to its numerical-failure exit code.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class S>
using ArrX = Eigen::Array<S, Eigen::Dynamic, 1>;

template <class S>
struct Node;
template <class S>
using Tensor = std::shared_ptr<Node<S>>;

// Finite checks are on by default in 64-bit (verification) mode only;
// 32-bit training loops do their own loss-level checks.
template <class S>
inline thread_local bool finite_checks = std::is_same_v<S, double>;

inline thread_local int nograd_depth = 0;

// Suppresses graph recording inside a scope (sampling loops, data generation).
struct NoGradGuard {
  NoGradGuard() { ++nograd_depth; }
  ~NoGradGuard() { --nograd_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// vjp(self, g, parent_grads): fill parent_grads[i] with dL/d(parents[i]) given
// g = dL/d(self). Entries may be left null for parents that need no gradient.
template <class S>
using VjpFn =
    std::function<void(const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& parent_grads)>;

template <class S>
struct Node : std::enable_shared_from_this<Node<S>> {
  Shape shape;
  ArrX<S> value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Tensor<S>> parents;
  VjpFn<S> vjp;
};

template <class S>
Tensor<S> from_array(Shape shape, ArrX<S> value, bool requires_grad = false) {
  if (numel(shape) != value.size())
    throw std::invalid_argument("from_array: shape " + shape_str(shape) + " does not match value length " +
                                std::to_string(value.size()));
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (finite_checks<S> && !n->value.isFinite().all()) throw NumericalError("non-finite values in leaf tensor");
  n->requires_grad = requires_grad;
  return n;
}

template <class S>
Tensor<S> make_node(Shape shape, ArrX<S> value, const char* op, std::vector<Tensor<S>> parents, VjpFn<S> vjp) {
  if (numel(shape) != value.size())
    throw std::invalid_argument(std::string(op) + ": shape " + shape_str(shape) +
                                " does not match value length " + std::to_string(value.size()));
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  if (finite_checks<S> && !n->value.isFinite().all())
    throw NumericalError(std::string("non-finite values produced by op '") + op + "'");
  bool rg = false;
  if (nograd_depth == 0)
    for (const auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->vjp = std::move(vjp);
  }
  return n;
}

// Declared here so backward() can accumulate; defined with the other
// elementwise primitives in ops.hpp.
template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);

template <class S>
class GradTable {
 public:
  // Gradient tensor for t, or null if t did not influence the loss.
  Tensor<S> get(const Tensor<S>& t) const {
    auto it = map_.find(t.get());
    return it == map_.end() ? nullptr : it->second;
  }

  // Dense gradient; zeros when the tensor did not influence the loss.
  ArrX<S> array(const Tensor<S>& t) const {
    auto g = get(t);
    if (!g) return ArrX<S>::Zero(numel(t->shape));
    return g->value;
  }

  std::unordered_map<const Node<S>*, Tensor<S>>& raw() { return map_; }

 private:
  std::unordered_map<const Node<S>*, Tensor<S>> map_;
};

// Reverse pass from a scalar loss. The returned table holds gradient tensors
// that are themselves differentiable (grad-of-grad works).
template <class S>
GradTable<S> backward(const Tensor<S>& loss) {
  if (numel(loss->shape) != 1) throw std::invalid_argument("backward: loss must be a scalar tensor");
  GradTable<S> table;
  if (!loss->requires_grad) return table;

  // iterative post-order DFS over the requires_grad subgraph
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> done;
  std::vector<std::pair<Node<S>*, size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next == 0 && done.count(n)) {
      stack.pop_back();
      continue;
    }
    if (next < n->parents.size()) {
      Node<S>* p = n->parents[next++].get();
      if (p->requires_grad && !done.count(p)) stack.emplace_back(p, 0);
    } else {
      if (!done.count(n)) {
        done.insert(n);
        order.push_back(n);
      }
      stack.pop_back();
    }
  }

  auto& map = table.raw();
  {
    ArrX<S> one = ArrX<S>::Ones(1);
    map[loss.get()] = from_array<S>(Shape{1}, std::move(one));
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    auto gi = map.find(n);
    if (gi == map.end()) continue;
    if (!n->vjp) {
      if (!n->parents.empty())
        throw std::logic_error(std::string("backward: unregistered primitive '") + n->op + "'");
      continue;  // leaf
    }
    std::vector<Tensor<S>> pg(n->parents.size());
    n->vjp(n->shared_from_this(), gi->second, pg);
    for (size_t i = 0; i < pg.size(); ++i) {
      const auto& p = n->parents[i];
      if (!pg[i] || !p->requires_grad) continue;
      auto existing = map.find(p.get());
      if (existing == map.end())
        map[p.get()] = pg[i];
      else
        existing->second = add(existing->second, pg[i]);
    }
  }
  return table;
}

}  // namespace poseshift::num
