#pragma once
// Differentiable primitives and small composites. Every VJP is expressed in
// terms of these same primitives, which keeps the whole op set closed under
// differentiation.
#include "poseshift/numcore/rng.hpp"
#include "poseshift/numcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

namespace poseshift::num {

using IdxPtr = std::shared_ptr<const std::vector<std::int64_t>>;

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapM = Eigen::Map<MatRM<S>>;
template <class S>
using MapCM = Eigen::Map<const MatRM<S>>;

namespace detail {
template <class S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a->shape != b->shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                                shape_str(b->shape));
}
template <class S>
void require_2d(const char* op, const Tensor<S>& a) {
  if (a->shape.size() != 2)
    throw std::invalid_argument(std::string(op) + ": expected 2-d tensor, got " + shape_str(a->shape));
}
}  // namespace detail

// ---- creation --------------------------------------------------------------

template <class S>
Tensor<S> constant(Shape shape, S v) {
  ArrX<S> a = ArrX<S>::Constant(numel(shape), v);
  return from_array<S>(std::move(shape), std::move(a));
}

template <class S>
Tensor<S> zeros(Shape shape) {
  return constant<S>(std::move(shape), S(0));
}

template <class S>
Tensor<S> scalar(S v) {
  return constant<S>(Shape{1}, v);
}

template <class S>
ArrX<S> randn_array(std::int64_t n, RngStream& rng) {
  ArrX<S> a(n);
  for (std::int64_t i = 0; i < n; ++i) a[i] = static_cast<S>(rng.normal());
  return a;
}

template <class S>
Tensor<S> randn(Shape shape, RngStream& rng) {
  auto a = randn_array<S>(numel(shape), rng);
  return from_array<S>(std::move(shape), std::move(a));
}

// ---- elementwise binary ----------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("add", a, b);
  return make_node<S>(
      a->shape, a->value + b->value, "add", {a, b},
      [](const Tensor<S>&, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = g;
        pg[1] = g;
      });
}

template <class S>
Tensor<S> mul_scalar(const Tensor<S>& a, S s) {
  return make_node<S>(
      a->shape, a->value * s, "mul_scalar", {a},
      [s](const Tensor<S>&, const Tensor<S>& g, std::vector<Tensor<S>>& pg) { pg[0] = mul_scalar(g, s); });
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
  return mul_scalar(a, S(-1));
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("sub", a, b);
  return make_node<S>(
      a->shape, a->value - b->value, "sub", {a, b},
      [](const Tensor<S>&, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = g;
        pg[1] = neg(g);
      });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("mul", a, b);
  return make_node<S>(
      a->shape, a->value * b->value, "mul", {a, b},
      [](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = mul(g, self->parents[1]);
        pg[1] = mul(g, self->parents[0]);
      });
}

template <class S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("div", a, b);
  return make_node<S>(
      a->shape, a->value / b->value, "div", {a, b},
      [](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        const auto& b_ = self->parents[1];
        pg[0] = div(g, b_);
        pg[1] = neg(mul(g, div(self, b_)));
      });
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S s) {
  return make_node<S>(
      a->shape, a->value + s, "add_scalar", {a},
      [](const Tensor<S>&, const Tensor<S>& g, std::vector<Tensor<S>>& pg) { pg[0] = g; });
}

// ---- elementwise unary -----------------------------------------------------

template <class S>
Tensor<S> exp(const Tensor<S>& a) {
  return make_node<S>(
      a->shape, a->value.exp(), "exp", {a},
      [](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) { pg[0] = mul(g, self); });
}

template <class S>
Tensor<S> log(const Tensor<S>& a) {
  return make_node<S>(
      a->shape, a->value.log(), "log", {a},
      [](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = div(g, self->parents[0]);
      });
}

template <class S>
Tensor<S> sqrt(const Tensor<S>& a) {
  return make_node<S>(
      a->shape, a->value.sqrt(), "sqrt", {a},
      [](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = div(g, mul_scalar(self, S(2)));
      });
}

template <class S>
Tensor<S> square(const Tensor<S>& a) {
  return mul(a, a);
}

template <class S>
Tensor<S> tanh(const Tensor<S>& a) {
  return make_node<S>(
      a->shape, a->value.tanh(), "tanh", {a},
      [](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = mul(g, add_scalar(neg(square(self)), S(1)));
      });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  ArrX<S> v(a->value.size());
  for (std::int64_t i = 0; i < v.size(); ++i) {
    S x = a->value[i];
    if (x >= 0) {
      v[i] = S(1) / (S(1) + std::exp(-x));
    } else {
      S e = std::exp(x);
      v[i] = e / (S(1) + e);
    }
  }
  return make_node<S>(
      a->shape, std::move(v), "sigmoid", {a},
      [](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = mul(g, mul(self, add_scalar(neg(self), S(1))));
      });
}

// log(1 + exp(x)), numerically stable
template <class S>
Tensor<S> softplus(const Tensor<S>& a) {
  ArrX<S> v(a->value.size());
  for (std::int64_t i = 0; i < v.size(); ++i) {
    S x = a->value[i];
    v[i] = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  return make_node<S>(
      a->shape, std::move(v), "softplus", {a},
      [](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = mul(g, sigmoid(self->parents[0]));
      });
}

template <class S>
Tensor<S> silu(const Tensor<S>& a) {
  return mul(a, sigmoid(a));
}

template <class S>
Tensor<S> abs(const Tensor<S>& a) {
  return make_node<S>(
      a->shape, a->value.abs(), "abs", {a},
      [](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        const auto& x = self->parents[0]->value;
        ArrX<S> sign(x.size());
        for (std::int64_t i = 0; i < x.size(); ++i) sign[i] = x[i] > 0 ? S(1) : (x[i] < 0 ? S(-1) : S(0));
        pg[0] = mul(g, from_array<S>(self->shape, std::move(sign)));
      });
}

template <class S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  return make_node<S>(
      a->shape, a->value.max(lo).min(hi), "clamp", {a},
      [lo, hi](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        const auto& x = self->parents[0]->value;
        ArrX<S> mask(x.size());
        for (std::int64_t i = 0; i < x.size(); ++i) mask[i] = (x[i] >= lo && x[i] <= hi) ? S(1) : S(0);
        pg[0] = mul(g, from_array<S>(self->shape, std::move(mask)));
      });
}

// ---- structure -------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (numel(shape) != numel(a->shape))
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(a->shape) + " -> " +
                                shape_str(shape));
  return make_node<S>(
      std::move(shape), a->value, "reshape", {a},
      [](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = reshape(g, self->parents[0]->shape);
      });
}

template <class S>
Tensor<S> stop_grad(const Tensor<S>& a) {
  return from_array<S>(a->shape, a->value);
}

// ---- matmul ----------------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool ta = false, bool tb = false) {
  detail::require_2d("matmul", a);
  detail::require_2d("matmul", b);
  const int ar = a->shape[0], ac = a->shape[1];
  const int br = b->shape[0], bc = b->shape[1];
  const int m = ta ? ac : ar, k = ta ? ar : ac;
  const int kb = tb ? bc : br, n = tb ? br : bc;
  if (k != kb)
    throw std::invalid_argument("matmul: inner dims differ, " + shape_str(a->shape) + (ta ? "^T" : "") +
                                " x " + shape_str(b->shape) + (tb ? "^T" : ""));
  MapCM<S> A(a->value.data(), ar, ac);
  MapCM<S> B(b->value.data(), br, bc);
  MatRM<S> C(m, n);
  if (!ta && !tb)
    C.noalias() = A * B;
  else if (!ta && tb)
    C.noalias() = A * B.transpose();
  else if (ta && !tb)
    C.noalias() = A.transpose() * B;
  else
    C.noalias() = A.transpose() * B.transpose();
  ArrX<S> v = Eigen::Map<ArrX<S>>(C.data(), C.size());
  return make_node<S>(
      Shape{m, n}, std::move(v), "matmul", {a, b},
      [ta, tb](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        const auto& a_ = self->parents[0];
        const auto& b_ = self->parents[1];
        if (!ta && !tb) {
          pg[0] = matmul(g, b_, false, true);
          pg[1] = matmul(a_, g, true, false);
        } else if (!ta && tb) {
          pg[0] = matmul(g, b_, false, false);
          pg[1] = matmul(g, a_, true, false);
        } else if (ta && !tb) {
          pg[0] = matmul(b_, g, false, true);
          pg[1] = matmul(a_, g, false, false);
        } else {
          pg[0] = matmul(b_, g, true, true);
          pg[1] = matmul(g, a_, true, true);
        }
      });
}

// ---- gather / scatter ------------------------------------------------------
// gather: out[i] = x[idx[i]], with idx[i] == -1 producing 0. scatter_add is
// its exact adjoint. Image-layout shuffles (im2col, upsampling, permutes,
// embedding lookup) are all index compositions over this pair.

template <class S>
Tensor<S> scatter_add(const Tensor<S>& x, IdxPtr idx, Shape out_shape);

template <class S>
Tensor<S> gather(const Tensor<S>& x, IdxPtr idx, Shape out_shape) {
  if (static_cast<std::int64_t>(idx->size()) != numel(out_shape))
    throw std::invalid_argument("gather: index count does not match output shape");
  const std::int64_t xn = x->value.size();
  ArrX<S> v(idx->size());
  const auto& ix = *idx;
  for (std::int64_t i = 0; i < v.size(); ++i) {
    std::int64_t j = ix[i];
    if (j < 0) {
      v[i] = S(0);
    } else {
      if (j >= xn) throw std::out_of_range("gather: index out of range");
      v[i] = x->value[j];
    }
  }
  return make_node<S>(
      std::move(out_shape), std::move(v), "gather", {x},
      [idx](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = scatter_add(g, idx, self->parents[0]->shape);
      });
}

template <class S>
Tensor<S> scatter_add(const Tensor<S>& x, IdxPtr idx, Shape out_shape) {
  if (static_cast<std::int64_t>(idx->size()) != x->value.size())
    throw std::invalid_argument("scatter_add: index count does not match input size");
  const std::int64_t on = numel(out_shape);
  ArrX<S> v = ArrX<S>::Zero(on);
  const auto& ix = *idx;
  for (std::int64_t i = 0; i < x->value.size(); ++i) {
    std::int64_t j = ix[i];
    if (j < 0) continue;
    if (j >= on) throw std::out_of_range("scatter_add: index out of range");
    v[j] += x->value[i];
  }
  return make_node<S>(
      std::move(out_shape), std::move(v), "scatter_add", {x},
      [idx](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = gather(g, idx, self->parents[0]->shape);
      });
}

// ---- per-row scans and reductions ({rows, cols} layout) ---------------------

template <class S>
Tensor<S> rev_cumsum_last(const Tensor<S>& a);

template <class S>
Tensor<S> cumsum_last(const Tensor<S>& a) {
  detail::require_2d("cumsum_last", a);
  const int r = a->shape[0], c = a->shape[1];
  ArrX<S> v(a->value.size());
  for (int i = 0; i < r; ++i) {
    S acc = 0;
    const std::int64_t base = std::int64_t(i) * c;
    for (int j = 0; j < c; ++j) v[base + j] = (acc += a->value[base + j]);
  }
  return make_node<S>(
      a->shape, std::move(v), "cumsum_last", {a},
      [](const Tensor<S>&, const Tensor<S>& g, std::vector<Tensor<S>>& pg) { pg[0] = rev_cumsum_last(g); });
}

template <class S>
Tensor<S> rev_cumsum_last(const Tensor<S>& a) {
  detail::require_2d("rev_cumsum_last", a);
  const int r = a->shape[0], c = a->shape[1];
  ArrX<S> v(a->value.size());
  for (int i = 0; i < r; ++i) {
    S acc = 0;
    const std::int64_t base = std::int64_t(i) * c;
    for (int j = c - 1; j >= 0; --j) v[base + j] = (acc += a->value[base + j]);
  }
  return make_node<S>(
      a->shape, std::move(v), "rev_cumsum_last", {a},
      [](const Tensor<S>&, const Tensor<S>& g, std::vector<Tensor<S>>& pg) { pg[0] = cumsum_last(g); });
}

template <class S>
Tensor<S> broadcast_cols(const Tensor<S>& a, int cols);
template <class S>
Tensor<S> broadcast_rows(const Tensor<S>& a, int rows);

template <class S>
Tensor<S> rowsum(const Tensor<S>& a) {
  detail::require_2d("rowsum", a);
  const int r = a->shape[0], c = a->shape[1];
  MapCM<S> A(a->value.data(), r, c);
  ArrX<S> v = A.rowwise().sum().array();
  return make_node<S>(
      Shape{r, 1}, std::move(v), "rowsum", {a},
      [c](const Tensor<S>&, const Tensor<S>& g, std::vector<Tensor<S>>& pg) { pg[0] = broadcast_cols(g, c); });
}

template <class S>
Tensor<S> colsum(const Tensor<S>& a) {
  detail::require_2d("colsum", a);
  const int r = a->shape[0], c = a->shape[1];
  MapCM<S> A(a->value.data(), r, c);
  MatRM<S> s = A.colwise().sum();
  ArrX<S> v = Eigen::Map<ArrX<S>>(s.data(), s.size());
  return make_node<S>(
      Shape{1, c}, std::move(v), "colsum", {a},
      [r](const Tensor<S>&, const Tensor<S>& g, std::vector<Tensor<S>>& pg) { pg[0] = broadcast_rows(g, r); });
}

template <class S>
Tensor<S> broadcast_cols(const Tensor<S>& a, int cols) {
  detail::require_2d("broadcast_cols", a);
  if (a->shape[1] != 1) throw std::invalid_argument("broadcast_cols: expected {rows,1}");
  const int r = a->shape[0];
  ArrX<S> v(std::int64_t(r) * cols);
  for (int i = 0; i < r; ++i) v.segment(std::int64_t(i) * cols, cols).setConstant(a->value[i]);
  return make_node<S>(
      Shape{r, cols}, std::move(v), "broadcast_cols", {a},
      [](const Tensor<S>&, const Tensor<S>& g, std::vector<Tensor<S>>& pg) { pg[0] = rowsum(g); });
}

template <class S>
Tensor<S> broadcast_rows(const Tensor<S>& a, int rows) {
  detail::require_2d("broadcast_rows", a);
  if (a->shape[0] != 1) throw std::invalid_argument("broadcast_rows: expected {1,cols}");
  const int c = a->shape[1];
  ArrX<S> v(std::int64_t(rows) * c);
  for (int i = 0; i < rows; ++i) v.segment(std::int64_t(i) * c, c) = a->value;
  return make_node<S>(
      Shape{rows, c}, std::move(v), "broadcast_rows", {a},
      [](const Tensor<S>&, const Tensor<S>& g, std::vector<Tensor<S>>& pg) { pg[0] = colsum(g); });
}

template <class S>
Tensor<S> broadcast_all(const Tensor<S>& a, Shape shape);

template <class S>
Tensor<S> sum_all(const Tensor<S>& a) {
  ArrX<S> v(1);
  v[0] = a->value.sum();
  return make_node<S>(
      Shape{1}, std::move(v), "sum_all", {a},
      [](const Tensor<S>& self, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = broadcast_all(g, self->parents[0]->shape);
      });
}

template <class S>
Tensor<S> broadcast_all(const Tensor<S>& a, Shape shape) {
  if (numel(a->shape) != 1) throw std::invalid_argument("broadcast_all: expected scalar input");
  ArrX<S> v = ArrX<S>::Constant(numel(shape), a->value[0]);
  return make_node<S>(
      std::move(shape), std::move(v), "broadcast_all", {a},
      [](const Tensor<S>&, const Tensor<S>& g, std::vector<Tensor<S>>& pg) { pg[0] = sum_all(g); });
}

// ---- column slicing / concatenation ----------------------------------------

template <class S>
Tensor<S> pad_cols(const Tensor<S>& a, int c0, int total_cols);

template <class S>
Tensor<S> slice_cols(const Tensor<S>& a, int c0, int n) {
  detail::require_2d("slice_cols", a);
  const int r = a->shape[0], c = a->shape[1];
  if (c0 < 0 || n < 1 || c0 + n > c) throw std::invalid_argument("slice_cols: range out of bounds");
  ArrX<S> v(std::int64_t(r) * n);
  for (int i = 0; i < r; ++i) v.segment(std::int64_t(i) * n, n) = a->value.segment(std::int64_t(i) * c + c0, n);
  return make_node<S>(
      Shape{r, n}, std::move(v), "slice_cols", {a},
      [c0, c](const Tensor<S>&, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = pad_cols(g, c0, c);
      });
}

template <class S>
Tensor<S> pad_cols(const Tensor<S>& a, int c0, int total_cols) {
  detail::require_2d("pad_cols", a);
  const int r = a->shape[0], n = a->shape[1];
  if (c0 < 0 || c0 + n > total_cols) throw std::invalid_argument("pad_cols: range out of bounds");
  ArrX<S> v = ArrX<S>::Zero(std::int64_t(r) * total_cols);
  for (int i = 0; i < r; ++i)
    v.segment(std::int64_t(i) * total_cols + c0, n) = a->value.segment(std::int64_t(i) * n, n);
  return make_node<S>(
      Shape{r, total_cols}, std::move(v), "pad_cols", {a},
      [c0, n](const Tensor<S>&, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = slice_cols(g, c0, n);
      });
}

template <class S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_2d("concat_cols", a);
  detail::require_2d("concat_cols", b);
  if (a->shape[0] != b->shape[0]) throw std::invalid_argument("concat_cols: row count mismatch");
  const int r = a->shape[0], ca = a->shape[1], cb = b->shape[1];
  ArrX<S> v(std::int64_t(r) * (ca + cb));
  for (int i = 0; i < r; ++i) {
    v.segment(std::int64_t(i) * (ca + cb), ca) = a->value.segment(std::int64_t(i) * ca, ca);
    v.segment(std::int64_t(i) * (ca + cb) + ca, cb) = b->value.segment(std::int64_t(i) * cb, cb);
  }
  return make_node<S>(
      Shape{r, ca + cb}, std::move(v), "concat_cols", {a, b},
      [ca, cb](const Tensor<S>&, const Tensor<S>& g, std::vector<Tensor<S>>& pg) {
        pg[0] = slice_cols(g, 0, ca);
        pg[1] = slice_cols(g, ca, cb);
      });
}

// ---- composites ------------------------------------------------------------

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  return mul_scalar(sum_all(a), S(1) / S(numel(a->shape)));
}

template <class S>
Tensor<S> mse(const Tensor<S>& a, const Tensor<S>& b) {
  return mean(square(sub(a, b)));
}

// Selects whole rows of a {rows, cols} tensor.
template <class S>
Tensor<S> take_rows(const Tensor<S>& a, const std::vector<int>& rows) {
  detail::require_2d("take_rows", a);
  const int c = a->shape[1];
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(rows.size() * c);
  for (int r : rows) {
    if (r < 0 || r >= a->shape[0]) throw std::out_of_range("take_rows: row index out of range");
    for (int j = 0; j < c; ++j) idx->push_back(std::int64_t(r) * c + j);
  }
  return gather(a, idx, Shape{static_cast<int>(rows.size()), c});
}

// Mean cross-entropy of row-wise logits against integer labels. The rowwise
// max is treated as a constant shift, which leaves gradients exact.
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
  detail::require_2d("cross_entropy", logits);
  const int r = logits->shape[0], c = logits->shape[1];
  if (static_cast<int>(labels.size()) != r)
    throw std::invalid_argument("cross_entropy: label count does not match rows");
  ArrX<S> mx(std::int64_t(r) * c);
  for (int i = 0; i < r; ++i) {
    S m = logits->value.segment(std::int64_t(i) * c, c).maxCoeff();
    mx.segment(std::int64_t(i) * c, c).setConstant(m);
  }
  auto shifted = sub(logits, from_array<S>(logits->shape, std::move(mx)));
  auto lse = log(rowsum(exp(shifted)));  // {r,1}
  auto picked_idx = std::make_shared<std::vector<std::int64_t>>(r);
  for (int i = 0; i < r; ++i) {
    if (labels[i] < 0 || labels[i] >= c) throw std::out_of_range("cross_entropy: label out of range");
    (*picked_idx)[i] = std::int64_t(i) * c + labels[i];
  }
  auto picked = gather(shifted, picked_idx, Shape{r, 1});
  return mean(sub(lse, picked));
}

// Row-wise argmax of a {rows, cols} value (not differentiable, plain query).
template <class S>
std::vector<int> argmax_rows(const Tensor<S>& a) {
  detail::require_2d("argmax_rows", a);
  const int r = a->shape[0], c = a->shape[1];
  std::vector<int> out(r);
  for (int i = 0; i < r; ++i) {
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (a->value[std::int64_t(i) * c + j] > a->value[std::int64_t(i) * c + best]) best = j;
    out[i] = best;
  }
  return out;
}

}  // namespace poseshift::num
