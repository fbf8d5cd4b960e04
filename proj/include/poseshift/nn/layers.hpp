#pragma once
// Layer helpers over the tensor engine. Feature maps travel as {B*H*W, C}
// rows (channels last, pixel-major); convolution is im2col + matmul, and all
// layout shuffles are cached gather index tables, so every layer is closed
// under differentiation including double backward.
//
// Index caches are plain function-static maps; the whole engine is
// single-threaded by design.
#include "poseshift/numcore/ops.hpp"
#include "poseshift/numcore/paramset.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

namespace poseshift::nn {

using num::ArrX;
using num::IdxPtr;
using num::ParamSet;
using num::RngStream;
using num::Shape;
using num::Tensor;

namespace detail {

inline IdxPtr cache_lookup(const std::string& key, const std::function<std::vector<std::int64_t>()>& build) {
  static std::map<std::string, IdxPtr> cache;
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto idx = std::make_shared<std::vector<std::int64_t>>(build());
  cache[key] = idx;
  return idx;
}

inline std::string key(const char* tag, std::initializer_list<int> vals) {
  std::string k = tag;
  for (int v : vals) k += ":" + std::to_string(v);
  return k;
}

}  // namespace detail

// im2col for a kxk window, channels-last rows in, patch columns ordered
// (c*k*k + ky*k + kx) so each input channel owns a contiguous column block.
inline IdxPtr im2col_idx(int B, int H, int W, int C, int k, int stride, int pad) {
  return detail::cache_lookup(detail::key("im2col", {B, H, W, C, k, stride, pad}), [=] {
    const int oh = (H + 2 * pad - k) / stride + 1;
    const int ow = (W + 2 * pad - k) / stride + 1;
    std::vector<std::int64_t> idx(std::int64_t(B) * oh * ow * C * k * k);
    std::int64_t at = 0;
    for (int b = 0; b < B; ++b)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int y = oy * stride + ky - pad;
                const int x = ox * stride + kx - pad;
                idx[at++] = (y < 0 || y >= H || x < 0 || x >= W)
                                ? -1
                                : (std::int64_t(b) * H * W + std::int64_t(y) * W + x) * C + c;
              }
    return idx;
  });
}

// nearest-neighbour 2x upsample
inline IdxPtr upsample2_idx(int B, int H, int W, int C) {
  return detail::cache_lookup(detail::key("up2", {B, H, W, C}), [=] {
    std::vector<std::int64_t> idx(std::int64_t(B) * 4 * H * W * C);
    std::int64_t at = 0;
    for (int b = 0; b < B; ++b)
      for (int y = 0; y < 2 * H; ++y)
        for (int x = 0; x < 2 * W; ++x)
          for (int c = 0; c < C; ++c)
            idx[at++] = (std::int64_t(b) * H * W + std::int64_t(y / 2) * W + (x / 2)) * C + c;
    return idx;
  });
}

// {B,C,H,W} planar layout -> {B*H*W, C} rows
inline IdxPtr chw_to_rows_idx(int B, int C, int H, int W) {
  return detail::cache_lookup(detail::key("chw2rows", {B, C, H, W}), [=] {
    std::vector<std::int64_t> idx(std::int64_t(B) * C * H * W);
    std::int64_t at = 0;
    for (int b = 0; b < B; ++b)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          for (int c = 0; c < C; ++c)
            idx[at++] = ((std::int64_t(b) * C + c) * H + y) * W + x;
    return idx;
  });
}

inline IdxPtr rows_to_chw_idx(int B, int C, int H, int W) {
  return detail::cache_lookup(detail::key("rows2chw", {B, C, H, W}), [=] {
    std::vector<std::int64_t> idx(std::int64_t(B) * C * H * W);
    std::int64_t at = 0;
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            idx[at++] = (std::int64_t(b) * H * W + std::int64_t(y) * W + x) * C + c;
    return idx;
  });
}

// {B, C} per-sample vectors -> {B*reps, C} per-pixel rows
inline IdxPtr repeat_rows_idx(int B, int reps, int C) {
  return detail::cache_lookup(detail::key("repeat", {B, reps, C}), [=] {
    std::vector<std::int64_t> idx(std::int64_t(B) * reps * C);
    std::int64_t at = 0;
    for (int b = 0; b < B; ++b)
      for (int r = 0; r < reps; ++r)
        for (int c = 0; c < C; ++c) idx[at++] = std::int64_t(b) * C + c;
    return idx;
  });
}

// edge-clamped 2-d shift, used by blur taps and translation augmentation
inline IdxPtr shift_idx(int B, int H, int W, int C, int dy, int dx) {
  return detail::cache_lookup(detail::key("shift", {B, H, W, C, dy, dx}), [=] {
    std::vector<std::int64_t> idx(std::int64_t(B) * H * W * C);
    std::int64_t at = 0;
    for (int b = 0; b < B; ++b)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          int sy = std::min(std::max(y + dy, 0), H - 1);
          int sx = std::min(std::max(x + dx, 0), W - 1);
          for (int c = 0; c < C; ++c)
            idx[at++] = (std::int64_t(b) * H * W + std::int64_t(sy) * W + sx) * C + c;
        }
    return idx;
  });
}

template <class S>
Tensor<S> chw_to_rows(const Tensor<S>& x, int B, int C, int H, int W) {
  return num::gather(x, chw_to_rows_idx(B, C, H, W), Shape{B * H * W, C});
}

template <class S>
Tensor<S> rows_to_chw(const Tensor<S>& x, int B, int C, int H, int W) {
  return num::gather(x, rows_to_chw_idx(B, C, H, W), Shape{B, C, H, W});
}

template <class S>
Tensor<S> repeat_rows(const Tensor<S>& x, int reps) {
  const int B = x->shape[0], C = x->shape[1];
  return num::gather(x, repeat_rows_idx(B, reps, C), Shape{B * reps, C});
}

template <class S>
Tensor<S> upsample2(const Tensor<S>& x, int B, int H, int W) {
  const int C = x->shape[1];
  return num::gather(x, upsample2_idx(B, H, W, C), Shape{B * 4 * H * W, C});
}

// ---- parameterized layers ----------------------------------------------------

template <class S>
void init_dense(ParamSet<S>& ps, const std::string& name, int in, int out, RngStream rng, double scale = 1.0) {
  const double std = scale * std::sqrt(2.0 / in);
  ArrX<S> w = num::randn_array<S>(std::int64_t(in) * out, rng) * static_cast<S>(std);
  ps.add(name + ".w", Shape{in, out}, std::move(w));
  ps.add(name + ".b", Shape{1, out}, ArrX<S>::Zero(out));
}

template <class S>
Tensor<S> dense(const ParamSet<S>& ps, const std::string& name, const Tensor<S>& x) {
  auto y = num::matmul(x, ps.at(name + ".w"));
  return num::add(y, num::broadcast_rows(ps.at(name + ".b"), y->shape[0]));
}

template <class S>
void init_conv3(ParamSet<S>& ps, const std::string& name, int cin, int cout, RngStream rng,
                double scale = 1.0) {
  const double std = scale * std::sqrt(2.0 / (cin * 9));
  ArrX<S> w = num::randn_array<S>(std::int64_t(cin) * 9 * cout, rng) * static_cast<S>(std);
  ps.add(name + ".w", Shape{cin * 9, cout}, std::move(w));
  ps.add(name + ".b", Shape{1, cout}, ArrX<S>::Zero(cout));
}

// 3x3 same-padded conv over {B*H*W, C} rows; stride 2 halves the grid.
template <class S>
Tensor<S> conv3(const ParamSet<S>& ps, const std::string& name, const Tensor<S>& x, int B, int H, int W,
                int stride = 1) {
  const int cin = x->shape[1];
  const int oh = (H + 2 - 3) / stride + 1;
  const int ow = (W + 2 - 3) / stride + 1;
  auto patches = num::gather(x, im2col_idx(B, H, W, cin, 3, stride, 1), Shape{B * oh * ow, cin * 9});
  auto y = num::matmul(patches, ps.at(name + ".w"));
  return num::add(y, num::broadcast_rows(ps.at(name + ".b"), y->shape[0]));
}

template <class S>
void init_embedding(ParamSet<S>& ps, const std::string& name, int rows, int dim, RngStream rng,
                    double scale = 1.0) {
  ArrX<S> w = num::randn_array<S>(std::int64_t(rows) * dim, rng) * static_cast<S>(scale);
  ps.add(name, Shape{rows, dim}, std::move(w));
}

// Row lookup; ids must already be mapped into table range.
template <class S>
Tensor<S> embed(const ParamSet<S>& ps, const std::string& name, const std::vector<int>& ids) {
  const auto& table = ps.at(name);
  const int rows = table->shape[0], dim = table->shape[1];
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(ids.size() * dim);
  for (int id : ids) {
    if (id < 0 || id >= rows) throw std::out_of_range("embed: id out of table range");
    for (int e = 0; e < dim; ++e) idx->push_back(std::int64_t(id) * dim + e);
  }
  return num::gather(table, idx, Shape{static_cast<int>(ids.size()), dim});
}

// sinusoidal features of integer timesteps, {B, dim}
template <class S>
Tensor<S> time_features(const std::vector<int>& ts, int dim) {
  const int half = dim / 2;
  ArrX<S> v(std::int64_t(ts.size()) * dim);
  for (size_t b = 0; b < ts.size(); ++b)
    for (int k = 0; k < half; ++k) {
      const double f = std::pow(10000.0, -double(k) / half);
      v[b * dim + 2 * k] = static_cast<S>(std::sin(ts[b] * f));
      v[b * dim + 2 * k + 1] = static_cast<S>(std::cos(ts[b] * f));
    }
  return num::from_array<S>(Shape{static_cast<int>(ts.size()), dim}, std::move(v));
}

// ---- differentiable image ops -------------------------------------------------

// Separable 5-tap gaussian blur with edge clamp; identity below sigma 0.05.
template <class S>
Tensor<S> gaussian_blur(const Tensor<S>& x, int B, int H, int W, double sigma) {
  if (sigma < 0.05) return x;
  const int C = x->shape[1];
  double w[5];
  double norm = 0;
  for (int k = -2; k <= 2; ++k) norm += (w[k + 2] = std::exp(-0.5 * k * k / (sigma * sigma)));
  for (double& wk : w) wk /= norm;
  auto pass = [&](const Tensor<S>& in, bool vertical) {
    Tensor<S> acc;
    for (int k = -2; k <= 2; ++k) {
      auto tap = num::gather(in, shift_idx(B, H, W, C, vertical ? k : 0, vertical ? 0 : k), in->shape);
      auto term = num::mul_scalar(tap, static_cast<S>(w[k + 2]));
      acc = acc ? num::add(acc, term) : term;
    }
    return acc;
  };
  return pass(pass(x, false), true);
}

// Non-leaking augmentation: per-sample brightness/contrast jitter and a small
// edge-clamped translation. Flips are deliberately absent (they would negate
// the pose azimuth the discriminator is conditioned on).
struct AugSample {
  bool apply = false;
  double brightness = 0;
  double contrast = 1;
  int dx = 0, dy = 0;
};

inline std::vector<AugSample> draw_augs(int B, double p, RngStream& rng) {
  std::vector<AugSample> out(B);
  for (auto& a : out) {
    const bool on = rng.uniform() < p;
    const double bright = rng.normal() * 0.15;
    const double contrast = std::exp(rng.normal() * 0.15);
    const int dx = rng.uniform_int(-3, 4);
    const int dy = rng.uniform_int(-3, 4);
    if (!on) continue;
    a.apply = true;
    a.brightness = bright;
    a.contrast = contrast;
    a.dx = dx;
    a.dy = dy;
  }
  return out;
}

template <class S>
Tensor<S> apply_augs(const Tensor<S>& x, int B, int H, int W, const std::vector<AugSample>& augs) {
  const int C = x->shape[1];
  const int hw = H * W;
  // per-sample affine as constant row tensors
  ArrX<S> mulv(std::int64_t(B) * hw * C), addv(std::int64_t(B) * hw * C);
  for (int b = 0; b < B; ++b) {
    const auto& a = augs[b];
    mulv.segment(std::int64_t(b) * hw * C, std::int64_t(hw) * C).setConstant(static_cast<S>(a.apply ? a.contrast : 1.0));
    addv.segment(std::int64_t(b) * hw * C, std::int64_t(hw) * C).setConstant(static_cast<S>(a.apply ? a.brightness : 0.0));
  }
  auto y = num::add(num::mul(x, num::from_array<S>(x->shape, std::move(mulv))),
                    num::from_array<S>(x->shape, std::move(addv)));
  // translation: one gather with a per-sample shift table (built fresh; the
  // shift pattern depends on the draw, so this index is not cached)
  auto idx = std::make_shared<std::vector<std::int64_t>>(std::int64_t(B) * hw * C);
  std::int64_t at = 0;
  for (int b = 0; b < B; ++b) {
    const auto& a = augs[b];
    for (int yy = 0; yy < H; ++yy)
      for (int xx = 0; xx < W; ++xx) {
        int sy = std::min(std::max(yy + (a.apply ? a.dy : 0), 0), H - 1);
        int sx = std::min(std::max(xx + (a.apply ? a.dx : 0), 0), W - 1);
        for (int c = 0; c < C; ++c)
          (*idx)[at++] = (std::int64_t(b) * hw + std::int64_t(sy) * W + sx) * C + c;
      }
  }
  return num::gather(y, idx, x->shape);
}

}  // namespace poseshift::nn
