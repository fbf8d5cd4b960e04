#pragma once
// Interface every noise model implements. Samplers and score distillation only
// see this surface, so tests can swap in analytic mocks.
#include "poseshift/numcore/tensor.hpp"

#include <string>
#include <vector>

namespace poseshift::diff {

using num::Tensor;

// class label carried through guided sampling; negative means unconditional
struct Condition {
  int label = -1;
  Condition() = default;
  explicit Condition(int l) : label(l) {}
  bool is_null() const { return label < 0; }
};

template <class S>
struct NoisePredictor {
  virtual ~NoisePredictor() = default;
  // q {B,C,H,W}; labels per sample, negative = unconditional; ts per sample;
  // depth {B,1,H,W} required iff wants_depth()
  virtual Tensor<S> predict(const Tensor<S>& q, const std::vector<int>& labels,
                            const std::vector<int>& ts, const Tensor<S>* depth) const = 0;
  virtual bool wants_depth() const = 0;
  virtual std::string id() const = 0;
};

// Pixel-space stand-in for a latent autoencoder; both directions are exact
// identities but every sampler still routes through encode/decode.
template <class S>
struct LatentCodec {
  Tensor<S> encode(const Tensor<S>& x) const { return x; }
  Tensor<S> decode(const Tensor<S>& q) const { return q; }
};

}  // namespace poseshift::diff
