#pragma once
// Small convolutional U-shaped noise predictor on 32x32 images. Conditioning
// (sinusoidal time features plus a label embedding, with a reserved row for
// the unconditional token) enters through a shared trunk and per-block
// projections added to each feature map. An optional fourth input channel
// carries a depth map.
#include "poseshift/diffusion/predictor.hpp"
#include "poseshift/nn/layers.hpp"
#include "poseshift/numcore/paramset.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace poseshift::diff {

using num::ParamSet;
using num::RngStream;
using num::Shape;

struct DenoiserConfig {
  int img = 32;        // square input side, must be divisible by 4
  int channels = 3;    // image channels (depth channel is extra)
  int base = 16;       // feature width at full resolution
  bool depth_input = false;
  int vocab = 9;       // valid class ids are 0..vocab-1
  int emb_dim = 16;
  int time_dim = 16;
  int cond_dim = 48;
};

template <class S>
class Denoiser : public NoisePredictor<S> {
 public:
  DenoiserConfig cfg;
  ParamSet<S> params;

  // verification_init avoids the zero-filled output block so finite-difference
  // probes exercise every weight; normal training starts from a zero output
  // conv so the initial prediction is exactly zero noise.
  Denoiser(const DenoiserConfig& c, RngStream rng, const std::string& name = "sd",
           bool verification_init = false)
      : cfg(c), name_(name) {
    if (cfg.img % 4 != 0) throw std::invalid_argument("Denoiser: img must be divisible by 4");
    const int b = cfg.base;
    nn::init_conv3(params, "enc1", cfg.channels, b, rng.split("enc1"));
    // the depth pathway is a separate additive conv so a zero-weight depth
    // branch leaves the image pathway arithmetic untouched
    if (cfg.depth_input) {
      RngStream drng = rng.split("enc1d");
      num::ArrX<S> dw = num::ArrX<S>::Zero(9 * b);
      if (verification_init)
        dw = num::randn_array<S>(9 * b, drng) * static_cast<S>(std::sqrt(2.0 / 9.0));
      params.add("enc1d.w", Shape{9, b}, std::move(dw));
    }
    nn::init_conv3(params, "down1", b, 2 * b, rng.split("down1"));
    nn::init_conv3(params, "down2", 2 * b, 4 * b, rng.split("down2"));
    nn::init_conv3(params, "mid", 4 * b, 4 * b, rng.split("mid"));
    nn::init_conv3(params, "up1", 6 * b, 2 * b, rng.split("up1"));
    nn::init_conv3(params, "up2", 3 * b, b, rng.split("up2"));
    nn::init_conv3(params, "out", b, cfg.channels, rng.split("out"),
                   verification_init ? 1.0 : 0.0);
    nn::init_embedding(params, "label_emb", cfg.vocab + 1, cfg.emb_dim, rng.split("emb"), 0.5);
    nn::init_dense(params, "cond.trunk", cfg.time_dim + cfg.emb_dim, cfg.cond_dim, rng.split("trunk"));
    nn::init_dense(params, "cond.enc1", cfg.cond_dim, b, rng.split("c.enc1"));
    nn::init_dense(params, "cond.down1", cfg.cond_dim, 2 * b, rng.split("c.down1"));
    nn::init_dense(params, "cond.down2", cfg.cond_dim, 4 * b, rng.split("c.down2"));
    nn::init_dense(params, "cond.mid", cfg.cond_dim, 4 * b, rng.split("c.mid"));
    nn::init_dense(params, "cond.up1", cfg.cond_dim, 2 * b, rng.split("c.up1"));
    nn::init_dense(params, "cond.up2", cfg.cond_dim, b, rng.split("c.up2"));
  }

  bool wants_depth() const override { return cfg.depth_input; }
  std::string id() const override { return name_; }
  void set_id(const std::string& name) { name_ = name; }

  Tensor<S> predict(const Tensor<S>& q, const std::vector<int>& labels, const std::vector<int>& ts,
                    const Tensor<S>* depth) const override {
    const int B = q->shape.at(0);
    const int H = cfg.img, W = cfg.img;
    if (q->shape != Shape{B, cfg.channels, H, W})
      throw std::invalid_argument("Denoiser: bad input shape " + num::shape_str(q->shape));
    if (static_cast<int>(labels.size()) != B || static_cast<int>(ts.size()) != B)
      throw std::invalid_argument("Denoiser: labels/ts size mismatch");
    if (cfg.depth_input != (depth != nullptr))
      throw std::invalid_argument("Denoiser: depth argument incompatible with model");

    auto x = nn::chw_to_rows(q, B, cfg.channels, H, W);
    if (depth && (*depth)->shape != Shape{B, 1, H, W})
      throw std::invalid_argument("Denoiser: bad depth shape");

    std::vector<int> rows(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= cfg.vocab) throw std::out_of_range("Denoiser: label outside vocabulary");
      rows[i] = labels[i] < 0 ? cfg.vocab : labels[i];
    }
    auto cond = num::silu(nn::dense(
        params, "cond.trunk",
        num::concat_cols(nn::time_features<S>(ts, cfg.time_dim), nn::embed(params, "label_emb", rows))));

    auto block = [&](const char* conv, const char* proj, const Tensor<S>& in, int h, int w,
                     int stride) {
      auto y = nn::conv3(params, conv, in, B, h, w, stride);
      return num::silu(num::add(y, nn::repeat_rows(nn::dense(params, proj, cond), y->shape[0] / B)));
    };

    auto e1_pre = nn::conv3(params, "enc1", x, B, H, W, 1);
    if (depth) {
      auto drows = nn::chw_to_rows(*depth, B, 1, H, W);
      auto patches = num::gather(drows, nn::im2col_idx(B, H, W, 1, 3, 1, 1), Shape{B * H * W, 9});
      e1_pre = num::add(e1_pre, num::matmul(patches, params.at("enc1d.w")));
    }
    auto e1 = num::silu(num::add(
        e1_pre, nn::repeat_rows(nn::dense(params, "cond.enc1", cond), e1_pre->shape[0] / B)));
    auto d1 = block("down1", "cond.down1", e1, H, W, 2);           // {B*H/2*W/2, 2b}
    auto d2 = block("down2", "cond.down2", d1, H / 2, W / 2, 2);   // {B*H/4*W/4, 4b}
    auto m = block("mid", "cond.mid", d2, H / 4, W / 4, 1);
    auto u1 = block("up1", "cond.up1", num::concat_cols(nn::upsample2(m, B, H / 4, W / 4), d1),
                    H / 2, W / 2, 1);
    auto u2 = block("up2", "cond.up2", num::concat_cols(nn::upsample2(u1, B, H / 2, W / 2), e1), H, W, 1);
    auto out = nn::conv3(params, "out", u2, B, H, W, 1);
    return nn::rows_to_chw(out, B, cfg.channels, H, W);
  }

 private:
  std::string name_;
};

// Depth-conditioned copy of a trained plain model: every weight is carried
// over and the additive depth conv starts at zero, so the first forward pass
// matches the donor bitwise.
template <class S>
Denoiser<S> make_depth_variant(const Denoiser<S>& donor, const std::string& name) {
  if (donor.cfg.depth_input) throw std::invalid_argument("make_depth_variant: donor already depth-conditioned");
  DenoiserConfig c = donor.cfg;
  c.depth_input = true;
  Denoiser<S> d(c, RngStream::root(0), name);
  for (const auto& [key, p] : donor.params.items) d.params.at(key)->value = p.value->value;
  return d;
}

}  // namespace poseshift::diff
