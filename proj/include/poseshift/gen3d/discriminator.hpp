#pragma once
// Pose-conditioned discriminator: the image is concatenated with two constant
// channels holding the camera encoding, then passed through strided convs and
// a dense head. The final layer starts at zero so an untrained critic scores
// everything 0, which keeps early adversarial updates small.
#include "poseshift/gen3d/camera.hpp"
#include "poseshift/nn/layers.hpp"
#include "poseshift/numcore/ops.hpp"
#include "poseshift/numcore/paramset.hpp"

#include <stdexcept>
#include <vector>

namespace poseshift::g3 {

using num::ArrX;
using num::ParamSet;
using num::RngStream;
using num::Shape;
using num::Tensor;

template <class S>
struct Discriminator {
  int img = 32;
  int base = 16;
  ParamSet<S> params;

  Discriminator(int img_side, RngStream rng, bool verification_init = false) : img(img_side) {
    if (img % 8 != 0) throw std::invalid_argument("Discriminator: img must be divisible by 8");
    nn::init_conv3(params, "c1", 5, base, rng.split("c1"));
    nn::init_conv3(params, "c2", base, 2 * base, rng.split("c2"));
    nn::init_conv3(params, "c3", 2 * base, 4 * base, rng.split("c3"));
    const int flat = (img / 8) * (img / 8) * 4 * base;
    nn::init_dense(params, "d1", flat, 4 * base, rng.split("d1"));
    nn::init_dense(params, "d2", 4 * base, 1, rng.split("d2"), verification_init ? 1.0 : 0.0);
  }
};

// images {B,3,img,img} with one pose per sample -> scores {B,1}
template <class S>
Tensor<S> discriminate(const Discriminator<S>& D, const Tensor<S>& images,
                       const std::vector<CameraPose>& poses) {
  const int B = static_cast<int>(poses.size());
  const int H = D.img, W = D.img;
  if (images->shape != Shape{B, 3, H, W})
    throw std::invalid_argument("discriminate: images must be {B,3,img,img}");
  auto x = nn::chw_to_rows(images, B, 3, H, W);
  ArrX<S> posechan(static_cast<std::int64_t>(B) * H * W * 2);
  for (int b = 0; b < B; ++b) {
    const auto e = encode(poses[static_cast<size_t>(b)]);
    for (int p = 0; p < H * W; ++p) {
      posechan[(std::int64_t(b) * H * W + p) * 2] = static_cast<S>(e[0]);
      posechan[(std::int64_t(b) * H * W + p) * 2 + 1] = static_cast<S>(e[1]);
    }
  }
  x = num::concat_cols(x, num::from_array<S>(Shape{B * H * W, 2}, std::move(posechan)));
  x = num::silu(nn::conv3(D.params, "c1", x, B, H, W, 2));
  x = num::silu(nn::conv3(D.params, "c2", x, B, H / 2, W / 2, 2));
  x = num::silu(nn::conv3(D.params, "c3", x, B, H / 4, W / 4, 2));
  x = num::reshape(x, Shape{B, (H / 8) * (W / 8) * 4 * D.base});
  x = num::silu(nn::dense(D.params, "d1", x));
  return nn::dense(D.params, "d2", x);
}

// single-image convenience returning a scalar-shaped score {1,1}
template <class S>
Tensor<S> discriminate(const Discriminator<S>& D, const Tensor<S>& image, const CameraPose& c) {
  if (image->shape != Shape{3, D.img, D.img})
    throw std::invalid_argument("discriminate: image must be {3,img,img}");
  auto batched = num::reshape(image, Shape{1, 3, D.img, D.img});
  return discriminate(D, batched, std::vector<CameraPose>{c});
}

}  // namespace poseshift::g3
