#pragma once

#include "freetuner/tensor.hpp"

namespace ft {

/// Lossless pixel<->latent mapping: 2x2 space-to-depth then the affine map
/// l = 2x - 1. On pixel-grid inputs (see image.hpp) the round trip is
/// bit-exact; decode is differentiable and accepts out-of-range latents
/// (predicted x0 during guidance is not clamped).
Tensor encode(const Tensor& image);  // [3,H,W] -> [12,H/2,W/2], H,W even
Tensor decode(const Tensor& latent);  // [12,h,w] -> [3,2h,2w]

}  // namespace ft
