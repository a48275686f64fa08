#pragma once

#include "freetuner/tensor.hpp"

#include <string>

namespace ft {

/// Pixel values are kept on the dyadic grid k/4096 (k = 0..4096) everywhere
/// images enter the system. On that grid the latent affine map 2x-1 and its
/// inverse are bit-exact in f64, which is what makes decode(encode(x)) == x
/// an equality rather than a tolerance. The grid is fine enough that 8-bit
/// PPM round-trips are still byte-exact (|k/255 - round| <= 2^-13 < 1/510).
inline constexpr double kPixelGrid = 4096.0;

/// Clamps to [0,1] and snaps to the pixel grid.
Tensor quantize_unit(const Tensor& img);
double quantize_unit(double v);

/// P6 binary PPM, 8-bit. img:[3,H,W] in [0,1]; values are clamped+rounded.
void save_ppm(const std::string& path, const Tensor& img);
/// Grayscale [H,W] written as P6 with equal channels.
void save_ppm_gray(const std::string& path, const Tensor& img);
/// Loads P6 (or single-channel P5) into [3,H,W] on the pixel grid.
Tensor load_ppm(const std::string& path);

/// Loads an image and thresholds its gray value at 0.5 into a {0,1} mask [H,W].
Tensor load_mask(const std::string& path);

/// Mean over channels: [3,H,W] -> [H,W].
Tensor to_gray(const Tensor& img);

}  // namespace ft
