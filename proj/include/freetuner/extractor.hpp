#pragma once

#include "freetuner/checkpoint.hpp"
#include "freetuner/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace ft {

/// Frozen multi-stage convolutional feature encoder: the perceptual layer
/// set behind the style/content losses. Four 3x3 conv + rectifier stages at
/// channel widths (16, 32, 64, 128), halving resolution between stages.
/// Weights are drawn once from the seed and never trained; random deep
/// features carry enough texture statistics for mean/variance style
/// matching at this scale.
class PerceptualEncoder {
public:
    static constexpr std::array<int, 4> kChannels = {16, 32, 64, 128};

    /// Stage outputs for img:[3,H,W] (H, W divisible by 8): stage i has
    /// shape [C_i, H/2^i-1, W/2^i-1]. Differentiable w.r.t. the input.
    std::vector<Tensor> features(const Tensor& img) const;

    unsigned seed() const { return seed_; }

    NamedTensors to_named() const;
    void save(const std::string& path) const;
    static PerceptualEncoder load(const std::string& path);

private:
    friend PerceptualEncoder build_extractor(unsigned seed);

    std::array<Tensor, 4> w_;  // [C_i, C_in, 3, 3]
    std::array<Tensor, 4> b_;  // [C_i]
    unsigned seed_ = 0;
};

/// Weight recipe (fixed draw order, reproducible from the seed alone): each
/// kernel, viewed as a [C_out, C_in*9] matrix, starts as standard-normal
/// rows, is orthonormalized (modified Gram-Schmidt) and scaled by sqrt(2),
/// the rectifier gain. Biases are N(0, 0.1). Row norms are therefore
/// exactly sqrt(2) and distinct rows are orthogonal.
PerceptualEncoder build_extractor(unsigned seed = 7);

}  // namespace ft
