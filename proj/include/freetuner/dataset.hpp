#pragma once

#include "freetuner/tensor.hpp"

#include <cstdint>
#include <string>

namespace ft {

struct ToySample {
    Tensor image;        // [3,S,S] on the pixel grid
    Tensor mask;         // [S,S] ground-truth subject region, {0,1}
    std::string prompt;  // "a photo of a <color> <shape>" (+ " with <texture> background")
    std::string color, shape, texture;  // texture empty when the clause is absent
};

/// Procedural shapes-on-textured-background generator. Identical seed gives
/// an identical sample; the subject's true region ships with each sample so
/// attention-localization properties can be measured without segmentation.
class ToyDataset {
public:
    explicit ToyDataset(int image_size = 32);

    ToySample sample(std::uint64_t seed) const;

    /// Fixed attribute combination; geometry/texture phase still drawn from
    /// seed. texture "" renders the plain light background and the short
    /// prompt form.
    ToySample render(const std::string& color, const std::string& shape,
                     const std::string& texture, std::uint64_t seed) const;

    int image_size() const { return size_; }

private:
    int size_;
};

}  // namespace ft
