#include "freetuner/autoencoder.hpp"

namespace ft {

Tensor encode(const Tensor& image) {
    check_arg(image.rank() == 3 && image.dim(0) == 3 && image.dim(1) % 2 == 0 && image.dim(2) % 2 == 0,
              "encode expects [3,evenH,evenW]");
    for (std::size_t i = 0; i < image.numel(); ++i)
        check_arg(image.at(i) >= 0.0 && image.at(i) <= 1.0, "encode expects pixels in [0,1]");
    return add_scalar(mul_scalar(space_to_depth2(image), 2.0), -1.0);
}

Tensor decode(const Tensor& latent) {
    check_arg(latent.rank() == 3 && latent.dim(0) == 12, "decode expects [12,h,w]");
    return depth_to_space2(mul_scalar(add_scalar(latent, 1.0), 0.5));
}

}  // namespace ft
