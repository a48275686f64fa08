#include "freetuner/extractor.hpp"

#include "freetuner/rng.hpp"

#include <cmath>

namespace ft {

namespace {

/// Orthonormalizes `rows` gaussian rows of length `cols` in place
/// (modified Gram-Schmidt), then scales by `gain`.
std::vector<double> orthogonal_rows(Rng& rng, int rows, int cols, double gain) {
    check_arg(rows <= cols, "cannot orthonormalize more rows than columns");
    std::vector<double> m(static_cast<std::size_t>(rows) * cols);
    for (auto& x : m) x = rng.normal();
    for (int i = 0; i < rows; ++i) {
        double* ri = m.data() + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < i; ++j) {
            const double* rj = m.data() + static_cast<std::size_t>(j) * cols;
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += ri[c] * rj[c];
            for (int c = 0; c < cols; ++c) ri[c] -= dot * rj[c];
        }
        double norm = 0.0;
        for (int c = 0; c < cols; ++c) norm += ri[c] * ri[c];
        norm = std::sqrt(norm);
        check_arg(norm > 1e-12, "degenerate draw during orthogonalization");
        for (int c = 0; c < cols; ++c) ri[c] /= norm;
    }
    for (auto& x : m) x *= gain;
    return m;
}

}  // namespace

PerceptualEncoder build_extractor(unsigned seed) {
    PerceptualEncoder enc;
    enc.seed_ = seed;
    Rng rng(seed);
    int c_in = 3;
    for (int s = 0; s < 4; ++s) {
        const int c_out = PerceptualEncoder::kChannels[static_cast<std::size_t>(s)];
        enc.w_[static_cast<std::size_t>(s)] =
            Tensor(Shape{c_out, c_in, 3, 3}, orthogonal_rows(rng, c_out, c_in * 9, std::sqrt(2.0)));
        std::vector<double> b(static_cast<std::size_t>(c_out));
        for (auto& x : b) x = 0.1 * rng.normal();
        enc.b_[static_cast<std::size_t>(s)] = Tensor(Shape{c_out}, std::move(b));
        c_in = c_out;
    }
    return enc;
}

std::vector<Tensor> PerceptualEncoder::features(const Tensor& img) const {
    check_arg(w_[0].defined(), "encoder not built");
    check_arg(img.rank() == 3 && img.dim(0) == 3, "expected a [3,H,W] image");
    check_arg(img.dim(1) % 8 == 0 && img.dim(2) % 8 == 0 && img.dim(1) >= 8 && img.dim(2) >= 8,
              "image sides must be divisible by 8");
    std::vector<Tensor> out;
    out.reserve(4);
    Tensor x = img;
    for (int s = 0; s < 4; ++s) {
        if (s > 0) x = avg_pool2(x);
        x = relu(conv2d_3x3(x, w_[static_cast<std::size_t>(s)], b_[static_cast<std::size_t>(s)]));
        out.push_back(x);
    }
    return out;
}

NamedTensors PerceptualEncoder::to_named() const {
    NamedTensors named;
    named.emplace_back("meta/seed", Tensor(Shape{1}, std::vector<double>{static_cast<double>(seed_)}));
    for (int s = 0; s < 4; ++s) {
        const std::string prefix = "stage" + std::to_string(s + 1);
        named.emplace_back(prefix + "/w", w_[static_cast<std::size_t>(s)]);
        named.emplace_back(prefix + "/b", b_[static_cast<std::size_t>(s)]);
    }
    return named;
}

void PerceptualEncoder::save(const std::string& path) const { save_checkpoint(path, to_named()); }

PerceptualEncoder PerceptualEncoder::load(const std::string& path) {
    NamedTensors named = load_checkpoint(path);
    PerceptualEncoder enc;
    enc.seed_ = static_cast<unsigned>(find_tensor(named, "meta/seed").at(0));
    int c_in = 3;
    for (int s = 0; s < 4; ++s) {
        const std::string prefix = "stage" + std::to_string(s + 1);
        const int c_out = kChannels[static_cast<std::size_t>(s)];
        const Tensor& w = find_tensor(named, prefix + "/w");
        const Tensor& b = find_tensor(named, prefix + "/b");
        check_arg(w.shape() == Shape{c_out, c_in, 3, 3} && b.shape() == Shape{c_out},
                  "malformed encoder checkpoint at " + prefix);
        enc.w_[static_cast<std::size_t>(s)] = w;
        enc.b_[static_cast<std::size_t>(s)] = b;
        c_in = c_out;
    }
    return enc;
}

}  // namespace ft
