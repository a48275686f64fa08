#include "freetuner/dataset.hpp"

#include "freetuner/image.hpp"
#include "freetuner/rng.hpp"

#include <array>
#include <cmath>

namespace ft {

namespace {

constexpr std::array<const char*, 4> kColors = {"red", "green", "blue", "yellow"};
constexpr std::array<const char*, 4> kShapes = {"circle", "square", "triangle", "star"};
constexpr std::array<const char*, 4> kTextures = {"plain", "stripes", "checker", "dots"};

struct Rgb {
    double r, g, b;
};

Rgb color_rgb(const std::string& name) {
    if (name == "red") return {0.90, 0.12, 0.12};
    if (name == "green") return {0.10, 0.75, 0.20};
    if (name == "blue") return {0.15, 0.25, 0.90};
    return {0.95, 0.85, 0.10};  // yellow
}

bool inside_shape(const std::string& shape, double px, double py, double cx, double cy, double r) {
    const double dx = px - cx, dy = py - cy;
    if (shape == "circle") return dx * dx + dy * dy <= r * r;
    if (shape == "square") return std::max(std::abs(dx), std::abs(dy)) <= 0.9 * r;
    if (shape == "triangle") {
        // Upward triangle: apex (cx, cy-r), base corners (cx +- 0.95r, cy + 0.8r).
        if (dy > 0.8 * r || dy < -r) return false;
        const double half = 0.95 * r * (dy + r) / (1.8 * r);  // width grows linearly from apex
        return std::abs(dx) <= half;
    }
    // Star: angular triangle-wave radius between an inner and outer radius,
    // five spikes. A rounded star, but plenty distinctive at 32x32.
    const double rho = std::sqrt(dx * dx + dy * dy);
    if (rho <= 0.35 * r) return true;
    double theta = std::atan2(dy, dx);
    double frac = theta * 5.0 / (2.0 * 3.14159265358979323846);
    frac -= std::floor(frac);
    const double spike = 1.0 - 2.0 * std::abs(frac - 0.5);  // 1 at spike center, 0 between
    return rho <= (0.35 + 0.65 * spike) * r;
}

}  // namespace

ToyDataset::ToyDataset(int image_size) : size_(image_size) {
    check_arg(image_size >= 16 && image_size % 2 == 0, "image size must be even and >= 16");
}

ToySample ToyDataset::render(const std::string& color, const std::string& shape,
                             const std::string& texture, std::uint64_t seed) const {
    Rng rng(seed);
    const int S = size_;
    const double cx = rng.uniform(S * 0.32, S * 0.68);
    const double cy = rng.uniform(S * 0.32, S * 0.68);
    const double r = rng.uniform(S * 0.16, S * 0.28);
    const int phase = static_cast<int>(rng.below(8));
    const double tint = rng.uniform(-0.04, 0.04);

    const double bg_lo = 0.62 + tint, bg_hi = 0.86 + tint;
    auto background = [&](int x, int y) -> double {
        if (texture == "stripes") return ((y + phase) / 2) % 2 == 0 ? bg_lo : bg_hi;
        if (texture == "checker") return (((x + phase) / 4) + ((y + phase) / 4)) % 2 == 0 ? bg_lo : bg_hi;
        if (texture == "dots") {
            const int gx = (x + phase) % 6 - 3, gy = (y + phase) % 6 - 3;
            return gx * gx + gy * gy <= 2 ? bg_lo : bg_hi;
        }
        return bg_hi;  // "plain" and the no-texture-clause case
    };

    const Rgb fg = color_rgb(color);
    const std::size_t plane = static_cast<std::size_t>(S) * S;
    std::vector<double> img(3 * plane);
    std::vector<double> mask(plane, 0.0);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * S + x;
            if (inside_shape(shape, x + 0.5, y + 0.5, cx, cy, r)) {
                mask[i] = 1.0;
                img[i] = fg.r;
                img[plane + i] = fg.g;
                img[2 * plane + i] = fg.b;
            } else {
                const double v = background(x, y);
                img[i] = v;
                img[plane + i] = v;
                img[2 * plane + i] = v;
            }
        }

    ToySample out;
    out.image = quantize_unit(Tensor(Shape{3, S, S}, std::move(img)));
    out.mask = Tensor(Shape{S, S}, std::move(mask));
    out.color = color;
    out.shape = shape;
    out.texture = texture;
    out.prompt = "a photo of a " + color + " " + shape;
    if (!texture.empty()) out.prompt += " with " + texture + " background";
    return out;
}

ToySample ToyDataset::sample(std::uint64_t seed) const {
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    const std::string color = kColors[rng.below(kColors.size())];
    const std::string shape = kShapes[rng.below(kShapes.size())];
    const bool with_texture = rng.uniform() < 0.5;
    const std::string texture = with_texture ? kTextures[rng.below(kTextures.size())] : "";
    return render(color, shape, texture, seed);
}

}  // namespace ft
