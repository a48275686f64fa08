#include "freetuner/image.hpp"

#include "freetuner/errors.hpp"

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

namespace ft {

double quantize_unit(double v) {
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    return std::round(v * kPixelGrid) / kPixelGrid;
}

Tensor quantize_unit(const Tensor& img) {
    std::vector<double> out(img.numel());
    for (std::size_t i = 0; i < img.numel(); ++i) out[i] = quantize_unit(img.at(i));
    return Tensor(img.shape(), std::move(out));
}

namespace {

std::uint8_t to_byte(double v) {
    double s = std::round(v * 255.0);
    if (s < 0.0) s = 0.0;
    if (s > 255.0) s = 255.0;
    return static_cast<std::uint8_t>(s);
}

void write_p6(const std::string& path, const Tensor& img) {
    const int H = img.dim(1), W = img.dim(2);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "P6\n" << W << " " << H << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(W) * 3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] =
                    to_byte(img.at(static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * W + x));
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IoError("write failed: " + path);
}

// PPM headers allow comments and arbitrary whitespace between fields.
int read_header_int(std::istream& in, const std::string& path) {
    int ch = in.peek();
    while (ch == '#' || std::isspace(ch)) {
        if (ch == '#') in.ignore(1 << 20, '\n');
        else in.get();
        ch = in.peek();
    }
    int v = -1;
    if (!(in >> v)) throw IoError("malformed PPM header: " + path);
    return v;
}

}  // namespace

void save_ppm(const std::string& path, const Tensor& img) {
    check_arg(img.rank() == 3 && img.dim(0) == 3, "save_ppm expects [3,H,W]");
    write_p6(path, img);
}

void save_ppm_gray(const std::string& path, const Tensor& img) {
    check_arg(img.rank() == 2, "save_ppm_gray expects [H,W]");
    const int H = img.dim(0), W = img.dim(1);
    std::vector<double> rgb(static_cast<std::size_t>(3) * H * W);
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < static_cast<std::size_t>(H) * W; ++i)
            rgb[static_cast<std::size_t>(c) * H * W + i] = img.at(i);
    write_p6(path, Tensor(Shape{3, H, W}, std::move(rgb)));
}

Tensor load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string magic;
    f >> magic;
    if (magic != "P6" && magic != "P5") throw IoError("unsupported PPM magic \"" + magic + "\": " + path);
    const int W = read_header_int(f, path);
    const int H = read_header_int(f, path);
    const int maxval = read_header_int(f, path);
    if (W <= 0 || H <= 0 || maxval != 255) throw IoError("unsupported PPM geometry/depth: " + path);
    f.get();  // single whitespace after maxval
    const int chans = magic == "P6" ? 3 : 1;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(W) * H * chans);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (f.gcount() != static_cast<std::streamsize>(raw.size())) throw IoError("truncated PPM: " + path);

    const std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<double> img(3 * plane);
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c) {
            const std::uint8_t byte = raw[i * chans + static_cast<std::size_t>(chans == 3 ? c : 0)];
            img[static_cast<std::size_t>(c) * plane + i] = quantize_unit(byte / 255.0);
        }
    return Tensor(Shape{3, H, W}, std::move(img));
}

Tensor to_gray(const Tensor& img) {
    check_arg(img.rank() == 3 && img.dim(0) == 3, "to_gray expects [3,H,W]");
    const std::size_t plane = img.numel() / 3;
    std::vector<double> g(plane);
    for (std::size_t i = 0; i < plane; ++i)
        g[i] = (img.at(i) + img.at(plane + i) + img.at(2 * plane + i)) / 3.0;
    return Tensor(Shape{img.dim(1), img.dim(2)}, std::move(g));
}

Tensor load_mask(const std::string& path) {
    Tensor gray = to_gray(load_ppm(path));
    std::vector<double> m(gray.numel());
    for (std::size_t i = 0; i < gray.numel(); ++i) m[i] = gray.at(i) > 0.5 ? 1.0 : 0.0;
    return Tensor(gray.shape(), std::move(m));
}

}  // namespace ft
