#include "freetuner/checkpoint.hpp"

#include "freetuner/errors.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace ft {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& o, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    o.write(b, 4);
}

void put_f64(std::ostream& o, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    o.write(b, 8);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("truncated checkpoint: " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& in, const std::string& path) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw IoError("truncated checkpoint: " + path);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(kMagic, 4);
    put_u32(f, kVersion);
    put_u32(f, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        check_arg(t.defined(), "cannot save undefined tensor \"" + name + "\"");
        put_u32(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(f, static_cast<std::uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) put_u32(f, static_cast<std::uint32_t>(t.dim(i)));
        for (std::size_t i = 0; i < t.numel(); ++i) put_f64(f, t.at(i));
    }
    if (!f) throw IoError("write failed: " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0) throw IoError("not a checkpoint file: " + path);
    const std::uint32_t version = get_u32(f, path);
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    const std::uint32_t count = get_u32(f, path);
    NamedTensors out;
    out.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::uint32_t name_len = get_u32(f, path);
        std::string name(name_len, '\0');
        f.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!f) throw IoError("truncated checkpoint: " + path);
        const std::uint32_t rank = get_u32(f, path);
        if (rank > 8) throw IoError("implausible tensor rank in checkpoint: " + path);
        Shape shape(rank);
        std::size_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const std::uint32_t e = get_u32(f, path);
            if (e == 0 || e > (1u << 24)) throw IoError("implausible tensor extent in checkpoint: " + path);
            shape[i] = static_cast<int>(e);
            numel *= e;
        }
        std::vector<double> data(numel);
        for (std::size_t i = 0; i < numel; ++i) data[i] = get_f64(f, path);
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return out;
}

const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name) {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw std::invalid_argument("tensor \"" + name + "\" not in checkpoint");
}

bool has_tensor(const NamedTensors& tensors, const std::string& name) {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

}  // namespace ft
